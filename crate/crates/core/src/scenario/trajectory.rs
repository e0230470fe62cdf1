//! Constant-speed ground-truth trajectories.

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::types::Point3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryGenerator {
    Static {
        position: Point3,
    },
    /// Closed loop around an axis-aligned rectangle, counter-clockwise from
    /// `origin`. Wraps around when the run outlasts one lap.
    Rectangle {
        origin: Point3,
        width: f64,
        height: f64,
        speed: f64,
    },
    /// Open polyline; the tag stops at the last waypoint.
    Waypoints {
        points: Vec<Point3>,
        speed: f64,
    },
}

impl TrajectoryGenerator {
    /// Perimeter of a 28 m x 15 m court at `speed` m/s.
    pub fn court(speed: f64) -> Self {
        Self::Rectangle { origin: Point3::ORIGIN, width: 28.0, height: 15.0, speed }
    }

    fn polyline(&self) -> (Vec<Point3>, bool) {
        match self {
            Self::Static { position } => (vec![*position], false),
            Self::Rectangle { origin, width, height, .. } => {
                let o = *origin;
                let corners = vec![
                    o,
                    o + Point3::new(*width, 0.0, 0.0),
                    o + Point3::new(*width, *height, 0.0),
                    o + Point3::new(0.0, *height, 0.0),
                    o,
                ];
                (corners, true)
            }
            Self::Waypoints { points, .. } => (points.clone(), false),
        }
    }

    pub fn path_length(&self) -> f64 {
        let (pts, _) = self.polyline();
        pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Epochs needed to traverse the path once.
    pub fn epochs_per_lap(&self, dt: f64) -> Option<usize> {
        match self {
            Self::Static { .. } => None,
            Self::Rectangle { speed, .. } | Self::Waypoints { speed, .. } => {
                Some((self.path_length() / (speed * dt)).round() as usize)
            }
        }
    }

    /// Samples the path at `t = k * dt` for `k in 0..epochs`.
    pub fn generate(&self, epochs: usize, dt: f64) -> Result<Vec<Point3>, ScenarioError> {
        if !(dt > 0.0) {
            return Err(ScenarioError::Config(format!("dt must be > 0, got {dt}")));
        }
        let speed = match self {
            Self::Static { position } => return Ok(vec![*position; epochs]),
            Self::Rectangle { speed, .. } | Self::Waypoints { speed, .. } => *speed,
        };
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(ScenarioError::Config(format!("trajectory speed must be > 0, got {speed}")));
        }
        let (pts, closed) = self.polyline();
        if pts.iter().any(|p| !p.is_finite()) {
            return Err(ScenarioError::Config("non-finite trajectory point".into()));
        }
        let cumulative: Vec<f64> = std::iter::once(0.0)
            .chain(pts.windows(2).scan(0.0, |acc, w| {
                *acc += (w[1] - w[0]).norm();
                Some(*acc)
            }))
            .collect();
        let total = *cumulative.last().unwrap_or(&0.0);
        if !(total > 0.0) {
            return Err(ScenarioError::Config("trajectory path has zero length".into()));
        }

        let at = |s: f64| -> Point3 {
            let s = if closed { s.rem_euclid(total) } else { s.min(total) };
            let seg = cumulative.partition_point(|&c| c <= s).clamp(1, pts.len() - 1);
            let (c0, c1) = (cumulative[seg - 1], cumulative[seg]);
            let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
            pts[seg - 1].lerp(&pts[seg], t)
        };
        Ok((0..epochs).map(|k| at(k as f64 * speed * dt)).collect())
    }
}

/// Direction of travel at each sample: forward difference, backward at the
/// end. A stationary sample has zero heading.
pub fn headings(points: &[Point3]) -> Vec<Point3> {
    let n = points.len();
    (0..n)
        .map(|k| match (k + 1 < n, k > 0) {
            (true, _) => points[k + 1] - points[k],
            (false, true) => points[k] - points[k - 1],
            _ => Point3::ORIGIN,
        })
        .collect()
}
