//! Shared domain types: positions, devices, propagation labels and the
//! speed-of-light conversion used by every other module.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, meters per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("time of flight must be non-negative, got {0} s")]
    NegativeTime(f64),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
}

/// A position in meters in the right-handed, z-up world frame.
/// 2D scenarios keep `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn xy(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Component `i` (0 = x, 1 = y, 2 = z).
    pub fn component(&self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("Point3 has no component {i}"),
        }
    }

    /// Planar distance, ignoring z.
    pub fn distance_2d(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Linear interpolation, `t = 0` gives `self`.
    pub fn lerp(&self, other: &Point3, t: f64) -> Point3 {
        *self + (*other - *self) * t
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Static reference device at a surveyed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub id: u32,
    pub position: Point3,
}

impl Anchor {
    pub fn new(id: u32, position: Point3) -> Self {
        Self { id, position }
    }
}

/// A ground-truth trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPoint {
    pub t: f64,
    pub position: Point3,
}

/// Mobile device with its ground-truth trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tag {
    pub id: u32,
    pub trajectory: Vec<TimedPoint>,
}

impl Tag {
    /// Builds a tag, rejecting trajectories whose timestamps do not strictly increase.
    pub fn new(id: u32, trajectory: Vec<TimedPoint>) -> Option<Self> {
        let increasing = trajectory.windows(2).all(|w| w[1].t > w[0].t);
        increasing.then_some(Self { id, trajectory })
    }

    /// Builds a tag sampled at `t = k * dt`.
    pub fn from_samples(id: u32, points: &[Point3], dt: f64) -> Self {
        let trajectory =
            points.iter().enumerate().map(|(k, &position)| TimedPoint { t: k as f64 * dt, position }).collect();
        Self { id, trajectory }
    }

    pub fn position_at(&self, epoch: usize) -> Option<Point3> {
        self.trajectory.get(epoch).map(|s| s.position)
    }
}

/// Propagation condition of a single range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PropagationCondition {
    Los,
    Nlos,
    Mp,
}

impl PropagationCondition {
    pub const ALL: [PropagationCondition; 3] = [Self::Los, Self::Nlos, Self::Mp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Los => "LOS",
            Self::Nlos => "NLOS",
            Self::Mp => "MP",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Self::Los => 0,
            Self::Nlos => 1,
            Self::Mp => 2,
        }
    }
}

impl fmt::Display for PropagationCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PropagationCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LOS" => Ok(Self::Los),
            "NLOS" => Ok(Self::Nlos),
            "MP" => Ok(Self::Mp),
            other => Err(format!("unknown propagation condition {other:?}")),
        }
    }
}

/// Physical constants bundle. Immutable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub c: f64,
}

impl PhysicalConstants {
    pub const DEFAULT: PhysicalConstants = PhysicalConstants { c: SPEED_OF_LIGHT };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Euclidean distance in meters.
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    (*a - *b).norm()
}

/// Converts a time of flight to meters.
pub fn tof_to_distance(t: f64) -> Result<f64, DomainError> {
    if t < 0.0 || t.is_nan() {
        return Err(DomainError::NegativeTime(t));
    }
    Ok(t * SPEED_OF_LIGHT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&Point3::ORIGIN, &Point3::ORIGIN), 0.0);
        assert_eq!(distance(&Point3::ORIGIN, &Point3::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(distance(&Point3::new(1.0, 2.0, 3.0), &Point3::new(4.0, 6.0, 15.0)), 13.0);
    }

    #[test]
    fn tof_examples() {
        assert_eq!(tof_to_distance(0.0).unwrap(), 0.0);
        assert_relative_eq!(tof_to_distance(1e-9).unwrap(), 0.299792458, max_relative = 1e-12);
        assert_relative_eq!(tof_to_distance(100e-9).unwrap(), 29.9792458, max_relative = 1e-12);
        assert_eq!(tof_to_distance(-1e-9), Err(DomainError::NegativeTime(-1e-9)));
    }

    #[test]
    fn tag_rejects_non_increasing_trajectory() {
        let p = Point3::ORIGIN;
        let ok = vec![TimedPoint { t: 0.0, position: p }, TimedPoint { t: 0.1, position: p }];
        assert!(Tag::new(1, ok).is_some());
        let bad = vec![TimedPoint { t: 0.1, position: p }, TimedPoint { t: 0.1, position: p }];
        assert!(Tag::new(1, bad).is_none());
    }

    #[test]
    fn condition_parses_case_insensitive() {
        assert_eq!("nlos".parse::<PropagationCondition>().unwrap(), PropagationCondition::Nlos);
        assert!("foo".parse::<PropagationCondition>().is_err());
    }

    fn point() -> impl Strategy<Value = Point3> {
        (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in point(), b in point(), c in point()) {
            let ab = distance(&a, &b);
            prop_assert_eq!(ab, distance(&b, &a));
            prop_assert!(ab >= 0.0);
            prop_assert!(distance(&a, &c) <= ab + distance(&b, &c) + 1e-9);
            prop_assert_eq!(distance(&a, &a), 0.0);
        }

        #[test]
        fn tof_conversion_is_linear(a in 0.0..1e-6f64, b in 0.0..1e-6f64) {
            let sum = tof_to_distance(a + b).unwrap();
            let parts = tof_to_distance(a).unwrap() + tof_to_distance(b).unwrap();
            prop_assert!((sum - parts).abs() <= 4.0 * f64::EPSILON * sum.max(1.0));
        }
    }
}
