//! Radio channel: true time of flight plus condition-dependent range errors.
//!
//! Line-of-sight ranges get zero-mean Gaussian noise. NLOS and multipath
//! ranges additionally get a positive bias drawn from a Gaussian truncated
//! at zero. Both non-direct classes share the same model shape and differ
//! only in their parameters; the model makes no claim about how real NLOS
//! and multipath errors separate.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::types::{distance, Anchor, Point3, PropagationCondition, SPEED_OF_LIGHT};

/// Range error model. All lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub los_sigma: f64,
    pub nlos_bias_mean: f64,
    pub nlos_bias_sigma: f64,
    pub mp_bias_mean: f64,
    pub mp_bias_sigma: f64,
    pub rng_seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            los_sigma: 0.05,
            nlos_bias_mean: 0.6,
            nlos_bias_sigma: 0.2,
            mp_bias_mean: 0.3,
            mp_bias_sigma: 0.2,
            rng_seed: 0,
        }
    }
}

impl ChannelModel {
    /// A channel that returns true ranges unchanged.
    pub fn noiseless() -> Self {
        Self {
            los_sigma: 0.0,
            nlos_bias_mean: 0.0,
            nlos_bias_sigma: 0.0,
            mp_bias_mean: 0.0,
            mp_bias_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ("los_sigma", self.los_sigma),
            ("nlos_bias_mean", self.nlos_bias_mean),
            ("nlos_bias_sigma", self.nlos_bias_sigma),
            ("mp_bias_mean", self.mp_bias_mean),
            ("mp_bias_sigma", self.mp_bias_sigma),
        ];
        for (name, v) in checks {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("channel.{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    fn bias_params(&self, cond: PropagationCondition) -> Option<(f64, f64)> {
        match cond {
            PropagationCondition::Los => None,
            PropagationCondition::Nlos => Some((self.nlos_bias_mean, self.nlos_bias_sigma)),
            PropagationCondition::Mp => Some((self.mp_bias_mean, self.mp_bias_sigma)),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma).expect("sigma validated non-negative").sample(rng)
}

/// Line-of-sight time of flight between two points, in seconds.
pub fn true_tof(a: &Point3, b: &Point3) -> f64 {
    distance(a, b) / SPEED_OF_LIGHT
}

/// Corrupts a true range according to its propagation condition.
///
/// Draw order is fixed (bias first, then LOS noise) so a seeded generator
/// yields the same sequence on every run.
pub fn corrupt_range<R: Rng + ?Sized>(
    d_true: f64,
    cond: PropagationCondition,
    model: &ChannelModel,
    rng: &mut R,
) -> f64 {
    let bias = model.bias_params(cond).map(|(mean, sigma)| gaussian(rng, mean, sigma).max(0.0)).unwrap_or(0.0);
    let noise = gaussian(rng, 0.0, model.los_sigma);
    (d_true + bias + noise).max(0.0)
}

/// One explicit (tag, anchor, epoch) condition assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tag: u32,
    pub anchor: u32,
    pub epoch: usize,
    pub condition: PropagationCondition,
}

/// Body-shadowing rule: anchors lying behind the tag's direction of travel
/// are blocked by the carrier's body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowingRule {
    /// An anchor is a shadowing candidate when the angle between the heading
    /// and the tag-to-anchor direction exceeds this many degrees.
    pub min_angle_deg: f64,
    /// At most this many of the most-behind anchors are shadowed.
    pub max_anchors: usize,
    pub condition: PropagationCondition,
}

impl Default for ShadowingRule {
    fn default() -> Self {
        Self { min_angle_deg: 110.0, max_anchors: 2, condition: PropagationCondition::Nlos }
    }
}

impl ShadowingRule {
    /// Ids of shadowed anchors, most-behind first. A zero heading shadows nothing.
    pub fn shadowed_anchors(&self, tag: &Point3, heading: &Point3, anchors: &[Anchor]) -> Vec<u32> {
        let h = heading.norm();
        if h == 0.0 {
            return Vec::new();
        }
        let cos_limit = self.min_angle_deg.to_radians().cos();
        let mut behind: Vec<(f64, u32)> = anchors
            .iter()
            .filter_map(|a| {
                let to_anchor = a.position - *tag;
                let r = to_anchor.norm();
                if r == 0.0 {
                    return None;
                }
                let cos = to_anchor.dot(heading) / (r * h);
                (cos < cos_limit).then_some((cos, a.id))
            })
            .collect();
        behind.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        behind.into_iter().take(self.max_anchors).map(|(_, id)| id).collect()
    }
}

/// Maps (tag, anchor, epoch) to a propagation condition. Explicit entries
/// take precedence, then the shadowing rule, then `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionSchedule {
    pub default: PropagationCondition,
    pub entries: Vec<ScheduleEntry>,
    pub shadowing: Option<ShadowingRule>,
}

impl Default for ConditionSchedule {
    fn default() -> Self {
        Self { default: PropagationCondition::Los, entries: Vec::new(), shadowing: None }
    }
}

impl ConditionSchedule {
    pub fn all_los() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, tag: u32, anchor: u32, epoch: usize, condition: PropagationCondition) -> Self {
        self.entries.push(ScheduleEntry { tag, anchor, epoch, condition });
        self
    }

    /// Condition from explicit entries or the default. The shadowing rule is
    /// geometric and resolved by [`ScheduleLookup::resolve`].
    pub fn condition(&self, tag: u32, anchor: u32, epoch: usize) -> PropagationCondition {
        self.entries
            .iter()
            .rev()
            .find(|e| e.tag == tag && e.anchor == anchor && e.epoch == epoch)
            .map(|e| e.condition)
            .unwrap_or(self.default)
    }

    pub fn lookup(&self) -> ScheduleLookup<'_> {
        let explicit = self.entries.iter().map(|e| ((e.tag, e.anchor, e.epoch), e.condition)).collect();
        ScheduleLookup { schedule: self, explicit }
    }
}

/// Hash-indexed view of a [`ConditionSchedule`] for per-epoch queries.
pub struct ScheduleLookup<'a> {
    schedule: &'a ConditionSchedule,
    explicit: HashMap<(u32, u32, usize), PropagationCondition>,
}

impl ScheduleLookup<'_> {
    pub fn resolve(&self, tag: u32, anchor: u32, epoch: usize, shadowed: bool) -> PropagationCondition {
        if let Some(&c) = self.explicit.get(&(tag, anchor, epoch)) {
            return c;
        }
        match (shadowed, self.schedule.shadowing) {
            (true, Some(rule)) => rule.condition,
            _ => self.schedule.default,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tof_examples() {
        let o = Point3::ORIGIN;
        assert_eq!(true_tof(&o, &o), 0.0);
        assert_relative_eq!(true_tof(&o, &Point3::xy(29.9792458, 0.0)), 100e-9, max_relative = 1e-12);
        assert_relative_eq!(true_tof(&o, &Point3::xy(15.0, 0.0)), 50.0346e-9, max_relative = 1e-5);
    }

    #[test]
    fn deterministic_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ChannelModel::noiseless();
        assert_eq!(corrupt_range(10.0, PropagationCondition::Los, &m, &mut rng), 10.0);
        let biased = ChannelModel { nlos_bias_mean: 0.6, ..ChannelModel::noiseless() };
        assert_relative_eq!(corrupt_range(10.0, PropagationCondition::Nlos, &biased, &mut rng), 10.6);
    }

    #[test]
    fn result_never_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ChannelModel { los_sigma: 5.0, ..ChannelModel::noiseless() };
        assert!((0..1000).all(|_| corrupt_range(0.1, PropagationCondition::Los, &m, &mut rng) >= 0.0));
    }

    fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn los_statistics_match_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = ChannelModel { los_sigma: 0.1, ..ChannelModel::default() };
        let draws: Vec<f64> =
            (0..100_000).map(|_| corrupt_range(10.0, PropagationCondition::Los, &m, &mut rng)).collect();
        let (mean, std) = mean_std(&draws);
        assert!((mean - 10.0).abs() <= 0.002, "mean {mean}");
        assert!((std - 0.1).abs() <= 0.005, "std {std}");
    }

    #[test]
    fn nlos_bias_is_positive_in_expectation() {
        let m = ChannelModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let los: Vec<f64> =
            (0..100_000).map(|_| corrupt_range(10.0, PropagationCondition::Los, &m, &mut rng)).collect();
        let nlos: Vec<f64> =
            (0..100_000).map(|_| corrupt_range(10.0, PropagationCondition::Nlos, &m, &mut rng)).collect();
        let mp: Vec<f64> = (0..100_000).map(|_| corrupt_range(10.0, PropagationCondition::Mp, &m, &mut rng)).collect();
        let gap = mean_std(&nlos).0 - mean_std(&los).0;
        assert!(gap >= 0.9 * m.nlos_bias_mean, "gap {gap}");
        assert!(mean_std(&mp).0 > mean_std(&los).0);
    }

    #[test]
    fn same_seed_same_sequence() {
        let m = ChannelModel::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|i| corrupt_range(5.0, PropagationCondition::ALL[i % 3], &m, &mut rng).to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn schedule_defaults_and_entries() {
        let s = ConditionSchedule::all_los().with_entry(1, 3, 7, PropagationCondition::Nlos);
        assert_eq!(s.condition(1, 3, 7), PropagationCondition::Nlos);
        assert_eq!(s.condition(1, 3, 8), PropagationCondition::Los);
        let l = s.lookup();
        assert_eq!(l.resolve(1, 3, 7, false), PropagationCondition::Nlos);
        assert_eq!(l.resolve(1, 2, 7, true), PropagationCondition::Los);
    }

    #[test]
    fn shadowing_picks_anchors_behind() {
        let anchors = [
            Anchor::new(0, Point3::xy(-1.0, -1.0)),
            Anchor::new(1, Point3::xy(29.0, -1.0)),
            Anchor::new(2, Point3::xy(29.0, 16.0)),
            Anchor::new(3, Point3::xy(-1.0, 16.0)),
        ];
        let rule = ShadowingRule::default();
        let tag = Point3::xy(14.0, 0.0);
        let ids = rule.shadowed_anchors(&tag, &Point3::xy(1.0, 0.0), &anchors);
        assert_eq!(ids, vec![0, 3]);
        let ids = rule.shadowed_anchors(&tag, &Point3::xy(-1.0, 0.0), &anchors);
        assert_eq!(ids, vec![1, 2]);
        assert!(rule.shadowed_anchors(&tag, &Point3::ORIGIN, &anchors).is_empty());
        let one = ShadowingRule { max_anchors: 1, ..rule };
        assert_eq!(one.shadowed_anchors(&tag, &Point3::xy(1.0, 0.0), &anchors), vec![0]);
    }
}
