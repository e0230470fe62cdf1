//! Identification of non-direct-path ranges and the weighting matrix used to
//! down-weight them in the position solve.
//!
//! Weight generation, for `r` ranges with `nl` NLOS and `mp` multipath labels:
//!
//! * every range starts at `iw = 1/r`;
//! * if nothing is NLOS or MP, the identity is returned unchanged;
//! * NLOS ranges get `iw * nlos_factor` (default factor `1/(2r)`), MP ranges
//!   get `iw * mp_factor` (default `1/r`);
//! * LOS ranges get `iw` plus an equal share of what the other ranges gave up,
//!   `((iw - w_nlos) * nl + (iw - w_mp) * mp) / (r - nl - mp)`.
//!
//! When every range carries the same non-LOS label the identity is returned,
//! since equal weights leave the solve unchanged. The resulting diagonal
//! sums to one in every other case. With no LOS range but both NLOS and MP
//! present there is nobody to receive the surplus; the relegated weights are
//! then rescaled to unit trace, which keeps their ratio (and therefore the
//! weighted solution) unchanged.
//!
//! Note the NLOS weight with default factors is `iw/(2r) = 1/(2r^2)`: the
//! factor `1/(2r)` is applied to `iw`, not to 1.

use serde::{Deserialize, Serialize};

use crate::positioning::{solve_wls, MeasurementSet, SolveError, SolveResult, SolverConfig};
use crate::ranging::RangeMeasurement;
use crate::types::{distance, Point3, PropagationCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Ground-truth labels from the simulated channel.
    Oracle,
    /// Residual gate against a prior position or prior ranges.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MitigationConfig {
    /// Multiplier on `iw` for NLOS ranges; `None` means `1/(2r)`.
    pub nlos_factor: Option<f64>,
    /// Multiplier on `iw` for MP ranges; `None` means `1/r`.
    pub mp_factor: Option<f64>,
    pub detector: DetectorKind,
    /// Residual gate in meters for the threshold detector; `None` means
    /// three times the channel's LOS sigma.
    pub threshold: Option<f64>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self { nlos_factor: None, mp_factor: None, detector: DetectorKind::Oracle, threshold: None }
    }
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, f) in [("nlos_factor", self.nlos_factor), ("mp_factor", self.mp_factor)] {
            if let Some(f) = f {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(format!("mitigation.{name} must lie in (0, 1], got {f}"));
                }
            }
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(format!("mitigation.threshold must be > 0, got {t}"));
            }
        }
        Ok(())
    }

    pub fn nlos_factor_for(&self, r: usize) -> f64 {
        self.nlos_factor.unwrap_or(1.0 / (2.0 * r as f64))
    }

    pub fn mp_factor_for(&self, r: usize) -> f64 {
        self.mp_factor.unwrap_or(1.0 / r as f64)
    }
}

/// Per-range labels from a detector. `None` means the detector abstained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub labels: Vec<Option<PropagationCondition>>,
    pub detector: String,
    pub confidence: Vec<f64>,
}

impl IdentificationResult {
    pub fn from_labels(labels: Vec<PropagationCondition>, detector: &str) -> Self {
        let confidence = vec![1.0; labels.len()];
        Self { labels: labels.into_iter().map(Some).collect(), detector: detector.to_string(), confidence }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels with abstentions read as LOS.
    pub fn effective(&self) -> impl Iterator<Item = PropagationCondition> + '_ {
        self.labels.iter().map(|l| l.unwrap_or(PropagationCondition::Los))
    }
}

/// What the threshold detector compares each measured range against.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Ranges implied by a predicted tag position.
    Position(Point3),
    /// Ranges from an earlier epoch, aligned with the measurement set.
    Ranges(Vec<f64>),
    None,
}

/// Labels a range NLOS when it exceeds the prior-implied range by more than
/// `threshold`, MP when the excess lies in `(threshold/2, threshold]`, LOS
/// otherwise. Without a prior every label is `None`.
///
/// Confidence is the distance of the residual from the nearest decision
/// boundary in units of `threshold/2`, capped at one.
pub fn identify_threshold(ms: &MeasurementSet, prior: &Prior, threshold: f64) -> IdentificationResult {
    let implied: Option<Vec<f64>> = match prior {
        Prior::Position(p) => Some(ms.entries.iter().map(|e| distance(&e.anchor, p)).collect()),
        Prior::Ranges(r) if r.len() == ms.len() => Some(r.clone()),
        Prior::Ranges(_) | Prior::None => None,
    };
    let Some(implied) = implied else {
        return IdentificationResult {
            labels: vec![None; ms.len()],
            detector: "threshold".into(),
            confidence: vec![0.0; ms.len()],
        };
    };
    let half = threshold / 2.0;
    let (labels, confidence) = ms
        .entries
        .iter()
        .zip(&implied)
        .map(|(e, prior_range)| {
            let excess = e.range - prior_range;
            let label = if excess > threshold {
                PropagationCondition::Nlos
            } else if excess > half {
                PropagationCondition::Mp
            } else {
                PropagationCondition::Los
            };
            let margin = [(excess - threshold).abs(), (excess - half).abs()].into_iter().fold(f64::INFINITY, f64::min);
            (Some(label), (margin / half).min(1.0))
        })
        .unzip();
    IdentificationResult { labels, detector: "threshold".into(), confidence }
}

/// Passes through the channel's ground-truth condition of each measurement.
pub fn identify_oracle(measurements: &[RangeMeasurement]) -> IdentificationResult {
    IdentificationResult::from_labels(measurements.iter().map(|m| m.condition_true).collect(), "oracle")
}

/// Diagonal weighting matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingMatrix {
    pub diag: Vec<f64>,
}

impl WeightingMatrix {
    pub fn identity(r: usize) -> Self {
        Self { diag: vec![1.0; r] }
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    pub fn is_identity(&self) -> bool {
        self.diag.iter().all(|&w| w == 1.0)
    }

    /// Dense row-major form, for callers that want the full matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.diag.len();
        (0..n).map(|i| (0..n).map(|j| if i == j { self.diag[i] } else { 0.0 }).collect()).collect()
    }
}

/// Builds the mitigation weights for a label vector. See the module docs.
pub fn build_weighting(labels: &[Option<PropagationCondition>], cfg: &MitigationConfig) -> WeightingMatrix {
    let r = labels.len();
    if r == 0 {
        return WeightingMatrix { diag: Vec::new() };
    }
    let eff: Vec<PropagationCondition> = labels.iter().map(|l| l.unwrap_or(PropagationCondition::Los)).collect();
    let nl = eff.iter().filter(|c| **c == PropagationCondition::Nlos).count();
    let mp = eff.iter().filter(|c| **c == PropagationCondition::Mp).count();
    if nl == 0 && mp == 0 {
        return WeightingMatrix::identity(r);
    }
    if nl == r || mp == r {
        return WeightingMatrix::identity(r);
    }

    let rf = r as f64;
    let iw = 1.0 / rf;
    let w_nlos = iw * cfg.nlos_factor_for(r);
    let w_mp = iw * cfg.mp_factor_for(r);
    let los = r - nl - mp;
    let w_los = if los > 0 { iw + ((iw - w_nlos) * nl as f64 + (iw - w_mp) * mp as f64) / los as f64 } else { 0.0 };
    let mut diag: Vec<f64> = eff
        .iter()
        .map(|c| match c {
            PropagationCondition::Nlos => w_nlos,
            PropagationCondition::Mp => w_mp,
            PropagationCondition::Los => w_los,
        })
        .collect();
    if los == 0 {
        let trace: f64 = diag.iter().sum();
        diag.iter_mut().for_each(|w| *w /= trace);
    }
    WeightingMatrix { diag }
}

/// Attaches the labels and their weighting matrix to `ms` and solves.
pub fn mitigated_solve(
    ms: &MeasurementSet,
    labels: &IdentificationResult,
    cfg: &MitigationConfig,
    solver_cfg: &SolverConfig,
) -> Result<(SolveResult, WeightingMatrix), SolveError> {
    if labels.len() != ms.len() {
        return Err(SolveError::InvalidInput(format!("{} labels for {} ranges", labels.len(), ms.len())));
    }
    let w = build_weighting(&labels.labels, cfg);
    let mut weighted = ms.clone().with_weighting(w.diag.clone());
    for (e, l) in weighted.entries.iter_mut().zip(&labels.labels) {
        e.detected = *l;
    }
    solve_wls(&weighted, solver_cfg).map(|res| (res, w))
}

/// Counts of (true condition, detected condition). The last column holds
/// abstentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Rows: true LOS, NLOS, MP. Columns: detected LOS, NLOS, MP, unknown.
    pub counts: [[u64; 4]; 3],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: PropagationCondition, detected: Option<PropagationCondition>) {
        let col = detected.map_or(3, |d| d.index());
        self.counts[truth.index()][col] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of decided labels that match the truth.
    pub fn accuracy(&self) -> f64 {
        let decided: u64 = self.counts.iter().map(|row| row[..3].iter().sum::<u64>()).sum();
        let correct: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        if decided == 0 {
            0.0
        } else {
            correct as f64 / decided as f64
        }
    }
}
