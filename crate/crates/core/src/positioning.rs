//! Iterative Taylor-series (Gauss-Newton) position estimation from ranges.
//!
//! Each iteration linearizes the range model around the current guess,
//! `H * delta = d - r(guess)`, and solves the weighted least-squares
//! problem for `delta`. The weighted system `S H delta = S (d - r)` is
//! solved through an SVD rather than by forming `(H^T C H)^-1`, where the
//! row scales `S` come from the per-range sigmas, the mitigation weights,
//! or both (see [`WeightingForm`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{distance, Point3, PropagationCondition};

/// Smallest accepted singular value of the centered anchor coordinates.
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;
/// Reciprocal condition number below which a linearized system is rejected.
const RCOND_LIMIT: f64 = 1e-10;
/// Guess perturbation along +x when the guess sits on an anchor.
const ANCHOR_NUDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("{have} ranges cannot fix a {dim} position, need at least {need}")]
    Underdetermined { have: usize, need: usize, dim: Dimension },
    #[error("degenerate anchor geometry: {0}")]
    DegenerateGeometry(String),
    #[error("linearization point coincides with anchor at {0}")]
    AtAnchor(Point3),
    #[error("invalid measurement set: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "2D")]
    Two,
    #[serde(rename = "3D")]
    Three,
}

impl Dimension {
    pub fn axes(&self) -> usize {
        match self {
            Self::Two => 2,
            Self::Three => 3,
        }
    }

    /// Fewest ranges that can determine a position.
    pub fn min_ranges(&self) -> usize {
        self.axes() + 1
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Two => "2D",
            Self::Three => "3D",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Mean position of the participating anchors.
    Centroid,
    Point(Point3),
}

/// How mitigation weights combine with per-range sigmas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingForm {
    /// `C = W^T W`; sigmas are ignored once a weighting matrix is supplied.
    Mitigation,
    /// `C = W^T R^-1 W`, keeping the covariance weighting alongside `W`.
    MitigationWithCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the step norm is at or below this many meters.
    pub convergence_eps: f64,
    pub initial_guess: InitialGuess,
    pub dimension: Dimension,
    pub weighting_form: WeightingForm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_eps: 1e-6,
            initial_guess: InitialGuess::Centroid,
            dimension: Dimension::Two,
            weighting_form: WeightingForm::Mitigation,
        }
    }
}

impl SolverConfig {
    pub fn with_dimension(dimension: Dimension) -> Self {
        Self { dimension, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("solver.max_iterations must be >= 1".into());
        }
        if !(self.convergence_eps > 0.0) {
            return Err("solver.convergence_eps must be > 0".into());
        }
        Ok(())
    }
}

/// One anchor position with its measured range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub anchor_id: u32,
    pub anchor: Point3,
    pub range: f64,
    pub sigma: f64,
    /// Condition reported by an identification step, if any.
    pub detected: Option<PropagationCondition>,
}

impl RangeEntry {
    pub fn new(anchor_id: u32, anchor: Point3, range: f64, sigma: f64) -> Self {
        Self { anchor_id, anchor, range, sigma, detected: None }
    }
}

/// Ranges for one solve, with an optional diagonal weighting matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub entries: Vec<RangeEntry>,
    /// Diagonal of `W`, one entry per range.
    pub weighting: Option<Vec<f64>>,
}

impl MeasurementSet {
    pub fn new(entries: Vec<RangeEntry>) -> Self {
        Self { entries, weighting: None }
    }

    /// Builds a set with a common sigma from parallel anchor and range lists.
    pub fn from_ranges(anchors: &[Point3], ranges: &[f64], sigma: f64) -> Self {
        let entries = anchors
            .iter()
            .zip(ranges)
            .enumerate()
            .map(|(i, (a, r))| RangeEntry::new(i as u32, *a, *r, sigma))
            .collect();
        Self::new(entries)
    }

    pub fn with_weighting(mut self, diag: Vec<f64>) -> Self {
        self.weighting = Some(diag);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn anchors(&self) -> impl Iterator<Item = Point3> + '_ {
        self.entries.iter().map(|e| e.anchor)
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.entries.len().max(1) as f64;
        self.anchors().fold(Point3::ORIGIN, |acc, p| acc + p) * (1.0 / n)
    }

    fn validate(&self) -> Result<(), SolveError> {
        for e in &self.entries {
            if !(e.anchor.is_finite() && e.range.is_finite()) {
                return Err(SolveError::InvalidInput(format!("non-finite entry for anchor {}", e.anchor_id)));
            }
            if !(e.sigma > 0.0 && e.sigma.is_finite()) {
                return Err(SolveError::InvalidInput(format!("sigma for anchor {} must be > 0", e.anchor_id)));
            }
        }
        if let Some(w) = &self.weighting {
            if w.len() != self.entries.len() {
                return Err(SolveError::InvalidInput(format!(
                    "weighting has {} entries for {} ranges",
                    w.len(),
                    self.entries.len()
                )));
            }
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(SolveError::InvalidInput("weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    /// Row scale applied to each linearized equation.
    fn row_scales(&self, form: WeightingForm) -> Vec<f64> {
        match (&self.weighting, form) {
            (None, _) => self.entries.iter().map(|e| 1.0 / e.sigma).collect(),
            (Some(w), WeightingForm::Mitigation) => w.clone(),
            (Some(w), WeightingForm::MitigationWithCovariance) => {
                w.iter().zip(&self.entries).map(|(w, e)| w / e.sigma).collect()
            }
        }
    }
}

/// Partial derivatives of the range to `anchor` at `guess`, and that range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianRow {
    pub coeffs: [f64; 3],
    pub range: f64,
}

pub fn jacobian_row(anchor: &Point3, guess: &Point3) -> Result<JacobianRow, SolveError> {
    let r = distance(anchor, guess);
    if r == 0.0 {
        return Err(SolveError::AtAnchor(*anchor));
    }
    let d = *guess - *anchor;
    Ok(JacobianRow { coeffs: [d.x / r, d.y / r, d.z / r], range: r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub position: Point3,
    pub iterations_used: usize,
    /// Norm of `r_i - d_i` at the returned position.
    pub final_residual_norm: f64,
    /// Norm of `r_i - d_i` at the initial guess.
    pub initial_residual_norm: f64,
    /// `r_i - d_i` per range at the returned position.
    pub residuals: Vec<f64>,
    pub last_step_norm: f64,
    pub converged: bool,
    /// Condition number of the last weighted Jacobian.
    pub condition_number: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Ok,
    Underdetermined,
    Degenerate,
}

fn centered_anchor_matrix(ms: &MeasurementSet, dim: Dimension) -> DMatrix<f64> {
    let c = ms.centroid();
    let axes = dim.axes();
    DMatrix::from_fn(ms.len(), axes, |i, j| ms.entries[i].anchor.component(j) - c.component(j))
}

/// Whether the anchor layout can determine a position at all.
pub fn feasibility_check(ms: &MeasurementSet, dim: Dimension) -> Feasibility {
    if ms.len() < dim.min_ranges() {
        return Feasibility::Underdetermined;
    }
    let sv = centered_anchor_matrix(ms, dim).singular_values();
    if sv.min() < GEOMETRY_TOLERANCE {
        Feasibility::Degenerate
    } else {
        Feasibility::Ok
    }
}

fn residuals_at(ms: &MeasurementSet, p: &Point3) -> Vec<f64> {
    ms.entries.iter().map(|e| distance(&e.anchor, p) - e.range).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Weighted Gauss-Newton solve. Running out of iterations is reported via
/// `converged = false`, not as an error.
pub fn solve_wls(ms: &MeasurementSet, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    ms.validate()?;
    cfg.validate().map_err(SolveError::InvalidInput)?;
    let dim = cfg.dimension;
    match feasibility_check(ms, dim) {
        Feasibility::Ok => {}
        Feasibility::Underdetermined => {
            return Err(SolveError::Underdetermined { have: ms.len(), need: dim.min_ranges(), dim })
        }
        Feasibility::Degenerate => {
            return Err(SolveError::DegenerateGeometry(format!("anchors are not spread across {dim}")))
        }
    }

    let axes = dim.axes();
    let scales = ms.row_scales(cfg.weighting_form);
    let mut guess = match cfg.initial_guess {
        InitialGuess::Centroid => ms.centroid(),
        InitialGuess::Point(p) => p,
    };
    let initial_residual_norm = norm(&residuals_at(ms, &guess));

    let n = ms.len();
    let mut iterations_used = 0;
    let mut converged = false;
    let mut last_step_norm = f64::INFINITY;
    let mut condition_number = f64::NAN;

    for _ in 0..cfg.max_iterations {
        iterations_used += 1;
        if ms.entries.iter().any(|e| distance(&e.anchor, &guess) == 0.0) {
            guess.x += ANCHOR_NUDGE;
        }
        let mut h = DMatrix::zeros(n, axes);
        let mut b = DVector::zeros(n);
        for (i, e) in ms.entries.iter().enumerate() {
            let row = jacobian_row(&e.anchor, &guess)?;
            for j in 0..axes {
                h[(i, j)] = scales[i] * row.coeffs[j];
            }
            b[i] = scales[i] * (e.range - row.range);
        }
        let svd = h.svd(true, true);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        condition_number = smax / smin;
        if !(smin > RCOND_LIMIT * smax) {
            return Err(SolveError::DegenerateGeometry(format!(
                "weighted Jacobian is rank deficient (condition {condition_number:e})"
            )));
        }
        let delta = svd.solve(&b, 0.0).map_err(|e| SolveError::DegenerateGeometry(e.to_string()))?;
        let step = delta.norm();
        if !step.is_finite() {
            break;
        }
        guess.x += delta[0];
        guess.y += delta[1];
        if axes == 3 {
            guess.z += delta[2];
        }
        last_step_norm = step;
        if step <= cfg.convergence_eps {
            converged = true;
            break;
        }
    }

    let residuals = residuals_at(ms, &guess);
    Ok(SolveResult {
        position: guess,
        iterations_used,
        final_residual_norm: norm(&residuals),
        initial_residual_norm,
        residuals,
        last_step_norm,
        converged,
        condition_number,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    LowestSigma,
    /// Ranges detected as LOS (or not classified) first, then MP, then NLOS.
    DetectedLosFirst,
}

fn condition_rank(c: Option<PropagationCondition>) -> u8 {
    match c {
        None | Some(PropagationCondition::Los) => 0,
        Some(PropagationCondition::Mp) => 1,
        Some(PropagationCondition::Nlos) => 2,
    }
}

/// Keeps the `k` best ranges by `criterion` whose geometry is still feasible.
///
/// Candidates are ranked (ties broken by anchor id) and subsets are tried in
/// lexicographic order of that ranking; the first feasible one wins. The
/// returned entries keep their original order.
pub fn select_and_proceed(
    ms: &MeasurementSet,
    k: usize,
    criterion: SelectionCriterion,
    dim: Dimension,
) -> Result<MeasurementSet, SolveError> {
    if k < dim.min_ranges() {
        return Err(SolveError::Underdetermined { have: k, need: dim.min_ranges(), dim });
    }
    if k >= ms.len() {
        return match feasibility_check(ms, dim) {
            Feasibility::Ok => Ok(ms.clone()),
            Feasibility::Underdetermined => {
                Err(SolveError::Underdetermined { have: ms.len(), need: dim.min_ranges(), dim })
            }
            Feasibility::Degenerate => Err(SolveError::DegenerateGeometry("no feasible subset".into())),
        };
    }

    let mut ranked: Vec<usize> = (0..ms.len()).collect();
    ranked.sort_by(|&a, &b| {
        let (ea, eb) = (&ms.entries[a], &ms.entries[b]);
        let primary = match criterion {
            SelectionCriterion::LowestSigma => ea.sigma.total_cmp(&eb.sigma),
            SelectionCriterion::DetectedLosFirst => condition_rank(ea.detected).cmp(&condition_rank(eb.detected)),
        };
        primary.then(ea.anchor_id.cmp(&eb.anchor_id))
    });

    let subset = |chosen: &[usize]| {
        let mut idx: Vec<usize> = chosen.iter().map(|&c| ranked[c]).collect();
        idx.sort_unstable();
        MeasurementSet {
            entries: idx.iter().map(|&i| ms.entries[i]).collect(),
            weighting: ms.weighting.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    };

    // Lexicographic walk over k-combinations of ranked positions.
    let n = ms.len();
    let mut comb: Vec<usize> = (0..k).collect();
    loop {
        let candidate = subset(&comb);
        if feasibility_check(&candidate, dim) == Feasibility::Ok {
            return Ok(candidate);
        }
        let Some(i) = (0..k).rev().find(|&i| comb[i] < n - k + i) else {
            return Err(SolveError::DegenerateGeometry(format!("no feasible subset of {k} ranges")));
        };
        comb[i] += 1;
        for j in i + 1..k {
            comb[j] = comb[j - 1] + 1;
        }
    }
}
