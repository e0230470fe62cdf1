//! Error statistics against ground truth and pipeline comparison.

use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Summary of one pipeline's per-epoch position errors (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    /// Error per (epoch, tag) in run order.
    pub errors: Vec<f64>,
}

impl PipelineMetrics {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        if errors.is_empty() {
            return Self { rmse: 0.0, mae: 0.0, p50: 0.0, p95: 0.0, max: 0.0, errors };
        }
        let n = errors.len() as f64;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            rmse,
            mae,
            p50: percentile(&sorted, 50.0),
            p95: percentile(&sorted, 95.0),
            max: *sorted.last().unwrap(),
            errors,
        }
    }
}

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = (pct / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
        }
    }
}

/// Paired comparison of `b` against `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineComparison {
    /// `b.errors[i] - a.errors[i]`.
    pub deltas: Vec<f64>,
    /// `b.rmse / a.rmse`; 1 when both are zero.
    pub rmse_ratio: f64,
    pub mean_delta: f64,
}

pub fn compare_pipelines(a: &PipelineMetrics, b: &PipelineMetrics) -> Result<PipelineComparison, ScenarioError> {
    if a.errors.len() != b.errors.len() {
        return Err(ScenarioError::Mismatch { a: a.errors.len(), b: b.errors.len() });
    }
    let deltas: Vec<f64> = a.errors.iter().zip(&b.errors).map(|(x, y)| y - x).collect();
    let rmse_ratio = if a.rmse == 0.0 && b.rmse == 0.0 { 1.0 } else { b.rmse / a.rmse };
    let mean_delta = if deltas.is_empty() { 0.0 } else { deltas.iter().sum::<f64>() / deltas.len() as f64 };
    Ok(PipelineComparison { deltas, rmse_ratio, mean_delta })
}
