//! Conformance runner over JSON vector files. Each file is an array of rows;
//! the row schema depends on the check.

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::clock::{estimate_offset, DeviceTimestamp, LocalClock};
use crate::mitigation::{build_weighting, MitigationConfig};
use crate::positioning::{solve_wls, Dimension, InitialGuess, MeasurementSet, SolverConfig};
use crate::ranging::{altds_twr_durations, ss_twr_durations};
use crate::types::{Point3, PropagationCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    SsTwr,
    AltdsTwr,
    Sync,
    Weighting,
    Solver,
}

impl Check {
    pub const NAMES: [&'static str; 5] = ["ss-twr", "altds-twr", "sync", "weighting", "solver"];

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "ss-twr" => Self::SsTwr,
            "altds-twr" => Self::AltdsTwr,
            "sync" => Self::Sync,
            "weighting" => Self::Weighting,
            "solver" => Self::Solver,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SsRow {
    name: String,
    round_a: f64,
    reply_b: f64,
    expected_tof: f64,
    tolerance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AltdsRow {
    name: String,
    round_a: f64,
    round_b: f64,
    reply_a: f64,
    reply_b: f64,
    expected_tof: f64,
    tolerance: f64,
}

/// Timestamps in ticks of a shared `tick_period`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncRow {
    name: String,
    tick_period: f64,
    tau1: u64,
    tau2: u64,
    tau3: u64,
    tau4: u64,
    expected_delta_e: f64,
    tolerance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightingRow {
    name: String,
    labels: Vec<PropagationCondition>,
    expected_weights: Vec<f64>,
    #[serde(default)]
    expected_trace: Option<f64>,
    tolerance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverRow {
    name: String,
    anchors: Vec<Point3>,
    ranges: Vec<f64>,
    #[serde(default = "two_d")]
    dimension: Dimension,
    #[serde(default)]
    initial_guess: Option<Point3>,
    expected_position: Point3,
    tolerance: f64,
}

fn two_d() -> Dimension {
    Dimension::Two
}

fn scalar(name: String, got: Result<f64, String>, expected: f64, tol: f64) -> RowOutcome {
    match got {
        Ok(v) => RowOutcome {
            name,
            passed: (v - expected).abs() <= tol,
            detail: format!("got {v:e}, expected {expected:e} (tolerance {tol:e})"),
        },
        Err(e) => RowOutcome { name, passed: false, detail: e },
    }
}

fn eval_ss(r: SsRow) -> RowOutcome {
    scalar(r.name, Ok(ss_twr_durations(r.round_a, r.reply_b).tof), r.expected_tof, r.tolerance)
}

fn eval_altds(r: AltdsRow) -> RowOutcome {
    let got = altds_twr_durations(r.round_a, r.round_b, r.reply_a, r.reply_b).map(|t| t.tof).map_err(|e| e.to_string());
    scalar(r.name, got, r.expected_tof, r.tolerance)
}

fn eval_sync(r: SyncRow) -> RowOutcome {
    let got = LocalClock::new(0.0, 0.0, r.tick_period)
        .and_then(|c| {
            estimate_offset(
                &c,
                DeviceTimestamp(r.tau1),
                DeviceTimestamp(r.tau4),
                &c,
                DeviceTimestamp(r.tau2),
                DeviceTimestamp(r.tau3),
            )
        })
        .map(|e| e.delta_e)
        .map_err(|e| e.to_string());
    scalar(r.name, got, r.expected_delta_e, r.tolerance)
}

fn eval_weighting(r: WeightingRow) -> RowOutcome {
    let labels: Vec<_> = r.labels.iter().copied().map(Some).collect();
    let w = build_weighting(&labels, &MitigationConfig::default());
    if w.diag.len() != r.expected_weights.len() {
        return RowOutcome {
            name: r.name,
            passed: false,
            detail: format!("{} weights for {} expected", w.diag.len(), r.expected_weights.len()),
        };
    }
    let weights_ok = w.diag.iter().zip(&r.expected_weights).all(|(g, e)| (g - e).abs() <= r.tolerance);
    let trace_ok = r.expected_trace.is_none_or(|t| (w.trace() - t).abs() <= r.tolerance);
    RowOutcome {
        name: r.name,
        passed: weights_ok && trace_ok,
        detail: format!("got weights {:?} (trace {}), expected {:?}", w.diag, w.trace(), r.expected_weights),
    }
}

fn eval_solver(r: SolverRow) -> RowOutcome {
    let ms = MeasurementSet::from_ranges(&r.anchors, &r.ranges, 1.0);
    let cfg = SolverConfig {
        dimension: r.dimension,
        initial_guess: r.initial_guess.map_or(InitialGuess::Centroid, InitialGuess::Point),
        ..SolverConfig::default()
    };
    match solve_wls(&ms, &cfg) {
        Ok(res) => {
            let err = (res.position - r.expected_position).norm();
            RowOutcome {
                name: r.name,
                passed: res.converged && err <= r.tolerance,
                detail: format!(
                    "got {} after {} iterations (converged {}), expected {}",
                    res.position, res.iterations_used, res.converged, r.expected_position
                ),
            }
        }
        Err(e) => RowOutcome { name: r.name, passed: false, detail: e.to_string() },
    }
}

fn rows<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, String> {
    serde_json::from_str(text).map_err(|e| format!("line {}, column {}: {e}", e.line(), e.column()))
}

/// Evaluates every row of a vector file. Returns `Err` when the file does
/// not match the check's row schema.
pub fn run_check(check: Check, text: &str) -> Result<Vec<RowOutcome>, String> {
    Ok(match check {
        Check::SsTwr => rows::<SsRow>(text)?.into_iter().map(eval_ss).collect(),
        Check::AltdsTwr => rows::<AltdsRow>(text)?.into_iter().map(eval_altds).collect(),
        Check::Sync => rows::<SyncRow>(text)?.into_iter().map(eval_sync).collect(),
        Check::Weighting => rows::<WeightingRow>(text)?.into_iter().map(eval_weighting).collect(),
        Check::Solver => rows::<SolverRow>(text)?.into_iter().map(eval_solver).collect(),
    })
}
