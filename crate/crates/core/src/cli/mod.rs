//! Command implementations behind the `buls` binary. Each command writes
//! human-readable messages to the given streams and returns a process exit
//! code.

pub mod check;
pub mod config;
pub mod trace;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::scenario::{run, RunOutput, ScenarioError, ScenarioSpec};
use crate::tdma::tag_capacity;

pub use check::{run_check, Check, RowOutcome};
pub use config::{load_config, parse_config, ConfigError, Override};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFORMANCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: Vec<Override>,
    /// Seeds to run independently, one output subdirectory each.
    pub sweep: Option<Vec<u64>>,
}

/// Parses `1,2,7` and `3..6` (end exclusive) or any comma-separated mix.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) =
                (a.parse().map_err(|_| format!("bad seed `{a}`"))?, b.parse().map_err(|_| format!("bad seed `{b}`"))?);
            if a >= b {
                return Err(format!("empty seed range `{part}`"));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

fn exit_code(e: &ScenarioError) -> i32 {
    match e {
        ScenarioError::Config(_) | ScenarioError::Mismatch { .. } => EXIT_USAGE,
        ScenarioError::Infeasible { .. } | ScenarioError::Simulation { .. } => EXIT_INFEASIBLE,
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Writes `trace.csv`, `metrics.json` and `resolved_config.json` into `dir`.
pub fn write_outputs(dir: &Path, spec: &ScenarioSpec, output: &RunOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TRACE_FILE), trace::render(&spec.anchors, &output.estimates))?;
    std::fs::write(dir.join(METRICS_FILE), to_json(&output.metrics))?;
    std::fs::write(dir.join(RESOLVED_CONFIG_FILE), to_json(spec))?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

/// Runs one spec and writes its outputs. Returns the exit code and a
/// one-line summary or diagnostic.
fn run_one(spec: &ScenarioSpec, dir: &Path) -> (i32, String) {
    match run(spec) {
        Ok(output) => match write_outputs(dir, spec, &output) {
            Ok(()) => {
                let m = &output.metrics;
                (
                    EXIT_OK,
                    format!(
                        "{}: seed {} rmse_minimum {} rmse_complementary {} collisions {} -> {}",
                        if spec.name.is_empty() { "scenario" } else { &spec.name },
                        spec.seed,
                        fmt_opt(m.rmse_minimum),
                        fmt_opt(m.rmse_complementary),
                        m.collisions,
                        dir.display()
                    ),
                )
            }
            Err(e) => (EXIT_USAGE, format!("cannot write outputs to {}: {e}", dir.display())),
        },
        Err(e) => (exit_code(&e), format!("error: {e}")),
    }
}

fn report(code: i32, msg: &str, out: &mut dyn Write, err: &mut dyn Write) {
    let _ = if code == EXIT_OK { writeln!(out, "{msg}") } else { writeln!(err, "{msg}") };
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let path = args.config.to_string_lossy();
    let spec = match load_config(&path, &args.overrides) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let Some(seeds) = &args.sweep else {
        let (code, msg) = run_one(&spec, &args.out_dir);
        report(code, &msg, out, err);
        return code;
    };

    let results: Vec<(i32, String)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let spec = ScenarioSpec { seed, ..spec.clone() };
                let dir = args.out_dir.join(format!("seed_{seed}"));
                scope.spawn(move || run_one(&spec, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let mut code = EXIT_OK;
    for (c, msg) in results {
        report(c, &msg, out, err);
        code = code.max(c);
    }
    code
}

pub fn cmd_check(which: &str, vector_file: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(check) = Check::from_name(which) else {
        let _ = writeln!(err, "error: unknown check `{which}` (expected one of {})", Check::NAMES.join(", "));
        return EXIT_USAGE;
    };
    let text = match std::fs::read_to_string(vector_file) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", vector_file.display());
            return EXIT_USAGE;
        }
    };
    let outcomes = match run_check(check, &text) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", vector_file.display());
            return EXIT_USAGE;
        }
    };
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    for o in &outcomes {
        let _ = writeln!(out, "{} {which} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let _ = writeln!(out, "{which}: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CONFORMANCE
    }
}

pub fn cmd_capacity(active: f64, guard: f64, frame: f64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if !(active > 0.0 && frame > 0.0 && guard >= 0.0) {
        let _ = writeln!(err, "error: durations must be positive (guard may be zero)");
        return EXIT_USAGE;
    }
    if guard == 0.0 {
        let _ = writeln!(err, "warning: zero guard time leaves no margin for clock misalignment");
    }
    match tag_capacity(active, guard, frame) {
        Ok(n) => {
            let _ = writeln!(out, "{n}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}
