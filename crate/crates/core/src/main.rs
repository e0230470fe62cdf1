use std::path::PathBuf;

use clap::{Parser, Subcommand};

use buls::cli::{self, Override, RunArgs};

/// Bidirectional UWB localization simulator.
#[derive(Parser)]
#[command(name = "buls", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config. Any `--key.path=value` flag overrides that config key.
    Run {
        config: PathBuf,
        #[arg(long = "out", value_name = "DIR")]
        out_dir: PathBuf,
        /// Seeds to run in parallel, e.g. `1,2,3` or `1..9`.
        #[arg(long, value_name = "SEEDS")]
        sweep: Option<String>,
    },
    /// Evaluate a conformance vector file: ss-twr, altds-twr, sync, weighting or solver.
    Check { which: String, vector_file: PathBuf },
    /// Print how many tags fit in one TDMA frame (durations in seconds).
    Capacity {
        #[arg(allow_negative_numbers = true)]
        active: f64,
        #[arg(allow_negative_numbers = true)]
        guard: f64,
        #[arg(allow_negative_numbers = true)]
        frame: f64,
    },
}

/// `--key=value` flags other than the built-in ones are config overrides.
fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--").and_then(|a| a.split_once('=')).is_some_and(|(k, _)| !matches!(k, "out" | "sweep"))
}

fn main() {
    let (overrides, args): (Vec<String>, Vec<String>) = std::env::args().partition(|a| is_override(a));
    let cli = Cli::parse_from(args);
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = match cli.command {
        Command::Run { config, out_dir, sweep } => {
            let parsed: Result<Vec<Override>, String> =
                overrides.iter().map(|o| o.parse().map_err(|e: cli::ConfigError| e.to_string())).collect();
            let sweep = sweep.as_deref().map(cli::parse_seed_list).transpose();
            match (parsed, sweep) {
                (Ok(overrides), Ok(sweep)) => {
                    cli::cmd_run(&RunArgs { config, out_dir, overrides, sweep }, &mut out, &mut err)
                }
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    cli::EXIT_USAGE
                }
            }
        }
        _ if !overrides.is_empty() => {
            eprintln!("error: config overrides only apply to `run`");
            cli::EXIT_USAGE
        }
        Command::Check { which, vector_file } => cli::cmd_check(&which, &vector_file, &mut out, &mut err),
        Command::Capacity { active, guard, frame } => cli::cmd_capacity(active, guard, frame, &mut out, &mut err),
    };
    std::process::exit(code);
}
