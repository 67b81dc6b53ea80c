//! `equidiv` — linear response of chaotic ODE flows along one orbit.

mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{parse_config, Mode};

#[derive(Parser)]
#[command(
    name = "equidiv",
    about = "Linear response of chaotic ODE flows by equivariant divergence and adjoint shadowing",
    version
)]
struct Cli {
    /// Run mode.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json / series.csv (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed override: seed i becomes N + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the time-series CSV.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_config(&text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return ExitCode::from(2);
                }
            },
            Err(e) => {
                eprintln!("config error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => parse_config(r#"{"system": "lorenz63"}"#).expect("builtin default"),
    };
    let mut effective = match raw.into_effective(Some(cli.mode)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(base) = cli.seed {
        effective.seeds = (0..effective.seeds.len()).map(|i| base + i as u64).collect();
    }
    if cli.csv {
        effective.csv = true;
    }
    let out_dir = cli
        .out
        .or_else(|| effective.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let code = run::execute(effective, out_dir);
    ExitCode::from(code as u8)
}
