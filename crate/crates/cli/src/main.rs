//! `latgas <command> --config FILE [--seed S] [--replicas R] [--out DIR]`
//!
//! Exit status: 0 on success, 1 for invalid configuration or parameters,
//! 2 when a numerical procedure fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use log::{info, warn};
use serde_json::json;

use crate::commands::Outputs;
use crate::config::{Command, ConfigErrors, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "latgas",
    version,
    about = "Simulations and large-deviation numerics for one-dimensional lattice gases",
    after_long_help = config::keys_help()
)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    command: Command,
    /// Configuration file (key = value lines grouped by [section]).
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.replicas.
    #[arg(long)]
    replicas: Option<usize>,
    /// Overrides run.out.
    #[arg(long)]
    out: Option<PathBuf>,
}

const VALIDATION: u8 = 1;
const NUMERICAL: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigErrors>().is_some() {
        return VALIDATION;
    }
    match err.downcast_ref::<latgas_core::Error>() {
        Some(e) if e.is_numerical() => NUMERICAL,
        Some(
            latgas_core::Error::InvalidParameter(_)
            | latgas_core::Error::GridMismatch(_)
            | latgas_core::Error::BoundaryMismatch(_)
            | latgas_core::Error::Format(_),
        ) => VALIDATION,
        _ => NUMERICAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        out: cli.out.clone(),
    };
    let cfg = match config::load(&cli.config, cli.command, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(VALIDATION);
        }
    };
    for w in &cfg.warnings {
        warn!("{w}");
    }
    let start = Instant::now();
    let mut out = match Outputs::new(cfg.out.clone()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(NUMERICAL);
        }
    };
    info!("{} -> {}", cfg.command.name(), cfg.out.display());
    let result = cfg
        .model
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|model| {
            let gamma = commands::build_profile(&cfg, &model)?;
            commands::run(&cfg, &model, &gamma, &mut out)
        });
    let (status, summary, code) = match &result {
        Ok(summary) => ("ok", summary.clone(), 0),
        Err(e) => {
            eprintln!("error: {e:#}");
            ("failed", json!({ "error": format!("{e:#}") }), exit_code(e))
        }
    };
    let mut files = out.files.clone();
    files.push(commands::OutputRecord {
        file: "manifest.json".into(),
        description: "this manifest".into(),
    });
    let manifest = json!({
        "command": cfg.command.name(),
        "status": status,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "warnings": cfg.warnings,
        "config": cfg,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "result": summary,
        "outputs": files,
    });
    let written = std::fs::File::create(out.dir.join("manifest.json"))
        .map_err(latgas_core::Error::from)
        .and_then(|f| latgas_core::io::write_json(&manifest, std::io::BufWriter::new(f)));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(NUMERICAL);
    }
    ExitCode::from(code)
}
