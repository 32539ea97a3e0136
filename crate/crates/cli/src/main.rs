//! Command-line driver: parses a TOML config, runs one experiment, writes
//! `report.csv`, `summary.json`, and `manifest.json` into the output
//! directory, and prints one verdict line per claim.
//!
//! Exit codes: 0 when every verdict passes, 2 when the run completed but a
//! verdict failed, 1 for usage, configuration, or precondition errors.
//! Worker threads come from `LLN_THREADS` (default: available cores); the
//! CSV and summary bytes never depend on the thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use walklaw::experiments::{
    all_pass, run_counterexample, run_gamma, run_identity_suite, run_l2, run_lln, run_multirange,
    run_shift_invariance, run_simulate, ExperimentConfig, Verdict,
};
use walklaw::functionals::FunctionalSpec;
use walklaw::report::{
    now_unix_ms, write_csv, write_json, CsvRow, RunManifest, MANIFEST_SCHEMA, SUMMARY_SCHEMA,
};
use walklaw::theory::EscapeProbability;

#[derive(Parser)]
#[command(
    name = "walklaw",
    version,
    about = "Law-of-large-numbers checks for local times of transient walks"
)]
struct Cli {
    /// TOML config file; defaults to an empty document.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key (key=value); repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Directory for report.csv, summary.json, and manifest.json.
    #[arg(long, global = true, default_value = "walklaw-out", value_name = "DIR")]
    out: PathBuf,

    /// Master seed override.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Walk replicas and snapshot local-time state at each checkpoint.
    Simulate,
    /// Resolve or estimate the escape probability.
    Gamma,
    /// Strong-law check: G_n(f)/n against its predicted limit.
    Lln,
    /// Mean-square convergence check along the checkpoint schedule.
    L2,
    /// Multiplicity decay and hinge sums against their limits.
    Multirange,
    /// The divergent functional whose tail moment never vanishes.
    Counterexample,
    /// Exact identity battery over fresh trajectories.
    Identities,
    /// Hinge sums over shifted windows of equal length.
    Shift,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Gamma => "gamma",
            Command::Lln => "lln",
            Command::L2 => "l2",
            Command::Multirange => "multirange",
            Command::Counterexample => "counterexample",
            Command::Identities => "identities",
            Command::Shift => "shift",
        }
    }
}

struct Outcome {
    rows: Vec<CsvRow>,
    verdicts: Vec<Verdict>,
    gamma: Option<EscapeProbability>,
    report: serde_json::Value,
}

impl Outcome {
    fn new<T: Serialize>(
        rows: Vec<CsvRow>,
        verdicts: Vec<Verdict>,
        gamma: Option<EscapeProbability>,
        report: &T,
    ) -> walklaw::Result<Self> {
        Ok(Outcome {
            rows,
            verdicts,
            gamma,
            report: serde_json::to_value(report)
                .map_err(|e| walklaw::Error::Serialize(e.to_string()))?,
        })
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'a str,
    subcommand: &'a str,
    config: walklaw::experiments::ConfigEcho,
    gamma: &'a Option<EscapeProbability>,
    verdicts: &'a [Verdict],
    report: &'a serde_json::Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("walklaw: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> walklaw::Result<ExitCode> {
    let started = now_unix_ms();
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| walklaw::Error::Io {
                path: path.display().to_string(),
                source: e,
            })?,
        None => String::new(),
    };
    let mut cfg = walklaw::config::parse_config(&text, &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.threads = worker_threads()?;

    if matches!(cli.command, Command::Lln) && cfg.functional == Some(FunctionalSpec::GeomHalf) {
        return Err(walklaw::Error::ConditionFails(
            "geomhalf diverges in mean square; run the counterexample subcommand instead".into(),
        ));
    }

    let outcome = dispatch(cli.command, &cfg)?;

    std::fs::create_dir_all(&cli.out).map_err(|e| walklaw::Error::Io {
        path: cli.out.display().to_string(),
        source: e,
    })?;
    let csv_path = cli.out.join("report.csv");
    let summary_path = cli.out.join("summary.json");
    let manifest_path = cli.out.join("manifest.json");

    write_csv(&csv_path, &outcome.rows)?;
    write_json(
        &summary_path,
        &Summary {
            schema: SUMMARY_SCHEMA,
            subcommand: cli.command.name(),
            config: cfg.echo(),
            gamma: &outcome.gamma,
            verdicts: &outcome.verdicts,
            report: &outcome.report,
        },
    )?;
    let finished = now_unix_ms();
    write_json(
        &manifest_path,
        &RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            tool: "walklaw".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: cli.command.name().into(),
            master_seed: cfg.master_seed,
            gamma: outcome.gamma.clone(),
            config: serde_json::to_value(cfg.echo())
                .map_err(|e| walklaw::Error::Serialize(e.to_string()))?,
            threads: cfg.threads,
            outputs: vec![
                csv_path.display().to_string(),
                summary_path.display().to_string(),
            ],
            started_unix_ms: started,
            finished_unix_ms: finished,
            wall_ms: finished.saturating_sub(started),
        },
    )?;

    for v in &outcome.verdicts {
        let tag = if v.pass { "[ pass ]" } else { "[ FAIL ]" };
        println!("{tag} {:<36} {}", v.name, v.detail);
    }
    println!(
        "wrote {} rows to {} (summary and manifest alongside)",
        outcome.rows.len(),
        csv_path.display()
    );
    Ok(if all_pass(&outcome.verdicts) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn dispatch(command: Command, cfg: &ExperimentConfig) -> walklaw::Result<Outcome> {
    match command {
        Command::Simulate => {
            let r = run_simulate(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), r.gamma.clone(), &r)
        }
        Command::Gamma => {
            let r = run_gamma(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), Some(r.estimate.clone()), &r)
        }
        Command::Lln => {
            let r = run_lln(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), Some(r.gamma.clone()), &r)
        }
        Command::L2 => {
            let r = run_l2(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), Some(r.gamma.clone()), &r)
        }
        Command::Multirange => {
            let r = run_multirange(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), Some(r.gamma.clone()), &r)
        }
        Command::Counterexample => {
            let r = run_counterexample(cfg, &cfg.p_list.clone())?;
            Outcome::new(r.csv_rows(), r.verdicts(), Some(r.gamma.clone()), &r)
        }
        Command::Identities => {
            let r = run_identity_suite(cfg)?;
            Outcome::new(r.csv_rows(), r.verdicts(), None, &r)
        }
        Command::Shift => {
            let r = run_shift_invariance(cfg, cfg.window, &cfg.offsets)?;
            Outcome::new(r.csv_rows(), r.verdicts(), None, &r)
        }
    }
}

/// Worker thread count from `LLN_THREADS`, defaulting to the machine's
/// available parallelism. The value caps the replica pool; results are
/// identical for any setting.
fn worker_threads() -> walklaw::Result<usize> {
    match std::env::var("LLN_THREADS") {
        Ok(text) => {
            let n: usize = text.trim().parse().map_err(|_| {
                walklaw::Error::Config(format!(
                    "LLN_THREADS must be a positive thread count, got \"{text}\""
                ))
            })?;
            if n == 0 {
                return Err(walklaw::Error::Config(
                    "LLN_THREADS must be >= 1".into(),
                ));
            }
            Ok(n)
        }
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1)),
        Err(e) => Err(walklaw::Error::Config(format!("LLN_THREADS: {e}"))),
    }
}
