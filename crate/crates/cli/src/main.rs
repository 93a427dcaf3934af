//! `plume`: synthetic scenes, background fitting, plume detection, score
//! enhancement, multiscale anomaly detection and ROC evaluation.
//!
//! Every run writes `<out>/<subcommand>.manifest.json`; `plume replay`
//! re-runs a manifest, optionally into another directory.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use plume_core::par::{configure_threads, ExecMode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{AnomalyArgs, DetectArgs, EnhanceArgs, FitArgs, RocArgs, SynthArgs};
use manifest::{Run, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "plume",
    version,
    about = "Hyperspectral plume detection toolkit"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene or movie with ground truth.
    Synth(SynthArgs),
    /// Fit a background mixture to a cube.
    Fit(FitArgs),
    /// Detect plumes in one cube or a movie.
    Detect(DetectArgs),
    /// Resampling / PLS enhancement of an existing score map.
    Enhance(EnhanceArgs),
    /// Multiscale density model and anomaly masks.
    Anomaly(AnomalyArgs),
    /// ROC curve and AUC of a score map against a mask.
    Roc(RocArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn mode() -> ExecMode {
    ExecMode::default()
}

fn execute<A: Serialize>(
    name: &str,
    args: &A,
    out: &std::path::Path,
    seed: Option<u64>,
    threads: Option<usize>,
    body: impl FnOnce(&mut Run) -> Result<()>,
) -> Result<PathBuf> {
    let mut run = Run::new(out)?;
    body(&mut run)?;
    run.finish(name, seed, threads, serde_json::to_value(args)?)
}

fn dispatch(command: Command, threads: Option<usize>) -> Result<PathBuf> {
    match command {
        Command::Synth(mut a) => {
            a.out = std::path::absolute(&a.out)?;
            execute("synth", &a, &a.out, Some(a.seed), threads, |r| {
                commands::synth(&a, r)
            })
        }
        Command::Fit(mut a) => {
            a.resolve()?;
            a.model.spec()?;
            a.out = std::path::absolute(&a.out)?;
            execute("fit", &a, &a.out, Some(a.model.seed), threads, |r| {
                commands::fit(&a, r)
            })
        }
        Command::Detect(mut a) => {
            a.resolve()?;
            a.model.spec()?;
            a.out = std::path::absolute(&a.out)?;
            execute("detect", &a, &a.out, Some(a.model.seed), threads, |r| {
                commands::detect(&a, r, mode())
            })
        }
        Command::Enhance(mut a) => {
            a.resolve()?;
            a.model.spec()?;
            a.out = std::path::absolute(&a.out)?;
            execute("enhance", &a, &a.out, Some(a.model.seed), threads, |r| {
                commands::enhance(&a, r, mode())
            })
        }
        Command::Anomaly(mut a) => {
            a.resolve()?;
            a.rule()?;
            a.out = std::path::absolute(&a.out)?;
            execute("anomaly", &a, &a.out, Some(a.seed), threads, |r| {
                commands::anomaly(&a, r, mode())
            })
        }
        Command::Roc(mut a) => {
            a.resolve()?;
            a.out = std::path::absolute(&a.out)?;
            execute("roc", &a, &a.out, None, threads, |r| {
                commands::roc_cmd(&a, r)
            })
        }
        Command::Replay(a) => replay(&a, threads),
    }
}

fn recorded<T: DeserializeOwned>(m: &RunManifest) -> Result<T> {
    serde_json::from_value(m.config.clone())
        .with_context(|| format!("manifest config for '{}' is malformed", m.subcommand))
}

fn replay(args: &ReplayArgs, threads: Option<usize>) -> Result<PathBuf> {
    let m = RunManifest::load(&args.manifest)?;
    let out = |recorded: PathBuf| args.out.clone().unwrap_or(recorded);
    let command = match m.subcommand.as_str() {
        "synth" => {
            let mut a: SynthArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Synth(a)
        }
        "fit" => {
            let mut a: FitArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Fit(a)
        }
        "detect" => {
            let mut a: DetectArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Detect(a)
        }
        "enhance" => {
            let mut a: EnhanceArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Enhance(a)
        }
        "anomaly" => {
            let mut a: AnomalyArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Anomaly(a)
        }
        "roc" => {
            let mut a: RocArgs = recorded(&m)?;
            a.out = out(a.out);
            Command::Roc(a)
        }
        other => anyhow::bail!(
            "manifest {} names unknown subcommand '{other}'",
            args.manifest.display()
        ),
    };
    dispatch(command, threads)
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn diagnostic(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = one_line(&cause.to_string());
        if parts.last().is_none_or(|prev| !prev.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        configure_threads(t);
    }
    match dispatch(cli.command, cli.threads) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
