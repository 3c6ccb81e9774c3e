use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pmi_core::designs::Scheme;
use pmi_experiments::config::parse_list;
use pmi_experiments::verify::run_theory_verification;
use pmi_experiments::{run, with_threads, ChannelDataset, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "pmi", version, about = "Channel estimation from PMI feedback: experiments and datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MLE phase-aligned MSE against the trace Cramér-Rao bound.
    CrbExperiment(RunArgs),
    /// Beam precision of all estimators on FDD-style channels.
    FddExperiment(RunArgs),
    /// Sweep the MLE temperature.
    AblateTau(RunArgs),
    /// Compare MLE initializations.
    AblateInit(RunArgs),
    /// Numerical checks of the theory; exits nonzero on any failure.
    VerifyTheory(RunArgs),
    /// Write a synthetic channel dataset.
    DatasetMake(MakeArgs),
    /// Print a dataset's header and summary statistics.
    DatasetInspect { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    /// MLE Frobenius-ball radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Comma-separated round counts, e.g. 1,5,10,20.
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Channel samples for the synthetic generator.
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated stream counts.
    #[arg(long)]
    streams: Option<String>,
    /// Comma-separated temperatures for ablate-tau.
    #[arg(long)]
    tau_grid: Option<String>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MakeArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    n_r: usize,
    #[arg(long, default_value_t = 4)]
    paths: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn build_config(kind: ExperimentKind, a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_json_file(path, kind)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.experiment != kind {
        anyhow::bail!(
            "config names experiment `{}` but the subcommand runs `{}`",
            cfg.experiment.name(),
            kind.name()
        );
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.radius {
        cfg.radius = Some(v);
    }
    if let Some(v) = &a.rounds {
        cfg.rounds = parse_list(v)?;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if let Some(v) = &a.streams {
        cfg.streams = parse_list(v)?;
    }
    if let Some(v) = &a.tau_grid {
        cfg.tau_grid = parse_list(v)?;
    }
    if let Some(v) = a.scheme {
        cfg.scheme = v;
    }
    if let Some(v) = &a.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = a.threads {
        cfg.threads = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_experiment(kind: ExperimentKind, args: &RunArgs) -> Result<ExitCode> {
    let cfg = build_config(kind, args)?;
    let start = Instant::now();
    let (output, ok) = if kind == ExperimentKind::VerifyTheory {
        let report = with_threads(cfg.threads, || run_theory_verification(&cfg))??;
        for check in &report.checks {
            println!("{}", check.line());
        }
        (report.output(), report.passed())
    } else {
        (run(&cfg)?, true)
    };
    let files = output
        .write(&cfg.out)
        .with_context(|| format!("writing results to {}", cfg.out.display()))?;
    // Wall time is kept out of the CSVs so they stay byte-reproducible.
    let timing = cfg.out.join("timing.txt");
    std::fs::write(&timing, format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64()))
        .with_context(|| format!("writing {}", timing.display()))?;
    std::fs::write(cfg.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    if !output.fit.is_empty() {
        print!("{}", output.fit_text());
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn inspect(path: &Path) -> Result<()> {
    let ds = ChannelDataset::read(path)?;
    println!("file: {}", path.display());
    println!("d = {}, n_r = {}, samples = {}", ds.d, ds.n_r, ds.len());
    println!("covariances: {}", if ds.covariances.is_some() { "yes" } else { "no" });
    if !ds.is_empty() {
        let norms: Vec<f64> = ds.channels.iter().map(|h| h.norm()).collect();
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = norms.iter().copied().fold(0.0, f64::max);
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        println!("channel Frobenius norm: min {min:.6}, mean {mean:.6}, max {max:.6}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CrbExperiment(a) => run_experiment(ExperimentKind::Crb, a),
        Command::FddExperiment(a) => run_experiment(ExperimentKind::Fdd, a),
        Command::AblateTau(a) => run_experiment(ExperimentKind::AblateTau, a),
        Command::AblateInit(a) => run_experiment(ExperimentKind::AblateInit, a),
        Command::VerifyTheory(a) => run_experiment(ExperimentKind::VerifyTheory, a),
        Command::DatasetMake(m) => ChannelDataset::synthetic(m.d, m.n_r, m.paths, m.samples, m.seed)
            .map_err(anyhow::Error::from)
            .and_then(|ds| {
                ds.write(&m.out)?;
                println!("wrote {} samples to {}", ds.len(), m.out.display());
                Ok(ExitCode::SUCCESS)
            }),
        Command::DatasetInspect { path } => inspect(path).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
