use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ulmcorr::pipeline::{self, EstimatorKind, RunConfig};
use ulmcorr::Error;

#[derive(Parser)]
#[command(name = "ulmcorr", version, about = "Aberration-corrected ultrasound localization microscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long, global = true)]
    fit_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Coherence,
    Cvcnn,
    GroundTruth,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Sequence,
    Training,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a flow-phantom sequence or a training set.
    Simulate {
        #[arg(long, value_enum, default_value = "sequence")]
        kind: SimKind,
    },
    /// Delay-and-sum the simulated frames.
    Beamform {
        /// Apply the estimated aberration map.
        #[arg(long)]
        corrected: bool,
    },
    /// Localize, track and estimate per-track aberrations.
    Estimate,
    /// Train the network on the simulated training set.
    Train,
    /// Estimate one aberration per patch with a trained network.
    Infer {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Every stage from simulation to metrics.
    Pipeline,
    /// Metrics from existing ULM outputs.
    Metrics,
}

fn load_config(cli: &Cli) -> ulmcorr::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(e) = cli.estimator {
        cfg.estimator = match e {
            EstimatorArg::Coherence => EstimatorKind::Coherence,
            EstimatorArg::Cvcnn => EstimatorKind::Cvcnn,
            EstimatorArg::GroundTruth => EstimatorKind::GroundTruth,
            EstimatorArg::None => EstimatorKind::None,
        };
    }
    if let Some(f) = cli.fit_fraction {
        cfg.ulm.fit_fraction = f;
    }
    cfg.validate()?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> ulmcorr::Result<()> {
    cfg.write_snapshot()?;
    match &cli.command {
        Command::Simulate { kind: SimKind::Sequence } => {
            let s = pipeline::simulate_stage(cfg)?;
            println!("{} frames written", s.frames.len());
        }
        Command::Simulate { kind: SimKind::Training } => {
            let (t, v) = pipeline::simulate_training_stage(cfg)?;
            println!("{t} training and {v} validation patches written");
        }
        Command::Beamform { corrected } => {
            let images = pipeline::beamform_stage(cfg, *corrected)?;
            println!("{} images written", images.len());
        }
        Command::Estimate => {
            let u = pipeline::ulm_stage(cfg, false)?;
            let (e, _) = pipeline::estimate_stage(cfg)?;
            println!("{} tracks, {} estimates", u.tracks.len(), e.len());
        }
        Command::Train => {
            let h = pipeline::train_stage(cfg)?;
            if let Some(r) = h.epochs.last() {
                println!("epoch {}: train loss {:.4e}", r.epoch, r.train_loss);
            }
        }
        Command::Infer { input } => {
            let a = pipeline::infer_stage(cfg, input.as_deref())?;
            println!("{} aberration functions written", a.len());
        }
        Command::Pipeline => {
            let r = pipeline::run_pipeline(cfg)?;
            for row in &r.rows {
                println!("{:<28} {:>14.6e} {}", row.metric, row.value, row.units);
            }
        }
        Command::Metrics => {
            if cfg.out.join("ulm_after").exists() || cfg.out.join("ulm_before").exists() {
                let r = pipeline::metrics_stage(cfg)?;
                for row in &r.rows {
                    println!("{:<28} {:>14.6e} {}", row.metric, row.value, row.units);
                }
            } else {
                return Err(Error::Domain(format!("no ULM outputs under {}", cfg.out.display())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("stage failed: {e}");
            ExitCode::from(3)
        }
    }
}
