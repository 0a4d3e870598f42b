use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sosgen_cli::commands::{self, Outcome};
use sosgen_cli::ExperimentConfig;
use sosgen_core::geometry::Scale;
use sosgen_core::{Error, Result};

/// Plane-wave ultrasound speed-of-sound dataset generator.
#[derive(Parser)]
#[command(name = "sosgen", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<Scale>,
    #[command(subcommand)]
    command: Cmd,
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw phantoms, simulate and preprocess.
    Generate,
    /// Corrupt a dataset's raw frames and preprocess again.
    Corrupt {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// B-mode images of a dataset.
    Beamform {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Metrics of predictions against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Datasets for every configured sweep case.
    Sweep,
    /// Aggregate a sweep against predictions.
    Report {
        #[arg(long)]
        sweep: PathBuf,
        /// Predictions laid out like the sweep; the configured predictor
        /// is run when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Regenerate samples from a manifest and compare bytes.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Predictor that returns the ground truth plus an offset.
    #[command(hide = true)]
    PredictOracle {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Generate => "generate",
            Cmd::Corrupt { .. } => "corrupt",
            Cmd::Beamform { .. } => "beamform",
            Cmd::Evaluate { .. } => "evaluate",
            Cmd::Sweep => "sweep",
            Cmd::Report { .. } => "report",
            Cmd::Verify { .. } => "verify",
            Cmd::PredictOracle { .. } => "predict-oracle",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = cli.scale {
        cfg.scale = s;
        cfg.setup = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.out
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory (use --out or `out` in the config)".into()))
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Cmd::Generate => commands::cmd_generate(&cfg, out_dir(&cfg)?),
        Cmd::Corrupt { dataset } => commands::cmd_corrupt(dataset, &cfg, out_dir(&cfg)?),
        Cmd::Beamform { dataset } => {
            commands::cmd_beamform(dataset, cli.config.as_ref().map(|_| &cfg), out_dir(&cfg)?)
        }
        Cmd::Evaluate { gt, pred } => commands::cmd_evaluate(gt, pred, &cfg, out_dir(&cfg)?),
        Cmd::Sweep => commands::cmd_sweep(&cfg, out_dir(&cfg)?),
        Cmd::Report { sweep, predictions } => {
            commands::cmd_report(sweep, predictions.as_deref(), &cfg, out_dir(&cfg)?)
        }
        Cmd::Verify { dataset, count } => {
            let results = commands::verify_regeneration(dataset, *count)?;
            let failures = results
                .iter()
                .filter(|(_, same)| !same)
                .map(|(id, _)| commands::SampleFailure {
                    id: id.clone(),
                    seed: 0,
                    kind: "regeneration".into(),
                    message: "regenerated bytes differ from the stored container".into(),
                })
                .collect();
            Ok(Outcome {
                outputs: Vec::new(),
                failures,
            })
        }
        Cmd::PredictOracle { dataset, offset } => {
            let out = out_dir(&cfg)?;
            commands::predict_oracle(dataset, out, *offset)?;
            Ok(Outcome {
                outputs: vec![out.to_path_buf()],
                failures: Vec::new(),
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOSGEN_LOG", "info")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    match run(&cli) {
        Ok(o) if o.failures.is_empty() => {
            println!("{}", json!({"status": "ok", "command": command, "outputs": o.outputs}));
            ExitCode::SUCCESS
        }
        Ok(o) => {
            eprintln!(
                "{}",
                json!({"status": "failed_samples", "command": command, "outputs": o.outputs, "failures": o.failures})
            );
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({"status": "error", "command": command, "error": {"kind": e.kind(), "message": e.to_string()}})
            );
            ExitCode::from(if matches!(e, Error::Config(_) | Error::Json(_)) { 2 } else { 1 })
        }
    }
}
