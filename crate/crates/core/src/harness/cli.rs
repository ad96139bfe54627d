use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{error, info};

use super::config::{ExperimentConfig, ExperimentKind, Seeds};
use super::dataset::load_dataset;
use super::evaluate::evaluate;
use super::report::write_report;
use super::run::{pretrain, run_experiment, ExperimentRecord, Variant};
use crate::data::{write_dataset, PreprocessConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::net::{load_checkpoint, NetworkSpec};
use crate::surgery::Preset;

#[derive(Debug, Parser)]
#[command(name = "netsurgery", version, about = "Transfer learning, layer probing and network surgery experiments")]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic binary dataset (PPM images plus manifest.csv) into --out.
    PrepareData {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 72)]
        size: usize,
    },
    /// Train the source network on the synthetic pretraining task.
    Pretrain,
    /// Cross-validated fine-tuning of the whole network.
    Finetune,
    /// Cross-validated training after applying a surgery preset.
    Surgery {
        #[arg(long)]
        preset: Preset,
    },
    /// Layer-wise linear probes of the source network.
    Probe,
    /// Score a saved checkpoint on the configured dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        oversample: bool,
    },
    /// Aggregate every experiment under --out into report.csv and report.md.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = Seeds::all(s);
        if let Some(syn) = cfg.dataset.synthetic.as_mut() {
            syn.seed = s;
        }
        cfg.pretrain.synthetic.seed = s;
    }
    Ok(cfg)
}

fn print_record(r: &ExperimentRecord) {
    for v in [Variant::Single, Variant::Oversampled] {
        if let Some(s) = r.summary(v) {
            let accs: Vec<String> = s
                .fold_accuracies
                .iter()
                .map(|a| a.map_or("-".into(), |a| format!("{a:.3}")))
                .collect();
            let mean = s.summary.map_or("n/a".into(), |m| m.to_string());
            println!("{} {}: {mean} [{}]", r.row, v.name(), accs.join(", "));
        }
    }
    if let Some(p) = &r.probe {
        print!("{}", p.to_markdown());
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::PrepareData { count, size } => {
            let syn = cfg.dataset.synthetic.clone().unwrap_or_else(|| {
                SynthConfig::task_b(*count, *size, cfg.seeds.folds)
            });
            let m = write_dataset(&syn, out)?;
            let (neg, pos) = m.class_counts();
            println!("wrote {} images ({pos} positive, {neg} negative) to {}", m.len(), out.display());
        }
        Command::Pretrain => {
            let r = pretrain(&cfg, out)?;
            println!(
                "pretrained {} epochs, train accuracy {:.3}: {}",
                r.epochs_run,
                r.train_accuracy,
                r.checkpoint.display()
            );
        }
        Command::Finetune | Command::Surgery { .. } | Command::Probe => {
            match &cli.command {
                Command::Finetune => cfg.experiment.kind = ExperimentKind::Finetune,
                Command::Surgery { preset } => {
                    cfg.experiment.kind = ExperimentKind::Surgery;
                    cfg.experiment.preset = Some(*preset);
                }
                _ => cfg.experiment.kind = ExperimentKind::Probe,
            }
            let r = run_experiment(&cfg, Some(out))?;
            print_record(&r);
            if r.any_diverged() {
                error!("{}: training diverged on at least one fold", r.row);
                return Ok(3);
            }
        }
        Command::Evaluate { checkpoint, oversample } => {
            let ev = evaluate_checkpoint(&cfg, checkpoint, *oversample)?;
            println!("{}", serde_json::to_string_pretty(&ev).map_err(|e| Error::Data(e.to_string()))?);
        }
        Command::Report => {
            let (csv, md) = write_report(out)?;
            info!("wrote {} and {}", csv.display(), md.display());
            print!("{}", std::fs::read_to_string(&md).map_err(|e| Error::io(&md, e))?);
        }
    }
    Ok(0)
}

/// Scores a checkpoint written by a training run (it carries its network and mean) on the configured dataset.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path, oversample: bool) -> Result<super::evaluate::Evaluation> {
    let ckpt = load_checkpoint(path)?;
    let spec: NetworkSpec = serde_json::from_str(
        ckpt.meta("spec")
            .ok_or_else(|| Error::Data(format!("{}: checkpoint carries no network description", path.display())))?,
    )
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    ckpt.validate_against(&spec)?;
    let base = cfg.preprocess();
    let mean = match (cfg.preprocess.mean, ckpt.meta("mean")) {
        (Some(m), _) => m,
        (None, Some(s)) => super::run::parse_mean_meta(s)
            .ok_or_else(|| Error::Data(format!("{}: malformed mean metadata", path.display())))?,
        (None, None) => return Err(Error::Config("no mean in the config or the checkpoint".into())),
    };
    let pp = PreprocessConfig { mean, ..base };
    let data = load_dataset(cfg.dataset.manifest.as_deref(), cfg.dataset.synthetic.as_ref(), pp.resize_to)?;
    evaluate(&spec, &ckpt, &data.bases, &data.labels, &pp, oversample, cfg.experiment.fusion)
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
