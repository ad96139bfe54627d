use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind, Fusion};
use super::dataset::{class_index, load_dataset, Dataset, ViewSource};
use super::evaluate::{center_accuracy, evaluate, Evaluation};
use crate::data::{mean_of, split, view_of, write_mean, PreprocessConfig, CENTER};
use crate::error::{Error, Result};
use crate::net::{init_params_with, load_checkpoint, save_checkpoint, Checkpoint, EndpointMode, NetworkSpec};
use crate::optim::{train, EpochRecord, TensorSamples, TrainOutcome, Validator};
use crate::probe::{extract_features, probe_all_layers, probe_selected_folds, FeatureMatrix, ProbeReport};
use crate::stats::{summarize, Summary};
use crate::surgery::{apply_preset, Preset, SurgeryReport};

/// Outcome of one held-out fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub base_lr: f64,
    pub epochs_run: usize,
    /// Epoch at which training diverged; such folds have no evaluations.
    pub diverged_at: Option<usize>,
    pub single: Option<Evaluation>,
    pub oversampled: Option<Evaluation>,
    pub surgery: Option<SurgeryReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Single,
    Oversampled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::Oversampled => "oversampled",
        }
    }
}

/// Everything needed to rebuild a report row; persisted as `experiment.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub family: String,
    pub row: String,
    pub folds: Vec<FoldRecord>,
    pub probe: Option<ProbeReport>,
    pub assumptions: Vec<String>,
}

/// Aggregate over folds for one evaluation variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<Option<f64>>,
    pub per_class: Vec<[Option<f64>; 2]>,
    pub summary: Option<Summary>,
    pub degenerate: bool,
}

impl ExperimentRecord {
    pub fn evaluations(&self, variant: Variant) -> Vec<Option<&Evaluation>> {
        self.folds
            .iter()
            .map(|f| match variant {
                Variant::Single => f.single.as_ref(),
                Variant::Oversampled => f.oversampled.as_ref(),
            })
            .collect()
    }

    /// Recomputes the aggregate from the fold records; `None` if the variant was not run.
    pub fn summary(&self, variant: Variant) -> Option<CvSummary> {
        let evals = self.evaluations(variant);
        if evals.iter().all(Option::is_none) && self.folds.iter().any(|f| f.diverged_at.is_none()) {
            return None;
        }
        let accs: Vec<Option<f64>> = evals.iter().map(|e| e.map(|e| e.accuracy)).collect();
        let present: Vec<f64> = accs.iter().flatten().copied().collect();
        Some(CvSummary {
            per_class: evals.iter().map(|e| e.map_or([None, None], |e| e.per_class)).collect(),
            summary: summarize(&present).ok(),
            degenerate: evals.iter().flatten().any(|e| e.degenerate),
            fold_accuracies: accs,
        })
    }

    pub fn any_diverged(&self) -> bool {
        self.folds.iter().any(|f| f.diverged_at.is_some())
    }
}

fn mean_meta(mean: [f32; 3]) -> String {
    format!("{} {} {}", mean[0], mean[1], mean[2])
}

pub(crate) fn parse_mean_meta(s: &str) -> Option<[f32; 3]> {
    let v: Vec<f32> = s.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

/// The network experiments start from: a pretrained checkpoint (with its embedded network
/// description when present) or a freshly initialized one.
pub fn source_network(cfg: &ExperimentConfig) -> Result<(NetworkSpec, Checkpoint)> {
    let exp = &cfg.experiment;
    let (spec, ckpt) = match &exp.pretrained {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let spec = match ckpt.meta("spec") {
                Some(json) => serde_json::from_str(json)
                    .map_err(|e| Error::Data(format!("{}: embedded network: {e}", path.display())))?,
                None => exp.architecture.build(exp.source_classes),
            };
            ckpt.validate_against(&spec)?;
            (spec, ckpt)
        }
        None => {
            let spec = exp.architecture.build(exp.source_classes);
            let ckpt = init_params_with(&spec, cfg.seeds.init, exp.init)?;
            (spec, ckpt)
        }
    };
    let crop = cfg.preprocess().crop;
    if spec.input_shape != [3, crop, crop] {
        return Err(Error::Config(format!(
            "network expects input {:?} but preprocess.crop is {crop}",
            spec.input_shape
        )));
    }
    Ok((spec, ckpt))
}

/// Fixed mean from the config, else the one stored with the checkpoint.
fn configured_mean(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Option<[f32; 3]> {
    cfg.preprocess.mean.or_else(|| ckpt.meta("mean").and_then(parse_mean_meta))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["epoch", "loss", "train_acc", "val_acc"]).map_err(e)?;
    for h in history {
        let val = h.val_acc.map_or(String::new(), |v| v.to_string());
        w.write_record([h.epoch.to_string(), h.loss.to_string(), h.train_acc.to_string(), val])
            .map_err(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Checks that held-out indices never appear in the training list and that together they cover the data.
pub fn audit_split(train: &[usize], test: &[usize], n: usize) -> Result<()> {
    let tr: BTreeSet<usize> = train.iter().copied().collect();
    let te: BTreeSet<usize> = test.iter().copied().collect();
    if tr.len() != train.len() || te.len() != test.len() {
        return Err(Error::Data("split repeats an index".into()));
    }
    if let Some(i) = tr.intersection(&te).next() {
        return Err(Error::Data(format!("index {i} is in both the training and the held-out set")));
    }
    if tr.len() + te.len() != n || tr.iter().chain(&te).any(|&i| i >= n) {
        return Err(Error::Data("split does not cover the dataset".into()));
    }
    Ok(())
}

fn assumptions(cfg: &ExperimentConfig, probe: bool) -> Vec<String> {
    let mut out = vec!["± is the sample (n-1) standard deviation over folds.".to_string()];
    if probe {
        out.push(format!(
            "Probe features: single centre view; columns {}; lambda chosen by {}-fold inner cross-validation (ties to the smaller value).",
            if cfg.experiment.probe.standardize {
                "standardized with training-fold statistics"
            } else {
                "used unstandardized"
            },
            cfg.experiment.probe.inner_folds
        ));
        return out;
    }
    let d = crate::optim::TrainConfig::default();
    let defaulted = cfg.train.defaulted();
    if !defaulted.is_empty() {
        let vals: Vec<String> = defaulted
            .iter()
            .map(|k| match *k {
                "momentum" => format!("momentum {}", d.momentum),
                "weight_decay" => format!("weight decay {}", d.weight_decay),
                _ => format!("batch size {}", d.batch_size),
            })
            .collect();
        out.push(format!("Unstated hyperparameters at defaults: {}.", vals.join(", ")));
    }
    if cfg.preprocess.mean.is_none() {
        out.push("Per-channel means computed from each fold's training images.".into());
    }
    out.push(match cfg.experiment.fusion {
        Fusion::PostSoftmax => "Oversampling averages post-softmax scores over 10 views.".into(),
        Fusion::PreSoftmax => "Oversampling averages pre-softmax scores over 10 views.".into(),
    });
    if let Ok(Some(p)) = cfg.experiment.preset() {
        if p == Preset::Fc8x1000 {
            out.push("Wide-head label map: positive -> output 0, negative -> output 1; other outputs count as errors.".into());
        }
    }
    out
}

/// Trains and evaluates the configured preset on every fold; diverged folds are recorded as gaps.
pub fn cross_validate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let preset = cfg
        .experiment
        .preset()?
        .ok_or_else(|| Error::Config("cross_validate needs a finetune or surgery experiment".into()))?;
    let base_pp = cfg.preprocess();
    let data = load_dataset(cfg.dataset.manifest.as_deref(), cfg.dataset.synthetic.as_ref(), base_pp.resize_to)?;
    let folds = data.fold_assignment(cfg.k(), cfg.seeds.folds)?;
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let (src_spec, src_ckpt) = source_network(cfg)?;
    let oversample = cfg.experiment.oversample && base_pp.crop < base_pp.resize_to;
    if cfg.experiment.oversample && !oversample {
        warn!("oversampling disabled: crop must be smaller than resize_to");
    }
    let row = cfg.experiment.row_name();
    let dir = out.map(|o| o.join(&row));
    let mut records = Vec::with_capacity(k);
    for f in 0..k {
        let (train_idx, test_idx) = split(&folds, f);
        audit_split(&train_idx, &test_idx, data.len())?;
        let mean = cfg
            .preprocess
            .mean
            .unwrap_or_else(|| mean_of(train_idx.iter().map(|&i| &data.bases[i])));
        let pp = PreprocessConfig { mean, ..base_pp.clone() };
        let (spec, ckpt, report, plan) = apply_preset(preset, &src_spec, &src_ckpt, cfg.seeds.init.wrapping_add(f as u64))?;
        let tc = cfg.train.resolve(plan.base_lr, cfg.seeds.train.wrapping_add(f as u64));
        let width = spec.output_width()?;
        let source = ViewSource::new(&data, &train_idx, width, pp.clone());
        let test = data.subset(&test_idx);
        let val = |c: &Checkpoint| center_accuracy(&spec, c, &test.bases, &test.labels, &pp);
        let validator: Option<Validator> = if cfg.experiment.track_val { Some(&val) } else { None };
        info!("{row} fold {f}: {} train / {} test, base_lr {}", train_idx.len(), test_idx.len(), tc.base_lr);
        let mut record = FoldRecord {
            fold: f,
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            base_lr: tc.base_lr,
            epochs_run: 0,
            diverged_at: None,
            single: None,
            oversampled: None,
            surgery: Some(report),
        };
        let trained = match train(&spec, &ckpt, &source, &tc, validator) {
            Ok(t) => Some(t),
            Err(Error::Divergence { epoch, loss }) => {
                warn!("{row} fold {f}: diverged at epoch {epoch} (loss {loss})");
                record.diverged_at = Some(epoch);
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(TrainOutcome { mut checkpoint, history }) = trained {
            record.epochs_run = history.len();
            record.single = Some(evaluate(&spec, &checkpoint, &test.bases, &test.labels, &pp, false, cfg.experiment.fusion)?);
            if oversample {
                record.oversampled =
                    Some(evaluate(&spec, &checkpoint, &test.bases, &test.labels, &pp, true, cfg.experiment.fusion)?);
            }
            if let Some(d) = &dir {
                let fd = d.join(format!("fold_{f}"));
                mkdir(&fd)?;
                checkpoint.set_meta("spec", serde_json::to_string(&spec).map_err(|e| Error::Data(e.to_string()))?);
                checkpoint.set_meta("mean", mean_meta(mean));
                checkpoint.set_meta("fold", f);
                save_checkpoint(&checkpoint, fd.join("checkpoint.nsrg"))?;
                write_history(&history, &fd.join("history.csv"))?;
                write_mean(mean, &fd.join("mean.txt"))?;
            }
        }
        if let Some(d) = &dir {
            let fd = d.join(format!("fold_{f}"));
            mkdir(&fd)?;
            write_json(&record, &fd.join("result.json"))?;
        }
        records.push(record);
    }
    let record = ExperimentRecord {
        family: preset.family().to_string(),
        row,
        folds: records,
        probe: None,
        assumptions: assumptions(cfg, false),
    };
    if let Some(d) = &dir {
        write_json(&record, &d.join("experiment.json"))?;
    }
    Ok(record)
}

/// Layer-wise linear probes of the source network under the rotating fold protocol.
pub fn run_probe(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let base_pp = cfg.preprocess();
    let data = load_dataset(cfg.dataset.manifest.as_deref(), cfg.dataset.synthetic.as_ref(), base_pp.resize_to)?;
    let folds = data.fold_assignment(cfg.k(), cfg.seeds.folds)?;
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let (spec, ckpt) = source_network(cfg)?;
    let endpoints = if cfg.experiment.endpoints.is_empty() {
        spec.probe_endpoints()
    } else {
        cfg.experiment.endpoints.clone()
    };
    let mut opts = cfg.experiment.probe.clone();
    opts.seed = cfg.seeds.probe;
    let extract = |mean: [f32; 3], rows: &[usize]| -> Result<IndexMap<String, FeatureMatrix>> {
        let pp = PreprocessConfig { mean, ..base_pp.clone() };
        let view = |i: usize| Ok(view_of(&data.bases[rows[i]], &pp, CENTER)?.tensor);
        extract_features(&spec, &ckpt, rows.len(), &view, &endpoints, EndpointMode::PostActivation, 32)
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let report = match configured_mean(cfg, &ckpt) {
        Some(mean) => {
            let features = extract(mean, &all)?;
            probe_all_layers(&features, &data.labels, &folds, &cfg.experiment.probe_kinds, &opts)?
        }
        None => {
            // a mean from each fold's training rows means one extraction per fold
            let mut merged: Option<ProbeReport> = None;
            for f in 0..k {
                let (tr, _) = split(&folds, f);
                let mean = mean_of(tr.iter().map(|&i| &data.bases[i]));
                let features = extract(mean, &all)?;
                let part =
                    probe_selected_folds(&features, &data.labels, &folds, &[f], &cfg.experiment.probe_kinds, &opts)?;
                match &mut merged {
                    None => merged = Some(part),
                    Some(m) => {
                        for (r, p) in m.rows.iter_mut().zip(part.rows) {
                            r.fold_accuracies.extend(p.fold_accuracies);
                            r.lambdas.extend(p.lambdas);
                        }
                    }
                }
            }
            merged.expect("at least two folds")
        }
    };
    let record = ExperimentRecord {
        family: "probe".into(),
        row: cfg.experiment.row_name(),
        folds: Vec::new(),
        probe: Some(report),
        assumptions: assumptions(cfg, true),
    };
    if let Some(o) = out {
        let d = o.join(&record.row);
        mkdir(&d)?;
        write_json(&record, &d.join("experiment.json"))?;
        if let Some(p) = &record.probe {
            fs::write(d.join("probe.csv"), p.to_csv()?).map_err(|e| Error::io(d.join("probe.csv"), e))?;
        }
    }
    Ok(record)
}

/// Runs the experiment the config describes.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentRecord> {
    match cfg.experiment.kind {
        ExperimentKind::Probe => run_probe(cfg, out),
        _ => cross_validate(cfg, out),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainResult {
    pub checkpoint: PathBuf,
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

/// Trains the configured architecture on the multi-class synthetic pretraining task.
pub fn pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<PretrainResult> {
    let p = &cfg.pretrain;
    p.synthetic.validate()?;
    let pp = cfg.preprocess();
    pp.validate()?;
    let classes = p.synthetic.patterns.len();
    let spec = p.architecture.build(classes);
    if spec.input_shape != [3, pp.crop, pp.crop] {
        return Err(Error::Config(format!(
            "pretraining network expects input {:?} but preprocess.crop is {}",
            spec.input_shape, pp.crop
        )));
    }
    let ckpt = init_params_with(&spec, cfg.seeds.init, p.init)?;
    let data = Dataset::synthetic(&p.synthetic, pp.resize_to)?;
    let mean = cfg.preprocess.mean.unwrap_or_else(|| mean_of(&data.bases));
    let pp = PreprocessConfig { mean, ..pp };
    let tc = p.train.resolve(None, cfg.seeds.train);
    let indices: Vec<usize> = (0..data.len()).collect();
    // pretraining labels are pattern indices, not binary labels
    let classes_of: Vec<usize> = (0..data.len()).map(|i| p.synthetic.label(i)).collect();
    let mut source = ViewSource::new(&data, &indices, 2, pp.clone());
    source.classes = classes_of;
    let outcome = train(&spec, &ckpt, &source, &tc, None)?;
    let mut checkpoint = outcome.checkpoint;
    checkpoint.set_meta("spec", serde_json::to_string(&spec).map_err(|e| Error::Data(e.to_string()))?);
    checkpoint.set_meta("mean", mean_meta(mean));
    mkdir(out)?;
    let path = out.join("pretrained.nsrg");
    save_checkpoint(&checkpoint, &path)?;
    write_history(&outcome.history, &out.join("pretrain_history.csv"))?;
    write_mean(mean, &out.join("mean.txt"))?;
    let result = PretrainResult {
        checkpoint: path,
        train_accuracy: outcome.history.last().map_or(0.0, |h| h.train_acc),
        epochs_run: outcome.history.len(),
    };
    write_json(&result, &out.join("pretrain.json"))?;
    Ok(result)
}

/// Inputs stacked as plain tensors, for callers that bypass augmentation.
pub fn center_samples(data: &Dataset, indices: &[usize], width: usize, config: &PreprocessConfig) -> Result<TensorSamples> {
    let inputs = indices
        .iter()
        .map(|&i| Ok(view_of(&data.bases[i], config, CENTER)?.tensor))
        .collect::<Result<Vec<_>>>()?;
    Ok(TensorSamples {
        inputs,
        labels: indices.iter().map(|&i| class_index(data.labels[i], width)).collect(),
    })
}
