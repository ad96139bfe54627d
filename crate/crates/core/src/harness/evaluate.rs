use serde::{Deserialize, Serialize};

use super::config::Fusion;
use super::dataset::{class_index, label_of_class};
use crate::data::{ten_crop_base, view_of, Image, PreprocessConfig, CENTER};
use crate::error::{Error, Result};
use crate::net::{run_forward, Checkpoint, ForwardOptions, NetworkSpec};
use crate::tensor::Tensor;

/// Accuracy and confusion of a binary evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows: true negative / positive. Columns: predicted negative / positive / other output.
    pub confusion: [[usize; 3]; 2],
    /// Accuracy within each true class, `None` for an absent class.
    pub per_class: [Option<f64>; 2],
    /// Some binary class was never predicted.
    pub degenerate: bool,
}

impl Evaluation {
    pub fn from_predictions(labels: &[u8], predicted: &[usize], width: usize) -> Result<Self> {
        if labels.is_empty() || labels.len() != predicted.len() {
            return Err(Error::invalid("evaluation needs one prediction per label and a nonempty set"));
        }
        let mut confusion = [[0usize; 3]; 2];
        for (&l, &p) in labels.iter().zip(predicted) {
            let col = label_of_class(p, width).map_or(2, |b| b as usize);
            confusion[l as usize][col] += 1;
        }
        let correct = confusion[0][0] + confusion[1][1];
        let per_class = std::array::from_fn(|c| {
            let n: usize = confusion[c].iter().sum();
            (n > 0).then(|| confusion[c][c] as f64 / n as f64)
        });
        let col = |j: usize| confusion[0][j] + confusion[1][j];
        Ok(Evaluation {
            accuracy: correct as f64 / labels.len() as f64,
            confusion,
            per_class,
            degenerate: col(0) == 0 || col(1) == 0,
        })
    }
}

fn scores_of(fwd: crate::net::Forward, fusion: Fusion) -> Tensor {
    match fusion {
        Fusion::PostSoftmax => fwd.output,
        Fusion::PreSoftmax => fwd.logits,
    }
}

/// Class scores per image: the centre view alone, or the mean over the ten oversampling views.
pub fn image_scores(
    spec: &NetworkSpec,
    ckpt: &Checkpoint,
    bases: &[Image],
    config: &PreprocessConfig,
    oversample: bool,
    fusion: Fusion,
) -> Result<Vec<Vec<f32>>> {
    let per_batch = if oversample { 8 } else { 64 };
    let mut out = Vec::with_capacity(bases.len());
    for chunk in bases.chunks(per_batch) {
        let mut views = Vec::new();
        for b in chunk {
            if oversample {
                views.extend(ten_crop_base(b, config)?.into_iter().map(|v| v.tensor));
            } else {
                views.push(view_of(b, config, CENTER)?.tensor);
            }
        }
        let scores = scores_of(
            run_forward(spec, ckpt, &Tensor::stack(&views)?, &ForwardOptions::default())?,
            fusion,
        );
        let width = scores.shape()[1];
        let per_image = if oversample { 10 } else { 1 };
        for block in scores.data().chunks(width * per_image) {
            out.push(fuse(block, width));
        }
    }
    Ok(out)
}

/// Elementwise mean of consecutive `width`-long score vectors.
pub fn fuse(block: &[f32], width: usize) -> Vec<f32> {
    let n = block.len() / width;
    let mut acc = vec![0.0f64; width];
    for row in block.chunks(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|a| (a / n as f64) as f32).collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(
    spec: &NetworkSpec,
    ckpt: &Checkpoint,
    bases: &[Image],
    labels: &[u8],
    config: &PreprocessConfig,
    oversample: bool,
    fusion: Fusion,
) -> Result<Evaluation> {
    if bases.is_empty() {
        return Err(Error::Data("cannot evaluate an empty subset".into()));
    }
    let width = spec.output_width()?;
    let predicted: Vec<usize> = image_scores(spec, ckpt, bases, config, oversample, fusion)?
        .iter()
        .map(|s| argmax(s))
        .collect();
    Evaluation::from_predictions(labels, &predicted, width)
}

/// Fraction of `labels` matching `class_index` predictions; convenience for histories.
pub fn center_accuracy(
    spec: &NetworkSpec,
    ckpt: &Checkpoint,
    bases: &[Image],
    labels: &[u8],
    config: &PreprocessConfig,
) -> Result<f64> {
    let width = spec.output_width()?;
    let scores = image_scores(spec, ckpt, bases, config, false, Fusion::PreSoftmax)?;
    let ok = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| argmax(s) == class_index(l, width))
        .count();
    Ok(ok as f64 / labels.len() as f64)
}
