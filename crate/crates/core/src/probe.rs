//! Linear probes (SVM and softmax) on frozen layer activations.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{split, stratified_kfold};
use crate::error::{Error, Result};
use crate::net::{run_forward, Checkpoint, EndpointMode, ForwardOptions, NetworkSpec};
use crate::stats::{summarize, Summary};
use crate::tensor::{axpy, dot, Tensor};

/// Row-major `rows x cols` activations, one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols || cols == 0 {
            return Err(Error::shape(format!(
                "feature matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature extraction".into()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Flattened activations at `endpoints` for `n` inputs produced by `view`, in index order.
pub fn extract_features(
    spec: &NetworkSpec,
    ckpt: &Checkpoint,
    n: usize,
    view: &dyn Fn(usize) -> Result<Tensor>,
    endpoints: &[String],
    mode: EndpointMode,
    batch_size: usize,
) -> Result<IndexMap<String, FeatureMatrix>> {
    let shapes = spec.infer_shapes()?;
    let mut out: IndexMap<String, Vec<f32>> = IndexMap::new();
    let mut dims = Vec::new();
    for e in endpoints {
        let idx = spec.resolve_endpoint(e, mode)?;
        let d: usize = shapes[idx].iter().product();
        out.insert(e.clone(), Vec::with_capacity(n * d));
        dims.push(d);
    }
    let opts = ForwardOptions {
        endpoints: endpoints.to_vec(),
        mode,
        retain: false,
    };
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let views = chunk.iter().map(|&i| view(i)).collect::<Result<Vec<_>>>()?;
        let fwd = run_forward(spec, ckpt, &Tensor::stack(&views)?, &opts)?;
        for (name, act) in fwd.activations {
            out[&name].extend_from_slice(act.data());
        }
    }
    out.into_iter()
        .zip(dims)
        .map(|((name, data), d)| Ok((name, FeatureMatrix::new(n, d, data)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeKind {
    Svm,
    Softmax,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 2] = [ProbeKind::Svm, ProbeKind::Softmax];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Svm => "svm",
            ProbeKind::Softmax => "softmax",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(ProbeKind::Svm),
            "softmax" => Ok(ProbeKind::Softmax),
            _ => Err(Error::Config(format!("unknown probe kind `{s}` (svm or softmax)"))),
        }
    }
}

impl Serialize for ProbeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ProbeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
    /// Standardize columns with statistics of the training rows.
    pub standardize: bool,
    pub svm_steps: usize,
    pub softmax_steps: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            inner_folds: 3,
            standardize: true,
            svm_steps: 2000,
            softmax_steps: 1000,
            seed: 0,
        }
    }
}

impl ProbeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config("probe lambda grid must hold positive values".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config("probe inner_folds must be at least 2".into()));
        }
        if self.svm_steps == 0 || self.softmax_steps == 0 {
            return Err(Error::Config("probe step budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows as f64;
        let mut mean = vec![0.0f64; x.cols];
        for r in 0..x.rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; x.cols];
        for r in 0..x.rows {
            for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-8 {
                    sd as f32
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut data = x.data.clone();
        for row in data.chunks_mut(x.cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        FeatureMatrix { data, ..*x }
    }
}

/// Linear classifier on (optionally standardized) features; the bias is regularized like a weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub lambda: f64,
    /// One row of `cols` weights per score: 1 for SVM, 2 for softmax.
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
    pub standardizer: Option<Standardizer>,
    /// Inner cross-validation accuracy per grid value.
    pub inner_cv: Vec<(f64, f64)>,
}

impl ProbeModel {
    pub fn scores(&self, x: &FeatureMatrix) -> Vec<Vec<f32>> {
        let z = self.standardizer.as_ref().map(|s| s.apply(x));
        let x = z.as_ref().unwrap_or(x);
        (0..x.rows)
            .map(|r| {
                self.weights
                    .iter()
                    .zip(&self.bias)
                    .map(|(w, b)| dot(x.row(r), w) + b)
                    .collect()
            })
            .collect()
    }

    /// Predicted labels; ties go to class 0.
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<u8> {
        self.scores(x)
            .into_iter()
            .map(|s| match self.kind {
                ProbeKind::Svm => u8::from(s[0] > 0.0),
                ProbeKind::Softmax => u8::from(s[1] > s[0]),
            })
            .collect()
    }

    pub fn accuracy(&self, x: &FeatureMatrix, y: &[u8]) -> f64 {
        let p = self.predict(x);
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }
}

/// Full-batch Pegasos-style subgradient descent on mean hinge + (lambda/2)|w|^2,
/// step 1/(lambda t), averaging the iterates of the second half.
fn train_svm(x: &FeatureMatrix, y: &[u8], lambda: f64, steps: usize) -> (Vec<f32>, f32) {
    let (n, d) = (x.rows, x.cols);
    let sign: Vec<f32> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let radius = (1.0 / lambda).sqrt();
    let (mut w, mut b) = (vec![0.0f32; d], 0.0f32);
    let (mut avg_w, mut avg_b, mut count) = (vec![0.0f64; d], 0.0f64, 0usize);
    let mut acc = vec![0.0f32; d];
    for t in 1..=steps {
        let eta = 1.0 / (lambda * t as f64);
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut acc_b = 0.0f32;
        for (i, &sg) in sign.iter().enumerate() {
            let s = dot(x.row(i), &w) + b;
            if sg * s < 1.0 {
                axpy(sg, x.row(i), &mut acc);
                acc_b += sg;
            }
        }
        let shrink = (1.0 - eta * lambda) as f32;
        let step = (eta / n as f64) as f32;
        for (wi, ai) in w.iter_mut().zip(&acc) {
            *wi = shrink * *wi + step * ai;
        }
        b = shrink * b + step * acc_b;
        let norm = (dot(&w, &w) as f64 + (b * b) as f64).sqrt();
        if norm > radius {
            let k = (radius / norm) as f32;
            w.iter_mut().for_each(|v| *v *= k);
            b *= k;
        }
        if t > steps / 2 {
            for (a, &v) in avg_w.iter_mut().zip(&w) {
                *a += v as f64;
            }
            avg_b += b as f64;
            count += 1;
        }
    }
    let c = count as f64;
    (avg_w.into_iter().map(|v| (v / c) as f32).collect(), (avg_b / c) as f32)
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration.
fn gram_norm(x: &FeatureMatrix) -> f64 {
    let (n, d) = (x.rows, x.cols);
    let mut v = vec![1.0f32; d];
    let mut vb = 1.0f32;
    let mut lam = 0.0;
    for _ in 0..50 {
        let norm = (dot(&v, &v) as f64 + (vb * vb) as f64).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|e| *e /= norm as f32);
        vb /= norm as f32;
        let mut next = vec![0.0f32; d];
        let mut nb = 0.0f32;
        for i in 0..n {
            let u = dot(x.row(i), &v) + vb;
            axpy(u, x.row(i), &mut next);
            nb += u;
        }
        next.iter_mut().for_each(|e| *e /= n as f32);
        nb /= n as f32;
        lam = (dot(&next, &v) as f64 + (nb * vb) as f64).max(0.0);
        v = next;
        vb = nb;
    }
    lam
}

/// Gradient descent on mean cross-entropy + (lambda/2)|W|^2 with step 1/L.
fn train_softmax(x: &FeatureMatrix, y: &[u8], lambda: f64, steps: usize) -> (Vec<Vec<f32>>, Vec<f32>) {
    let (n, d) = (x.rows, x.cols);
    let lip = 1.05 * gram_norm(x) + lambda;
    let eta = (1.0 / lip) as f32;
    let lam = lambda as f32;
    let mut w = vec![vec![0.0f32; d]; 2];
    let mut b = [0.0f32; 2];
    let mut g = vec![vec![0.0f32; d]; 2];
    for _ in 0..steps {
        g.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        let mut gb = [0.0f32; 2];
        for (i, &yi) in y.iter().enumerate() {
            let row = x.row(i);
            let s0 = dot(row, &w[0]) + b[0];
            let s1 = dot(row, &w[1]) + b[1];
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
            for k in 0..2 {
                let r = (p[k] - f32::from(yi == k as u8)) / n as f32;
                axpy(r, row, &mut g[k]);
                gb[k] += r;
            }
        }
        for k in 0..2 {
            for (wi, gi) in w[k].iter_mut().zip(&g[k]) {
                *wi -= eta * (gi + lam * *wi);
            }
            b[k] -= eta * (gb[k] + lam * b[k]);
        }
    }
    (w, b.to_vec())
}

fn fit_raw(x: &FeatureMatrix, y: &[u8], kind: ProbeKind, lambda: f64, opts: &ProbeOptions) -> ProbeModel {
    let (weights, bias) = match kind {
        ProbeKind::Svm => {
            let (w, b) = train_svm(x, y, lambda, opts.svm_steps);
            (vec![w], vec![b])
        }
        ProbeKind::Softmax => train_softmax(x, y, lambda, opts.softmax_steps),
    };
    ProbeModel {
        kind,
        lambda,
        weights,
        bias,
        standardizer: None,
        inner_cv: Vec::new(),
    }
}

/// Chooses lambda by inner cross-validation (ties go to the smaller value) and refits on all rows.
pub fn fit_probe(x: &FeatureMatrix, y: &[u8], kind: ProbeKind, opts: &ProbeOptions) -> Result<ProbeModel> {
    opts.validate()?;
    if y.len() != x.rows {
        return Err(Error::shape(format!("{} labels for {} feature rows", y.len(), x.rows)));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateProbe("training rows contain a single class".into()));
    }
    let standardizer = opts.standardize.then(|| Standardizer::fit(x));
    let z = standardizer.as_ref().map(|s| s.apply(x));
    let z = z.as_ref().unwrap_or(x);

    let mut grid = opts.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let k = opts.inner_folds.min(pos).min(y.len() - pos);
    let mut inner_cv = Vec::new();
    let lambda = if grid.len() == 1 || k < 2 {
        grid[0]
    } else {
        let folds = stratified_kfold(y, k, opts.seed)?;
        let mut best = (grid[0], f64::NEG_INFINITY);
        for &lambda in &grid {
            let mut correct = 0usize;
            for f in 0..k {
                let (tr, te) = split(&folds, f);
                let ytr: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
                let yte: Vec<u8> = te.iter().map(|&i| y[i]).collect();
                let m = fit_raw(&z.select(&tr), &ytr, kind, lambda, opts);
                correct += m
                    .predict(&z.select(&te))
                    .iter()
                    .zip(&yte)
                    .filter(|(a, b)| a == b)
                    .count();
            }
            let acc = correct as f64 / y.len() as f64;
            inner_cv.push((lambda, acc));
            if acc > best.1 {
                best = (lambda, acc);
            }
        }
        best.0
    };
    debug!("{kind} probe: lambda {lambda} (inner cv {inner_cv:?})");
    let mut model = fit_raw(z, y, kind, lambda, opts);
    model.standardizer = standardizer;
    model.inner_cv = inner_cv;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub endpoint: String,
    pub kind: ProbeKind,
    pub fold_accuracies: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl ProbeRow {
    pub fn summary(&self) -> Result<Summary> {
        summarize(&self.fold_accuracies)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub standardized: bool,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn row(&self, endpoint: &str, kind: ProbeKind) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.endpoint == endpoint && r.kind == kind)
    }

    /// `endpoint,kind,fold,accuracy,lambda` lines.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let e = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["endpoint", "kind", "fold", "accuracy", "lambda"]).map_err(e)?;
        for r in &self.rows {
            for (f, (a, l)) in r.fold_accuracies.iter().zip(&r.lambdas).enumerate() {
                w.write_record([r.endpoint.clone(), r.kind.to_string(), f.to_string(), a.to_string(), l.to_string()])
                    .map_err(e)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::Data(e.to_string()))
    }

    /// One line per endpoint with `mean ± std` per classifier.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Layer | SVM | Softmax |\n|---|---|---|\n");
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.endpoint.as_str()) {
                seen.push(&r.endpoint);
            }
        }
        for e in seen {
            let cell = |k| {
                self.row(e, k)
                    .and_then(|r| r.summary().ok())
                    .map_or_else(|| "-".to_string(), |s| s.to_string())
            };
            out.push_str(&format!("| {e} | {} | {} |\n", cell(ProbeKind::Svm), cell(ProbeKind::Softmax)));
        }
        out
    }
}

/// Rotating outer cross-validation of every endpoint with every probe kind.
pub fn probe_all_layers(
    features: &IndexMap<String, FeatureMatrix>,
    labels: &[u8],
    folds: &[usize],
    kinds: &[ProbeKind],
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    let k = check_folds(labels, folds)?;
    probe_selected_folds(features, labels, folds, &(0..k).collect::<Vec<_>>(), kinds, opts)
}

fn check_folds(labels: &[u8], folds: &[usize]) -> Result<usize> {
    let k = folds.iter().max().map_or(0, |m| m + 1);
    if folds.len() != labels.len() || k < 2 {
        return Err(Error::invalid("folds must assign every sample to one of at least 2 folds"));
    }
    Ok(k)
}

/// Like [`probe_all_layers`] but only holding out the listed folds, in that order.
pub fn probe_selected_folds(
    features: &IndexMap<String, FeatureMatrix>,
    labels: &[u8],
    folds: &[usize],
    held_out: &[usize],
    kinds: &[ProbeKind],
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    let k = check_folds(labels, folds)?;
    if let Some(f) = held_out.iter().find(|&&f| f >= k) {
        return Err(Error::invalid(format!("fold {f} out of range for {k} folds")));
    }
    let mut rows = Vec::new();
    for (endpoint, x) in features {
        if x.rows != labels.len() {
            return Err(Error::shape(format!(
                "{endpoint}: {} feature rows for {} labels",
                x.rows,
                labels.len()
            )));
        }
        for &kind in kinds {
            let mut row = ProbeRow {
                endpoint: endpoint.clone(),
                kind,
                fold_accuracies: Vec::with_capacity(held_out.len()),
                lambdas: Vec::with_capacity(held_out.len()),
            };
            for &f in held_out {
                let (tr, te) = split(folds, f);
                let ytr: Vec<u8> = tr.iter().map(|&i| labels[i]).collect();
                let yte: Vec<u8> = te.iter().map(|&i| labels[i]).collect();
                let model = fit_probe(&x.select(&tr), &ytr, kind, opts)?;
                row.fold_accuracies.push(model.accuracy(&x.select(&te), &yte));
                row.lambdas.push(model.lambda);
            }
            debug!("{endpoint} {kind}: {:?}", row.fold_accuracies);
            rows.push(row);
        }
    }
    Ok(ProbeReport {
        standardized: opts.standardize,
        rows,
    })
}
