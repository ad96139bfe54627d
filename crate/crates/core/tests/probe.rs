use netsurgery::probe::{fit_probe, probe_all_layers, FeatureMatrix, ProbeKind, ProbeOptions};
use indexmap::IndexMap;
use netsurgery::data::stratified_kfold;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> ProbeOptions {
    ProbeOptions {
        lambda_grid: vec![1e-3, 1e-1, 10.0],
        svm_steps: 300,
        softmax_steps: 300,
        ..Default::default()
    }
}

/// Two Gaussian clouds in `dims` dimensions separated along the first axis by `gap`.
fn clouds(n: usize, dims: usize, gap: f32, seed: u64) -> (FeatureMatrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dims);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let l = u8::from(i % 3 == 0);
        for d in 0..dims {
            let centre = if d == 0 && l == 1 { gap } else { 0.0 };
            data.push(centre + rng.gen_range(-1.0..1.0));
        }
        y.push(l);
    }
    (FeatureMatrix::new(n, dims, data).unwrap(), y)
}

#[test]
fn separable_features_probe_well() {
    let (x, y) = clouds(90, 5, 4.0, 1);
    let folds = stratified_kfold(&y, 3, 0).unwrap();
    let mut feats = IndexMap::new();
    feats.insert("good".to_string(), x);
    let report = probe_all_layers(&feats, &y, &folds, &ProbeKind::ALL, &opts()).unwrap();
    for r in &report.rows {
        assert!(r.summary().unwrap().mean > 0.95, "{r:?}");
    }
}

#[test]
fn shuffled_labels_stay_near_majority() {
    let (x, mut y) = clouds(150, 10, 4.0, 2);
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let majority = y.iter().filter(|&&l| l == 0).count() as f64 / y.len() as f64;
    let folds = stratified_kfold(&y, 5, 0).unwrap();
    let mut feats = IndexMap::new();
    feats.insert("noise".to_string(), x);
    let report = probe_all_layers(&feats, &y, &folds, &ProbeKind::ALL, &opts()).unwrap();
    for r in &report.rows {
        let m = r.summary().unwrap().mean;
        assert!(m < majority + 0.1, "{:?} mean {m} vs majority {majority}", r.kind);
    }
}

#[test]
fn standardized_probes_ignore_column_scale() {
    let (x, y) = clouds(60, 4, 3.0, 3);
    let mut scaled = x.clone();
    for (i, v) in scaled.data.iter_mut().enumerate() {
        *v *= [1.0, 100.0, 0.01, 7.0][i % 4];
    }
    for kind in ProbeKind::ALL {
        let a = fit_probe(&x, &y, kind, &opts()).unwrap();
        let b = fit_probe(&scaled, &y, kind, &opts()).unwrap();
        assert_eq!(a.predict(&x), b.predict(&scaled), "{kind}");
    }
}

#[test]
fn one_class_is_degenerate() {
    let (x, _) = clouds(20, 2, 1.0, 4);
    assert!(fit_probe(&x, &[1; 20], ProbeKind::Svm, &opts()).is_err());
}
