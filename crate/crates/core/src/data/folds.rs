use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Assigns each index a fold in `0..k`, preserving class proportions.
///
/// Classes are dealt in ascending label order; each class is shuffled and dealt round-robin,
/// starting where the previous class stopped so fold sizes stay within one of each other.
pub fn stratified_kfold<L: Ord + Copy + std::fmt::Debug>(labels: &[L], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((l, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Data(format!(
            "class {l:?} has {} members, fewer than k = {k}",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut dealt = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            folds[i] = (dealt + j) % k;
        }
        dealt += members.len();
    }
    Ok(folds)
}

/// `(train, test)` index lists for holding out fold `f`.
pub fn split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_tiny() {
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        for f in 0..5 {
            let (_, test) = split(&folds, f);
            assert_eq!(test.len(), 2);
            assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 1);
        }
    }

    #[test]
    fn imbalanced_881_counts() {
        let labels: Vec<u8> = (0..881).map(|i| u8::from(i < 580)).collect();
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        let mut sizes = [0; 5];
        for (f, size) in sizes.iter_mut().enumerate() {
            let (_, test) = split(&folds, f);
            *size = test.len();
            let pos = test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(pos, 116);
            assert!((60..=61).contains(&(test.len() - pos)));
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(folds, stratified_kfold(&labels, 5, 7).unwrap());
    }

    #[test]
    fn small_class_rejected() {
        assert!(stratified_kfold(&[0u8, 0, 0, 1], 2, 0).is_err());
        assert!(stratified_kfold(&[0u8, 1], 1, 0).is_err());
    }
}
