use log::{info, warn};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    base_image, generate, load_manifest, random_tag, read_image, stratified_kfold, view_of, DatasetManifest, Image,
    PreprocessConfig, SynthConfig, POSITIVE,
};
use crate::error::{Error, Result};
use crate::optim::SampleSource;
use crate::tensor::Tensor;

/// Images brought to the preprocessing square, with binary labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub bases: Vec<Image>,
    pub labels: Vec<u8>,
    /// Fold assignment supplied with the data, if any.
    pub folds: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_manifest(manifest: &DatasetManifest, resize_to: usize) -> Result<Self> {
        let probe = PreprocessConfig {
            resize_to,
            crop: resize_to,
            ..Default::default()
        };
        let bases = manifest
            .records
            .iter()
            .map(|r| read_image(&r.path).map(|img| base_image(&img, &probe)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            bases,
            labels: manifest.labels(),
            folds: manifest.folds(),
        })
    }

    pub fn synthetic(config: &SynthConfig, resize_to: usize) -> Result<Self> {
        let probe = PreprocessConfig {
            resize_to,
            crop: resize_to,
            ..Default::default()
        };
        let (bases, labels) = generate(config)?
            .into_iter()
            .map(|(img, l)| (base_image(&img, &probe), l as u8))
            .unzip();
        Ok(Dataset {
            bases,
            labels,
            folds: None,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            bases: indices.iter().map(|&i| self.bases[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            folds: None,
        }
    }

    /// Supplied folds when present, otherwise a stratified assignment.
    pub fn fold_assignment(&self, k: usize, seed: u64) -> Result<Vec<usize>> {
        match &self.folds {
            Some(f) => {
                let mk = f.iter().max().map_or(0, |m| m + 1);
                if mk != k {
                    warn!("manifest defines {mk} folds; using them instead of k = {k}");
                }
                Ok(f.clone())
            }
            None => stratified_kfold(&self.labels, k, seed),
        }
    }
}

/// Loads the dataset named by a config: a manifest, or the synthetic generator.
pub fn load_dataset(manifest: Option<&std::path::Path>, synthetic: Option<&SynthConfig>, resize_to: usize) -> Result<Dataset> {
    let d = match (manifest, synthetic) {
        (Some(path), _) => Dataset::from_manifest(&load_manifest(path)?, resize_to)?,
        (None, Some(s)) => Dataset::synthetic(s, resize_to)?,
        (None, None) => return Err(Error::Config("dataset.manifest or dataset.synthetic is required".into())),
    };
    let pos = d.labels.iter().filter(|&&l| l == POSITIVE).count();
    info!("dataset: {} images ({pos} positive, {} negative)", d.len(), d.len() - pos);
    if pos == 580 && d.len() - pos == 301 {
        warn!("580 positive + 301 negative = 881 images, although this split is often quoted as 880; using all 881");
    }
    Ok(d)
}

/// Output index standing for a binary label.
///
/// Two-way heads use the label directly; wider heads (an original multi-class top kept
/// for fine-tuning) map positive to 0 and negative to 1.
pub fn class_index(label: u8, width: usize) -> usize {
    if width == 2 {
        label as usize
    } else if label == POSITIVE {
        0
    } else {
        1
    }
}

/// Binary label an output index stands for, if any.
pub fn label_of_class(class: usize, width: usize) -> Option<u8> {
    (0..=1u8).find(|&l| class_index(l, width) == class)
}

/// Training views of a subset: random crop and mirror per draw.
pub struct ViewSource<'a> {
    pub bases: &'a [Image],
    pub indices: &'a [usize],
    pub classes: Vec<usize>,
    pub config: PreprocessConfig,
}

impl<'a> ViewSource<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize], width: usize, config: PreprocessConfig) -> Self {
        ViewSource {
            bases: &data.bases,
            indices,
            classes: indices.iter().map(|&i| class_index(data.labels[i], width)).collect(),
            config,
        }
    }
}

impl SampleSource for ViewSource<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> usize {
        self.classes[i]
    }

    fn view(&self, i: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let tag = random_tag(&self.config, rng);
        Ok(view_of(&self.bases[self.indices[i]], &self.config, tag)?.tensor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map() {
        assert_eq!(class_index(1, 2), 1);
        assert_eq!(class_index(0, 2), 0);
        assert_eq!(class_index(1, 1000), 0);
        assert_eq!(class_index(0, 1000), 1);
        assert_eq!(label_of_class(0, 1000), Some(1));
        assert_eq!(label_of_class(5, 1000), None);
        assert_eq!(label_of_class(1, 2), Some(1));
    }
}
