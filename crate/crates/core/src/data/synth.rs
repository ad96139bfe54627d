//! Seeded procedural images for running experiments without external data.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{write_ppm, Image};
use super::manifest::{DatasetManifest, Record, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Linear colour ramp in a random direction.
    Gradient,
    /// One to three soft discs filled with a sinusoidal texture.
    Blob,
    Stripes,
    Checker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    /// Side of the square images.
    pub size: usize,
    /// One class per pattern, class index = position in this list.
    pub patterns: Vec<Pattern>,
    /// Standard deviation of additive pixel noise (0-255 scale).
    pub noise: f32,
    /// Minimum foreground/background colour distance; the actual distance is drawn from [contrast, 2*contrast].
    pub contrast: f32,
    /// Fraction of samples in class 1 when there are exactly two patterns.
    pub positive_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::task_b(200, 72, 0)
    }
}

impl SynthConfig {
    /// Four-way pattern recognition used for pretraining.
    pub fn task_a(count: usize, size: usize, seed: u64) -> Self {
        SynthConfig {
            count,
            size,
            patterns: vec![Pattern::Gradient, Pattern::Blob, Pattern::Stripes, Pattern::Checker],
            noise: 10.0,
            contrast: 50.0,
            positive_ratio: 0.5,
            seed,
        }
    }

    /// Binary target task: gradients (negative) against textured blobs (positive), noisier and lower contrast.
    pub fn task_b(count: usize, size: usize, seed: u64) -> Self {
        SynthConfig {
            count,
            size,
            patterns: vec![Pattern::Gradient, Pattern::Blob],
            noise: 20.0,
            contrast: 40.0,
            positive_ratio: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.len() < 2 {
            return Err(Error::Config("synthetic data needs at least two patterns".into()));
        }
        if self.size < 8 {
            return Err(Error::Config("synthetic image size must be at least 8".into()));
        }
        if !(self.noise >= 0.0 && self.contrast >= 0.0) {
            return Err(Error::Config("noise and contrast must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_ratio) {
            return Err(Error::Config("positive_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Class of sample `i`: round-robin over patterns, or an evenly interleaved split for two classes.
    pub fn label(&self, i: usize) -> usize {
        if self.patterns.len() == 2 {
            let p = self.positive_ratio;
            (((i + 1) as f64 * p).floor() - (i as f64 * p).floor()) as usize
        } else {
            i % self.patterns.len()
        }
    }
}

fn color<R: Rng>(rng: &mut R, contrast: f32) -> ([f32; 3], [f32; 3]) {
    let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(60.0..196.0));
    let n = Normal::new(0.0f32, 1.0).unwrap();
    let mut dir: [f32; 3] = std::array::from_fn(|_| n.sample(rng));
    let norm = dir.iter().map(|d| d * d).sum::<f32>().sqrt().max(1e-6);
    let mag = rng.gen_range(contrast..=2.0 * contrast);
    for d in &mut dir {
        *d = *d / norm * mag;
    }
    (bg, std::array::from_fn(|c| bg[c] + dir[c]))
}

/// Renders one image of `pattern`; returns the foreground weight per pixel.
fn weights<R: Rng>(pattern: Pattern, s: usize, rng: &mut R) -> Vec<f32> {
    let sf = s as f32;
    let mut w = vec![0.0f32; s * s];
    match pattern {
        Pattern::Gradient => {
            let th = rng.gen_range(0.0..2.0 * PI);
            let (c, sn) = (th.cos(), th.sin());
            for y in 0..s {
                for x in 0..s {
                    let t = 0.5 + (x as f32 / sf - 0.5) * c + (y as f32 / sf - 0.5) * sn;
                    w[y * s + x] = t.clamp(0.0, 1.0);
                }
            }
        }
        Pattern::Blob => {
            let k = rng.gen_range(1..=3);
            let blobs: Vec<(f32, f32, f32)> = (0..k)
                .map(|_| {
                    (
                        rng.gen_range(0.2 * sf..0.8 * sf),
                        rng.gen_range(0.2 * sf..0.8 * sf),
                        rng.gen_range(0.1 * sf..0.22 * sf),
                    )
                })
                .collect();
            let f = rng.gen_range(0.5..1.2f32);
            let (px, py) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
            for y in 0..s {
                for x in 0..s {
                    let (xf, yf) = (x as f32, y as f32);
                    let m = blobs
                        .iter()
                        .map(|&(cx, cy, r)| {
                            let d = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                            1.0 / (1.0 + ((d - r) / (0.15 * r)).exp())
                        })
                        .fold(0.0f32, f32::max);
                    let tex = 0.7 + 0.3 * (f * xf + px).sin() * (f * yf + py).sin();
                    w[y * s + x] = m * tex;
                }
            }
        }
        Pattern::Stripes => {
            let th = rng.gen_range(0.0..PI);
            let period = rng.gen_range(sf / 8.0..sf / 4.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            for y in 0..s {
                for x in 0..s {
                    let u = x as f32 * th.cos() + y as f32 * th.sin();
                    w[y * s + x] = 0.5 + 0.5 * (2.0 * PI * u / period + ph).sin();
                }
            }
        }
        Pattern::Checker => {
            let cell = rng.gen_range(s / 8..=s / 4).max(1);
            let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
            for y in 0..s {
                for x in 0..s {
                    w[y * s + x] = (((x + ox) / cell + (y + oy) / cell) % 2) as f32;
                }
            }
        }
    }
    w
}

/// Sample `i` of the dataset described by `config`; independent of `count`.
pub fn render(config: &SynthConfig, i: usize) -> (Image, usize) {
    let label = config.label(i);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(i as u64);
    let s = config.size;
    let (bg, fg) = color(&mut rng, config.contrast);
    let w = weights(config.patterns[label], s, &mut rng);
    let noise = Normal::new(0.0f32, config.noise.max(f32::MIN_POSITIVE)).unwrap();
    let mut data = Vec::with_capacity(3 * s * s);
    for c in 0..3 {
        for &t in &w {
            let mut v = bg[c] + t * (fg[c] - bg[c]);
            if config.noise > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v.round().clamp(0.0, 255.0));
        }
    }
    (Image::new(s, s, data).expect("valid extents"), label)
}

pub fn generate(config: &SynthConfig) -> Result<Vec<(Image, usize)>> {
    config.validate()?;
    Ok((0..config.count).map(|i| render(config, i)).collect())
}

/// Writes a two-class dataset as PPM files plus `manifest.csv` under `dir`.
pub fn write_dataset(config: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    if config.patterns.len() != 2 {
        return Err(Error::Config("manifests are binary: use exactly two patterns".into()));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let (img, label) = render(config, i);
        let path = images.join(format!("{i:05}.ppm"));
        write_ppm(&img, &path)?;
        records.push(Record {
            path,
            label: if label == 1 { POSITIVE } else { NEGATIVE },
            fold: None,
        });
    }
    let manifest_path = dir.join("manifest.csv");
    let manifest = DatasetManifest {
        source: manifest_path.clone(),
        records,
    };
    super::manifest::write_manifest(&manifest, &manifest_path)?;
    Ok(manifest)
}
