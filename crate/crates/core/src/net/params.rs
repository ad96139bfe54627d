use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of freshly initialized weights; biases start at zero.
pub const INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ParamPair {
    pub fn zeros_like(&self) -> Self {
        ParamPair {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        vec![self.weights.shape().to_vec(), self.bias.shape().to_vec()]
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_identical(&self, other: &ParamPair) -> bool {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        self.weights.shape() == other.weights.shape()
            && self.bias.shape() == other.bias.shape()
            && bits(&self.weights) == bits(&other.weights)
            && bits(&self.bias) == bits(&other.bias)
    }
}

/// Named parameter store paired with a [`NetworkSpec`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, ParamPair>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn get(&self, layer: &str) -> Option<&ParamPair> {
        self.entries.get(layer)
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(ParamPair::len).sum()
    }

    /// Checks that every parameterized layer of `spec` has an entry of the right shape.
    pub fn validate_against(&self, spec: &NetworkSpec) -> Result<()> {
        for (name, [w, b]) in spec.param_shapes()? {
            let entry = self
                .entries
                .get(&name)
                .ok_or_else(|| Error::MissingParams(name.clone()))?;
            if entry.weights.shape() != w.as_slice() || entry.bias.shape() != b.as_slice() {
                return Err(Error::ParamMismatch {
                    layer: name,
                    expected: vec![w, b],
                    found: entry.shapes(),
                });
            }
        }
        Ok(())
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }
}

/// Deterministic per-layer generator: the same `(seed, layer)` always yields the same stream.
pub fn layer_rng(seed: u64, layer: &str) -> ChaCha8Rng {
    // FNV-1a over the layer name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in layer.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Gaussian(0, [`INIT_STD`]) weights and zero bias for one layer.
pub fn init_layer(weight_shape: &[usize], bias_shape: &[usize], seed: u64, layer: &str) -> ParamPair {
    let mut rng = layer_rng(seed, layer);
    ParamPair {
        weights: Tensor::randn(weight_shape, INIT_STD, &mut rng),
        bias: Tensor::zeros(bias_shape),
    }
}

/// How fresh weights are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Gaussian(0, [`INIT_STD`]) everywhere.
    #[default]
    Gaussian,
    /// Gaussian(0, sqrt(2 / fan_in)) for every layer but the top FC, which keeps [`INIT_STD`].
    FanIn,
}

/// Fresh parameters for every parameterized layer of `spec`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Checkpoint> {
    init_params_with(spec, seed, InitScheme::Gaussian)
}

pub fn init_params_with(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::default();
    let top = spec.top_fc().map(|l| l.name.clone());
    for (name, [w, b]) in spec.param_shapes()? {
        let std = match scheme {
            InitScheme::FanIn if top.as_deref() != Some(name.as_str()) => {
                let fan_in: usize = w.iter().product::<usize>() / b[0];
                (2.0 / fan_in as f64).sqrt()
            }
            _ => INIT_STD,
        };
        let mut rng = layer_rng(seed, &name);
        let pair = ParamPair {
            weights: Tensor::randn(&w, std, &mut rng),
            bias: Tensor::zeros(&b),
        };
        ckpt.entries.insert(name, pair);
    }
    ckpt.set_meta("spec_fingerprint", spec.fingerprint());
    ckpt.set_meta("seed", seed);
    ckpt.set_meta("epoch", 0);
    ckpt.set_meta("init", format!("{scheme:?}").to_ascii_lowercase());
    Ok(ckpt)
}
