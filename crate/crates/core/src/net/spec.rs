use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, pool_output_extent, LrnParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        size: usize,
        stride: usize,
    },
    Norm(LrnParams),
    Fc {
        units: usize,
    },
    Relu,
    Softmax,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "CONV",
            LayerKind::Pool { .. } => "POOL",
            LayerKind::Norm(_) => "NORM",
            LayerKind::Fc { .. } => "FC",
            LayerKind::Relu => "RELU",
            LayerKind::Softmax => "SOFTMAX",
        }
    }
}

fn one() -> f32 {
    1.0
}

fn is_one(v: &f32) -> bool {
    *v == 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Learning-rate multiplier applied on top of the schedule.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub lr_mult: f32,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            lr_mult: 1.0,
        }
    }

    pub fn with_lr_mult(mut self, lr_mult: f32) -> Self {
        self.lr_mult = lr_mult;
        self
    }

    pub fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            },
        )
    }

    pub fn pool(name: &str, size: usize, stride: usize) -> Self {
        Self::new(name, LayerKind::Pool { size, stride })
    }

    pub fn norm(name: &str) -> Self {
        Self::new(name, LayerKind::Norm(LrnParams::default()))
    }

    pub fn fc(name: &str, units: usize) -> Self {
        Self::new(name, LayerKind::Fc { units })
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn softmax(name: &str) -> Self {
        Self::new(name, LayerKind::Softmax)
    }
}

/// A linear stack of layers over a per-sample input shape (`[C, H, W]` or `[D]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Which tensor a CONV/FC endpoint refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointMode {
    /// Output of the rectifier attached to the layer, when there is one.
    #[default]
    PostActivation,
    PreActivation,
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input_shape, layers }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn param_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind.has_params())
    }

    pub fn fc_layers(&self) -> Vec<&LayerSpec> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Fc { .. }))
            .collect()
    }

    /// The topmost FC layer, if any.
    pub fn top_fc(&self) -> Option<&LayerSpec> {
        self.fc_layers().last().copied()
    }

    pub fn has_softmax_top(&self) -> bool {
        matches!(self.layers.last(), Some(l) if l.kind == LayerKind::Softmax)
    }

    /// Names of the CONV, POOL, NORM and FC layers, bottom to top.
    pub fn probe_endpoints(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Relu | LayerKind::Softmax))
            .map(|l| l.name.clone())
            .collect()
    }

    /// Width of the final output (the class count for a classifier).
    pub fn output_width(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        let last = shapes
            .values()
            .last()
            .cloned()
            .unwrap_or_else(|| self.input_shape.clone());
        Ok(last.iter().product())
    }

    /// Per-sample output shape of every layer, in order. Fails at the first offending layer.
    pub fn infer_shapes(&self) -> Result<IndexMap<String, Vec<usize>>> {
        let mut seen = HashSet::new();
        let mut shapes = IndexMap::new();
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {:?} must be non-empty with positive extents",
                self.input_shape
            )));
        }
        let mut cur = self.input_shape.clone();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidNetwork(format!("duplicate layer name `{}`", l.name)));
            }
            if !(l.lr_mult >= 0.0 && l.lr_mult.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "layer `{}` has invalid lr_mult {}",
                    l.name, l.lr_mult
                )));
            }
            let fail = |expected: &str, actual: &[usize]| Error::ShapeInference {
                layer: l.name.clone(),
                expected: expected.to_string(),
                actual: shape_str(actual),
            };
            cur = match &l.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if cur.len() != 3 {
                        return Err(fail("CxHxW input", &cur));
                    }
                    if *out_channels == 0 || *kernel == 0 {
                        return Err(fail("positive channels and kernel", &cur));
                    }
                    let oh = conv_output_extent(cur[1], *kernel, *stride, *pad)
                        .map_err(|_| fail(&format!("spatial extent >= kernel {kernel} (stride {stride}, pad {pad})"), &cur))?;
                    let ow = conv_output_extent(cur[2], *kernel, *stride, *pad)
                        .map_err(|_| fail(&format!("spatial extent >= kernel {kernel} (stride {stride}, pad {pad})"), &cur))?;
                    vec![*out_channels, oh, ow]
                }
                LayerKind::Pool { size, stride } => {
                    if cur.len() != 3 {
                        return Err(fail("CxHxW input", &cur));
                    }
                    let oh = pool_output_extent(cur[1], *size, *stride)
                        .map_err(|_| fail(&format!("spatial extent >= window {size}, stride > 0"), &cur))?;
                    let ow = pool_output_extent(cur[2], *size, *stride)
                        .map_err(|_| fail(&format!("spatial extent >= window {size}, stride > 0"), &cur))?;
                    vec![cur[0], oh, ow]
                }
                LayerKind::Norm(p) => {
                    if cur.len() != 3 {
                        return Err(fail("CxHxW input", &cur));
                    }
                    p.validate()
                        .map_err(|e| fail(&format!("valid lrn constants ({e})"), &cur))?;
                    cur
                }
                LayerKind::Fc { units } => {
                    if *units == 0 {
                        return Err(fail("positive unit count", &cur));
                    }
                    vec![*units]
                }
                LayerKind::Relu => cur,
                LayerKind::Softmax => {
                    if cur.len() != 1 || cur[0] < 2 {
                        return Err(fail("flat input with at least 2 classes", &cur));
                    }
                    cur
                }
            };
            shapes.insert(l.name.clone(), cur.clone());
        }
        Ok(shapes)
    }

    /// Flattened input width of a parameterized layer together with its parameter shapes
    /// (`[weights, bias]`).
    pub fn param_shapes(&self) -> Result<IndexMap<String, [Vec<usize>; 2]>> {
        let shapes = self.infer_shapes()?;
        let mut out = IndexMap::new();
        let mut prev = self.input_shape.clone();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Conv {
                    out_channels, kernel, ..
                } => {
                    out.insert(
                        l.name.clone(),
                        [vec![*out_channels, prev[0], *kernel, *kernel], vec![*out_channels]],
                    );
                }
                LayerKind::Fc { units } => {
                    let d: usize = prev.iter().product();
                    out.insert(l.name.clone(), [vec![d, *units], vec![*units]]);
                }
                _ => {}
            }
            prev = shapes[&l.name].clone();
        }
        Ok(out)
    }

    /// Analytic parameter count: weights plus biases over every parameterized layer.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .values()
            .map(|[w, b]| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }

    /// Checks the training-time structure: a SOFTMAX on top, directly above an FC layer,
    /// and no other SOFTMAX in the stack.
    pub fn validate_for_training(&self) -> Result<()> {
        self.infer_shapes()?;
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Softmax)
            .count();
        if softmaxes != 1 || !self.has_softmax_top() {
            return Err(Error::InvalidNetwork(
                "exactly one SOFTMAX layer is required, at the top".into(),
            ));
        }
        let below = self.layers.len().checked_sub(2).map(|i| &self.layers[i]);
        if !matches!(below, Some(l) if matches!(l.kind, LayerKind::Fc { .. })) {
            return Err(Error::InvalidNetwork(
                "the layer below SOFTMAX must be FC".into(),
            ));
        }
        Ok(())
    }

    /// Resolves a requested endpoint to the index of the layer whose output it names.
    pub fn resolve_endpoint(&self, name: &str, mode: EndpointMode) -> Result<usize> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownEndpoint(name.to_string()))?;
        let rectified = matches!(self.layers[i].kind, LayerKind::Conv { .. } | LayerKind::Fc { .. })
            && matches!(self.layers.get(i + 1), Some(l) if l.kind == LayerKind::Relu);
        Ok(if rectified && mode == EndpointMode::PostActivation {
            i + 1
        } else {
            i
        })
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The eight-layer reference stack over 3x227x227 inputs: five CONV layers, the first two
/// followed by POOL and NORM, a POOL after conv5, then three FC layers and a SOFTMAX.
pub fn reference_spec(num_classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        vec![3, 227, 227],
        vec![
            LayerSpec::conv("conv1", 96, 11, 4, 0),
            LayerSpec::relu("relu1"),
            LayerSpec::pool("pool1", 3, 2),
            LayerSpec::norm("norm1"),
            LayerSpec::conv("conv2", 256, 5, 1, 2),
            LayerSpec::relu("relu2"),
            LayerSpec::pool("pool2", 3, 2),
            LayerSpec::norm("norm2"),
            LayerSpec::conv("conv3", 384, 3, 1, 1),
            LayerSpec::relu("relu3"),
            LayerSpec::conv("conv4", 384, 3, 1, 1),
            LayerSpec::relu("relu4"),
            LayerSpec::conv("conv5", 256, 3, 1, 1),
            LayerSpec::relu("relu5"),
            LayerSpec::pool("pool5", 3, 2),
            LayerSpec::fc("fc6", 4096),
            LayerSpec::relu("relu6"),
            LayerSpec::fc("fc7", 4096),
            LayerSpec::relu("relu7"),
            LayerSpec::fc("fc8", num_classes),
            LayerSpec::softmax("prob"),
        ],
    )
}

/// Desk-scale twin of [`reference_spec`]: same layer names and kind ordering, convolution
/// widths divided by eight, 128-unit fc6/fc7, 3x64x64 input.
pub fn small_reference_spec(num_classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        vec![3, 64, 64],
        vec![
            LayerSpec::conv("conv1", 12, 8, 4, 0),
            LayerSpec::relu("relu1"),
            LayerSpec::pool("pool1", 3, 2),
            LayerSpec::norm("norm1"),
            LayerSpec::conv("conv2", 32, 5, 1, 2),
            LayerSpec::relu("relu2"),
            LayerSpec::pool("pool2", 3, 2),
            LayerSpec::norm("norm2"),
            LayerSpec::conv("conv3", 48, 3, 1, 1),
            LayerSpec::relu("relu3"),
            LayerSpec::conv("conv4", 48, 3, 1, 1),
            LayerSpec::relu("relu4"),
            LayerSpec::conv("conv5", 32, 3, 1, 1),
            LayerSpec::relu("relu5"),
            LayerSpec::pool("pool5", 3, 2),
            LayerSpec::fc("fc6", 128),
            LayerSpec::relu("relu6"),
            LayerSpec::fc("fc7", 128),
            LayerSpec::relu("relu7"),
            LayerSpec::fc("fc8", num_classes),
            LayerSpec::softmax("prob"),
        ],
    )
}

/// Named architecture families selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Reference,
    Small,
}

impl Architecture {
    pub fn build(self, num_classes: usize) -> NetworkSpec {
        match self {
            Architecture::Reference => reference_spec(num_classes),
            Architecture::Small => small_reference_spec(num_classes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_ROWS: [&str; 13] = [
        "conv1", "pool1", "norm1", "conv2", "pool2", "norm2", "conv3", "conv4", "conv5", "pool5", "fc6", "fc7", "fc8",
    ];

    #[test]
    fn reference_endpoints_and_shapes() {
        let spec = reference_spec(1000);
        assert_eq!(spec.probe_endpoints(), TABLE_ROWS);
        let shapes = spec.infer_shapes().unwrap();
        assert_eq!(shapes["conv1"], vec![96, 55, 55]);
        assert_eq!(shapes["conv5"], vec![256, 13, 13]);
        assert_eq!(shapes["pool5"].iter().product::<usize>(), 9216);
        assert_eq!(shapes["fc6"], vec![4096]);
        assert_eq!(shapes["fc7"], vec![4096]);
        assert_eq!(shapes["prob"], vec![1000]);
        spec.validate_for_training().unwrap();
    }

    #[test]
    fn small_spec_keeps_the_ordering() {
        let small = small_reference_spec(2);
        assert_eq!(small.probe_endpoints(), TABLE_ROWS);
        let kinds = |s: &NetworkSpec| s.layers.iter().map(|l| l.kind.tag()).collect::<Vec<_>>();
        assert_eq!(kinds(&small), kinds(&reference_spec(2)));
        let shapes = small.infer_shapes().unwrap();
        assert_eq!(shapes["conv1"], vec![12, 15, 15]);
        assert_eq!(shapes["pool5"], vec![32, 1, 1]);
        small.validate_for_training().unwrap();
    }

    #[test]
    fn single_fc() {
        let spec = NetworkSpec::new(vec![10], vec![LayerSpec::fc("fc", 2)]);
        assert_eq!(spec.infer_shapes().unwrap()["fc"], vec![2]);
    }

    #[test]
    fn same_padding_preserves_size() {
        let spec = NetworkSpec::new(vec![3, 9, 9], vec![LayerSpec::conv("c", 4, 3, 1, 1)]);
        assert_eq!(spec.infer_shapes().unwrap()["c"], vec![4, 9, 9]);
    }

    #[test]
    fn inconsistent_chain_names_the_layer() {
        let spec = NetworkSpec::new(
            vec![3, 8, 8],
            vec![LayerSpec::fc("fc1", 4), LayerSpec::conv("late_conv", 2, 3, 1, 0)],
        );
        match spec.infer_shapes() {
            Err(Error::ShapeInference { layer, .. }) => assert_eq!(layer, "late_conv"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let spec = NetworkSpec::new(vec![4], vec![LayerSpec::fc("a", 2), LayerSpec::fc("a", 2)]);
        assert!(matches!(spec.infer_shapes(), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn reference_param_count() {
        let n = reference_spec(1000).param_count().unwrap();
        let expect = (96 * 3 * 121 + 96)
            + (256 * 96 * 25 + 256)
            + (384 * 256 * 9 + 384)
            + (384 * 384 * 9 + 384)
            + (256 * 384 * 9 + 256)
            + (9216 * 4096 + 4096)
            + (4096 * 4096 + 4096)
            + (4096 * 1000 + 1000);
        assert_eq!(n, expect);
    }

    #[test]
    fn endpoint_resolution() {
        let spec = reference_spec(2);
        let conv1 = spec.index_of("conv1").unwrap();
        assert_eq!(spec.resolve_endpoint("conv1", EndpointMode::PostActivation).unwrap(), conv1 + 1);
        assert_eq!(spec.resolve_endpoint("conv1", EndpointMode::PreActivation).unwrap(), conv1);
        let fc8 = spec.index_of("fc8").unwrap();
        assert_eq!(spec.resolve_endpoint("fc8", EndpointMode::PostActivation).unwrap(), fc8);
        assert!(matches!(
            spec.resolve_endpoint("fc42", EndpointMode::PostActivation),
            Err(Error::UnknownEndpoint(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let spec = small_reference_spec(2);
        let json = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.fingerprint(), spec.fingerprint());
    }
}
