use indexmap::IndexMap;

use super::params::{Checkpoint, ParamPair};
use super::spec::{EndpointMode, LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    affine_backward, affine_forward, conv2d_backward, conv2d_forward, lrn_backward, lrn_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, softmax, Tensor,
};

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub endpoints: Vec<String>,
    pub mode: EndpointMode,
    /// Keep every layer input so [`backward`] can run.
    pub retain: bool,
}

impl ForwardOptions {
    pub fn training() -> Self {
        ForwardOptions {
            retain: true,
            ..Default::default()
        }
    }

    pub fn endpoints<S: AsRef<str>>(names: &[S]) -> Self {
        ForwardOptions {
            endpoints: names.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug)]
struct ForwardState {
    fingerprint: String,
    /// Input of every layer up to and including the top non-softmax layer.
    inputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct Forward {
    pub activations: IndexMap<String, Tensor>,
    /// Input to the top SOFTMAX, or the final output when there is none.
    pub logits: Tensor,
    pub output: Tensor,
    state: Option<ForwardState>,
}

impl Forward {
    pub fn has_state(&self) -> bool {
        self.state.is_some()
    }
}

fn check_batch(spec: &NetworkSpec, batch: &Tensor) -> Result<()> {
    if batch.rank() != spec.input_shape.len() + 1 || batch.shape()[1..] != spec.input_shape[..] {
        return Err(Error::shape(format!(
            "batch {:?} does not match network input [N, {}]",
            batch.shape(),
            spec.input_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    Ok(())
}

fn params<'a>(ckpt: &'a Checkpoint, name: &str) -> Result<&'a ParamPair> {
    ckpt.get(name).ok_or_else(|| Error::MissingParams(name.to_string()))
}

fn flatten(t: Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    let d = t.len() / n;
    t.reshape(vec![n, d])
}

/// Runs `batch` (`[N, ...input_shape]`) through the network.
pub fn run_forward(spec: &NetworkSpec, ckpt: &Checkpoint, batch: &Tensor, opts: &ForwardOptions) -> Result<Forward> {
    check_batch(spec, batch)?;
    let mut wanted: Vec<(usize, String)> = Vec::with_capacity(opts.endpoints.len());
    for name in &opts.endpoints {
        wanted.push((spec.resolve_endpoint(name, opts.mode)?, name.clone()));
    }
    let top = if spec.has_softmax_top() {
        spec.layers.len() - 1
    } else {
        spec.layers.len()
    };
    let mut inputs = Vec::new();
    let mut argmax = Vec::new();
    let mut captured: Vec<(String, Tensor)> = Vec::new();
    let mut cur = batch.clone();
    let mut logits = None;
    for (i, layer) in spec.layers.iter().enumerate() {
        if i == top {
            logits = Some(cur.clone());
        }
        let mut pool_map = None;
        let next = match &layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let p = params(ckpt, &layer.name)?;
                conv2d_forward(&cur, &p.weights, &p.bias, *stride, *pad)?
            }
            LayerKind::Pool { size, stride } => {
                let out = maxpool_forward(&cur, *size, *stride)?;
                pool_map = Some(out.argmax);
                out.value
            }
            LayerKind::Norm(p) => lrn_forward(&cur, p)?,
            LayerKind::Fc { .. } => {
                let p = params(ckpt, &layer.name)?;
                let flat = flatten(cur.clone())?;
                affine_forward(&flat, &p.weights, &p.bias)?
            }
            LayerKind::Relu => relu_forward(&cur),
            LayerKind::Softmax => softmax(&flatten(cur.clone())?)?,
        };
        if opts.retain && i < top {
            inputs.push(std::mem::replace(&mut cur, next));
            argmax.push(pool_map);
        } else {
            cur = next;
        }
        for (_, name) in wanted.iter().filter(|(w, _)| *w == i) {
            captured.push((name.clone(), cur.clone()));
        }
    }
    if !cur.is_finite() {
        return Err(Error::NonFinite("forward pass".into()));
    }
    let logits = logits.unwrap_or_else(|| cur.clone());
    // report endpoints in request order
    let activations = opts
        .endpoints
        .iter()
        .filter_map(|n| captured.iter().find(|(c, _)| c == n).cloned())
        .collect();
    Ok(Forward {
        activations,
        logits,
        output: cur,
        state: opts.retain.then(|| ForwardState {
            fingerprint: spec.fingerprint(),
            inputs,
            argmax,
        }),
    })
}

/// Post-activation endpoint activations for `batch`.
pub fn forward(spec: &NetworkSpec, ckpt: &Checkpoint, batch: &Tensor, endpoints: &[&str]) -> Result<IndexMap<String, Tensor>> {
    Ok(run_forward(spec, ckpt, batch, &ForwardOptions::endpoints(endpoints))?.activations)
}

/// Parameter gradients given the gradient of the loss with respect to [`Forward::logits`].
///
/// Only layers with a non-zero `lr_mult` get an entry; propagation stops below the
/// lowest such layer.
pub fn backward(
    spec: &NetworkSpec,
    ckpt: &Checkpoint,
    fwd: &Forward,
    logits_grad: &Tensor,
) -> Result<IndexMap<String, ParamPair>> {
    let state = fwd.state.as_ref().ok_or(Error::NoForwardState)?;
    if state.fingerprint != spec.fingerprint() {
        return Err(Error::invalid("forward state was produced by a different network"));
    }
    if logits_grad.shape() != fwd.logits.shape() {
        return Err(Error::shape(format!(
            "loss gradient {:?} does not match logits {:?}",
            logits_grad.shape(),
            fwd.logits.shape()
        )));
    }
    let top = state.inputs.len();
    let Some(lowest) = spec.layers[..top]
        .iter()
        .position(|l| l.kind.has_params() && l.lr_mult != 0.0)
    else {
        return Ok(IndexMap::new());
    };
    let mut grads = Vec::new();
    let mut g = logits_grad.clone();
    for i in (lowest..top).rev() {
        let layer = &spec.layers[i];
        let x = &state.inputs[i];
        let need_dx = i > lowest;
        let dx = match &layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let p = params(ckpt, &layer.name)?;
                let cg = conv2d_backward(x, &p.weights, &g, *stride, *pad, need_dx)?;
                if layer.lr_mult != 0.0 {
                    grads.push((layer.name.clone(), ParamPair { weights: cg.dw, bias: cg.db }));
                }
                cg.dx
            }
            LayerKind::Fc { .. } => {
                let p = params(ckpt, &layer.name)?;
                let flat = flatten(x.clone())?;
                let ag = affine_backward(&flat, &p.weights, &g, need_dx)?;
                if layer.lr_mult != 0.0 {
                    grads.push((layer.name.clone(), ParamPair { weights: ag.dw, bias: ag.db }));
                }
                ag.dx.map(|d| d.reshape(x.shape().to_vec())).transpose()?
            }
            LayerKind::Pool { .. } => {
                let map = state.argmax[i].as_ref().expect("pool layers record argmax");
                Some(maxpool_backward(x.shape(), map, &g)?)
            }
            LayerKind::Norm(p) => Some(lrn_backward(x, &g, p)?),
            LayerKind::Relu => Some(relu_backward(x, &g)?),
            LayerKind::Softmax => {
                return Err(Error::InvalidNetwork(format!(
                    "cannot backpropagate through interior softmax `{}`",
                    layer.name
                )))
            }
        };
        match dx {
            Some(d) => g = d,
            None => break,
        }
    }
    grads.reverse();
    Ok(grads.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, small_reference_spec, LayerSpec};
    use crate::tensor::cross_entropy_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[n, 3, 64, 64], 20.0, &mut rng)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = small_reference_spec(2);
        let ckpt = init_params(&spec, 1).unwrap();
        let out = forward(&spec, &ckpt, &batch(3, 2), &["prob"]).unwrap();
        for row in out["prob"].data().chunks(2) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn endpoint_shapes_follow_inference() {
        let spec = small_reference_spec(2);
        let ckpt = init_params(&spec, 1).unwrap();
        let names = spec.probe_endpoints();
        let out = forward(&spec, &ckpt, &batch(2, 3), &names.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        let shapes = spec.infer_shapes().unwrap();
        assert_eq!(out.len(), 13);
        for name in &names {
            assert_eq!(&out[name].shape()[1..], &shapes[name][..], "{name}");
        }
        assert!(out["conv1"].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn unknown_endpoint() {
        let spec = small_reference_spec(2);
        let ckpt = init_params(&spec, 1).unwrap();
        assert!(matches!(
            forward(&spec, &ckpt, &batch(1, 3), &["conv9"]),
            Err(Error::UnknownEndpoint(_))
        ));
    }

    #[test]
    fn backward_requires_state() {
        let spec = small_reference_spec(2);
        let ckpt = init_params(&spec, 1).unwrap();
        let fwd = run_forward(&spec, &ckpt, &batch(1, 3), &ForwardOptions::default()).unwrap();
        let g = Tensor::zeros(fwd.logits.shape());
        assert!(matches!(backward(&spec, &ckpt, &fwd, &g), Err(Error::NoForwardState)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = small_reference_spec(2);
        let ckpt = init_params(&spec, 1).unwrap();
        let fwd = run_forward(&spec, &ckpt, &batch(2, 3), &ForwardOptions::training()).unwrap();
        let grads = backward(&spec, &ckpt, &fwd, &Tensor::zeros(fwd.logits.shape())).unwrap();
        assert_eq!(grads.len(), 8);
        for (name, g) in &grads {
            assert_eq!(g.shapes(), ckpt.get(name).unwrap().shapes());
            assert!(g.weights.data().iter().chain(g.bias.data()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_sample_keeps_mean_gradient() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![
                LayerSpec::fc("fc1", 5),
                LayerSpec::relu("r1"),
                LayerSpec::fc("fc2", 2),
                LayerSpec::softmax("prob"),
            ],
        );
        let mut ckpt = init_params(&spec, 4).unwrap();
        for p in ckpt.entries.values_mut() {
            p.weights = p.weights.map(|v| v * 50.0);
        }
        let x = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let xx = Tensor::stack(&[x.row(0), x.row(0)]).unwrap();
        let grad_for = |b: &Tensor, labels: &[usize]| {
            let fwd = run_forward(&spec, &ckpt, b, &ForwardOptions::training()).unwrap();
            let loss = cross_entropy_loss(&fwd.logits, labels).unwrap();
            let g = loss.pull(&Tensor::scalar(1.0)).unwrap().remove(0);
            backward(&spec, &ckpt, &fwd, &g).unwrap()
        };
        let single = grad_for(&x, &[1]);
        let double = grad_for(&xx, &[1, 1]);
        for (name, g) in &single {
            let d = &double[name];
            for (a, b) in g.weights.data().iter().zip(d.weights.data()) {
                assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn frozen_layers_are_skipped() {
        let mut spec = small_reference_spec(2);
        for l in &mut spec.layers {
            if l.name != "fc8" {
                l.lr_mult = 0.0;
            }
        }
        let ckpt = init_params(&spec, 1).unwrap();
        let fwd = run_forward(&spec, &ckpt, &batch(2, 3), &ForwardOptions::training()).unwrap();
        let grads = backward(&spec, &ckpt, &fwd, &Tensor::full(fwd.logits.shape(), 0.1)).unwrap();
        assert_eq!(grads.keys().collect::<Vec<_>>(), vec!["fc8"]);
    }
}
