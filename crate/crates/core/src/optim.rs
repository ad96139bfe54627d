//! SGD with momentum, weight decay and step decay, plus the epoch-based training loop.

use indexmap::IndexMap;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{backward, run_forward, Checkpoint, ForwardOptions, NetworkSpec, ParamPair};
use crate::tensor::{cross_entropy_loss, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub step_epochs: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop early once an epoch's running training accuracy reaches this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            step_epochs: 6,
            gamma: 0.1,
            epochs: 65,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 32,
            seed: 0,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("train.base_lr must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("train.gamma must lie in (0, 1]");
        }
        if self.step_epochs == 0 {
            return bad("train.step_epochs must be at least 1");
        }
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("train.momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("train.weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Splits a finite positive float into `(m, e)` with `x == m * 10^e` as shortest decimals.
fn decimal_parts(x: f64) -> Option<(u128, i32)> {
    let s = format!("{x:e}");
    let (mant, exp) = s.split_once('e')?;
    let exp: i32 = exp.parse().ok()?;
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let digits: u128 = format!("{int}{frac}").parse().ok()?;
    Some((digits, exp - frac.len() as i32))
}

/// Learning rate for `epoch`: `base_lr * gamma^floor(epoch / step_epochs)`.
///
/// The power is evaluated in decimal and rounded once, so `0.001` decayed by `0.1`
/// six times is exactly the literal `1e-9`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = epoch / config.step_epochs;
    if steps == 0 {
        return config.base_lr;
    }
    let exact = (|| {
        let (bm, be) = decimal_parts(config.base_lr)?;
        let (gm, ge) = decimal_parts(config.gamma)?;
        let steps32 = i32::try_from(steps).ok()?;
        let mut m = bm;
        for _ in 0..steps {
            m = m.checked_mul(gm)?;
        }
        let e = be.checked_add(ge.checked_mul(steps32)?)?;
        format!("{m}e{e}").parse::<f64>().ok()
    })();
    exact.unwrap_or_else(|| config.base_lr * config.gamma.powi(steps as i32))
}

/// Velocity buffers and progress of one training run.
#[derive(Clone, Debug)]
pub struct OptState {
    pub velocity: IndexMap<String, ParamPair>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl OptState {
    pub fn new(seed: u64) -> Self {
        OptState {
            velocity: IndexMap::new(),
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Hyperparameters of a single update.
#[derive(Clone, Copy, Debug)]
pub struct StepParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

fn update(w: &mut Tensor, v: &mut Tensor, g: &Tensor, rate: f32, momentum: f32, decay: f32) {
    for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
        *v = momentum * *v - rate * (g + decay * *w);
        *w += *v;
    }
}

/// One update: `v <- momentum*v - lr*lr_mult*(g + weight_decay*w)`, `w <- w + v`.
///
/// Layers whose multiplier is zero are not touched at all.
pub fn sgd_step(
    params: &mut Checkpoint,
    grads: &IndexMap<String, ParamPair>,
    state: &mut OptState,
    lr_mults: &IndexMap<String, f32>,
    step: StepParams,
) -> Result<()> {
    for (name, &mult) in lr_mults {
        if mult == 0.0 {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no gradient for trainable layer `{name}`")))?;
        let p = params
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParams(name.clone()))?;
        if g.shapes() != p.shapes() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shapes {:?}, parameters {:?}",
                g.shapes(),
                p.shapes()
            )));
        }
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| p.zeros_like());
        let rate = (step.lr * mult as f64) as f32;
        let (m, wd) = (step.momentum as f32, step.weight_decay as f32);
        update(&mut p.weights, &mut v.weights, &g.weights, rate, m, wd);
        update(&mut p.bias, &mut v.bias, &g.bias, rate, m, wd);
    }
    Ok(())
}

/// Indexed labelled samples that can produce network inputs.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class index of sample `i`.
    fn label(&self, i: usize) -> usize;

    /// Training-mode input for sample `i`; augmentation draws from `rng`.
    fn view(&self, i: usize, rng: &mut ChaCha8Rng) -> Result<Tensor>;
}

/// Pre-built inputs used verbatim.
#[derive(Clone, Debug)]
pub struct TensorSamples {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl SampleSource for TensorSamples {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn view(&self, i: usize, _rng: &mut ChaCha8Rng) -> Result<Tensor> {
        Ok(self.inputs[i].clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub type Validator<'a> = &'a dyn Fn(&Checkpoint) -> Result<f64>;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Trains `checkpoint` on `data`, one full shuffled pass per epoch.
pub fn train(
    spec: &NetworkSpec,
    checkpoint: &Checkpoint,
    data: &dyn SampleSource,
    config: &TrainConfig,
    validate: Option<Validator<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate_for_training()?;
    checkpoint.validate_against(spec)?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let classes = spec.output_width()?;
    if let Some(i) = (0..data.len()).find(|&i| data.label(i) >= classes) {
        return Err(Error::Data(format!(
            "sample {i} has class {} but the network has {classes} outputs",
            data.label(i)
        )));
    }
    let lr_mults: IndexMap<String, f32> = spec.param_layers().map(|l| (l.name.clone(), l.lr_mult)).collect();
    let frozen = lr_mults.values().all(|&m| m == 0.0);
    let mut params = checkpoint.clone();
    let mut state = OptState::new(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    let opts = ForwardOptions::training();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut rng = epoch_rng(config.seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let views = chunk
                .iter()
                .map(|&i| data.view(i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let batch = Tensor::stack(&views)?;
            let fwd = match run_forward(spec, &params, &batch, &opts) {
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                r => r?,
            };
            let loss = cross_entropy_loss(&fwd.logits, &labels)?;
            let l = loss.value.data()[0] as f64;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            loss_sum += l * chunk.len() as f64;
            correct += fwd
                .logits
                .argmax_rows()?
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            if frozen {
                continue;
            }
            let g = loss.pull(&Tensor::scalar(1.0))?.remove(0);
            let grads = backward(spec, &params, &fwd, &g)?;
            sgd_step(
                &mut params,
                &grads,
                &mut state,
                &lr_mults,
                StepParams {
                    lr,
                    momentum: config.momentum,
                    weight_decay: config.weight_decay,
                },
            )?;
        }
        state.epoch = epoch + 1;
        let n = data.len() as f64;
        if params.entries.values().any(|p| !p.weights.is_finite() || !p.bias.is_finite()) {
            return Err(Error::Divergence { epoch, loss: loss_sum / n });
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc: validate.map(|f| f(&params)).transpose()?,
        };
        debug!(
            "epoch {epoch}: lr {lr:e} loss {:.5} train_acc {:.4}",
            record.loss, record.train_acc
        );
        let done = config.stop_at_train_accuracy.is_some_and(|t| record.train_acc >= t);
        history.push(record);
        if done {
            info!("stopping after epoch {epoch}: training accuracy target reached");
            break;
        }
    }
    params.set_meta("epoch", state.epoch);
    Ok(TrainOutcome {
        checkpoint: params,
        history,
    })
}
