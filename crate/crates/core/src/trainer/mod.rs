//! Mini-batch SGD with weight decay, the training loop, checkpoints and the
//! finite-difference gradient checker.

mod checkpoint;
mod gradcheck;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dcl::DEFAULT_ALPHA;
use crate::error::{shape_mismatch, Error, Result};
use crate::nn::{Gradients, Network};
use crate::tensor::{Real, Tensor};
use crate::video::{ClipBatch, ClipSource};

pub use checkpoint::Checkpoint;
pub use gradcheck::{
    check_feature_gradients, check_gradients, feature_gradients, fixture, gradcheck, GradcheckConfig, GradcheckReport, TensorCheck, FIXTURE_INPUT,
    FIXTURE_SPEC,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_iterations: usize,
    pub momentum: f64,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 30,
            weight_decay: 5e-4,
            max_iterations: 10_000,
            momentum: 0.0,
            seed: 0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        Ok(())
    }
}

/// Momentum SGD state: one velocity buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
    decay: Vec<bool>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            velocity: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
            decay: net.param_infos().iter().map(|i| i.decay).collect(),
        }
    }

    /// `v ← μv + g + λw` (λ only for weights), then `w ← w − η v`.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, cfg: &TrainConfig) -> Result<()> {
        let params = net.params_mut();
        if params.len() != grads.tensors.len() || params.len() != self.velocity.len() {
            return Err(shape_mismatch("sgd step", &[params.len()], &[grads.tensors.len()]));
        }
        let lr = T::from_f64_lossy(cfg.learning_rate);
        let mu = T::from_f64_lossy(cfg.momentum);
        let wd = T::from_f64_lossy(cfg.weight_decay);
        for (((w, g), v), &decay) in params.into_iter().zip(&grads.tensors).zip(&mut self.velocity).zip(&self.decay) {
            if w.shape() != g.shape() {
                return Err(shape_mismatch("sgd step", w.shape(), g.shape()));
            }
            let wd = if decay { wd } else { T::zero() };
            for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi + wd * *wi;
                *wi = *wi - lr * *vi;
            }
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub classification: f64,
    pub code: f64,
}

pub fn write_loss_csv(w: &mut impl Write, history: &[LossRecord]) -> Result<()> {
    writeln!(w, "iteration,L,L_c,L_d")?;
    for r in history {
        writeln!(w, "{},{:e},{:e},{:e}", r.iteration, r.total, r.classification, r.code)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<LossRecord>,
}

/// Runs `cfg.max_iterations` SGD steps over seeded, per-epoch reshuffled
/// mini-batches. The last batch of an epoch may be short.
pub fn train<T: Real>(
    mut net: Network<T>,
    source: &dyn ClipSource,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for i in 0..source.len() {
        let label = source.label(i);
        if label >= net.classes() {
            return Err(Error::LabelOutOfRange { label, classes: net.classes() });
        }
    }
    let mut sgd = Sgd::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.max_iterations);
    for iteration in 1..=cfg.max_iterations {
        if cursor >= order.len() {
            order.sort_unstable();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch_seed = cfg.seed ^ (iteration as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let batch = ClipBatch::<T>::gather(source, &order[cursor..end], batch_seed)?;
        cursor = end;
        let (loss, grads) = net.forward_backward(&batch, cfg.alpha)?;
        sgd.step(&mut net, &grads, cfg)?;
        let record = LossRecord {
            iteration,
            total: loss.total,
            classification: loss.classification,
            code: loss.code,
        };
        on_step(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint { network: net, iteration: cfg.max_iterations as u64 },
        history,
    })
}
