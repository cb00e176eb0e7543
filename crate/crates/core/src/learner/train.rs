//! SGD, the Reptile meta step, and the two-stage meta/micro trainer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::model::{ModelParams, ModelSpec};
use super::net::{backward, cross_entropy, forward, Mode};
use super::{batch_from_samples, LearnerError, Tensor};
use crate::pipeline::SampleTensor;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inner SGD learning rate.
    pub lr: f64,
    /// Meta step size in `(0, 1]`; `0` is accepted and freezes `θ`.
    pub beta: f64,
    /// Mini-batch size `m`.
    pub batch: usize,
    /// Points sampled per meta-iteration; defaults to `batch`.
    pub meta_k: Option<usize>,
    pub meta_iterations: usize,
    pub micro_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta: 0.5, batch: 16, meta_k: None, meta_iterations: 20, micro_epochs: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(LearnerError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(LearnerError::Config(format!("meta step {} outside [0, 1]", self.beta)));
        }
        if self.batch == 0 || self.meta_k == Some(0) {
            return Err(LearnerError::Config("batch and meta sample size must be positive".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.meta_k.unwrap_or(self.batch)
    }
}

/// `θ − lr·g` for a batch-mean gradient `g`.
pub fn sgd_step(theta: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    theta.iter().zip(grad).map(|(t, g)| t - lr * g).collect()
}

/// `(1−β)·a + β·b`, which is exactly `a` at `β = 0` and exactly `b` at `β = 1`.
pub fn interpolate(a: &[f64], b: &[f64], beta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - beta) * x + beta * y).collect()
}

/// One SGD step on a batch; batch-norm running statistics follow the batch.
pub fn train_step(spec: &ModelSpec, params: &ModelParams, x: &Tensor, labels: &[usize], lr: f64) -> Result<(ModelParams, f64), LearnerError> {
    let out = forward(spec, params, x, Mode::Train)?;
    let loss = cross_entropy(&out.logits, labels)?;
    let grad = backward(spec, params, &out.cache, labels)?;
    let layout = spec.layout();
    let mut running = params.running.clone();
    let m = spec.bn_momentum;
    for (bn, (mean, var)) in layout.bns.iter().zip(out.cache.batch_stats()) {
        for c in 0..bn.ch {
            running[bn.mean + c] = m * running[bn.mean + c] + (1.0 - m) * mean[c];
            running[bn.var + c] = m * running[bn.var + c] + (1.0 - m) * var[c];
        }
    }
    let theta = sgd_step(&params.theta, &grad, lr);
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(LearnerError::NonFinite("parameters after SGD step"));
    }
    Ok((ModelParams { theta, running, seed: params.seed }, loss))
}

/// Mini-batch SGD over `data[order]` in chunks of `cfg.batch`. Returns the
/// mean of the batch losses.
pub fn sgd_epoch(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &[&SampleTensor],
    order: &[usize],
    cfg: &TrainConfig,
) -> Result<(ModelParams, f64), LearnerError> {
    cfg.validate()?;
    if order.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut p = params.clone();
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(cfg.batch) {
        let samples: Vec<&SampleTensor> = chunk
            .iter()
            .map(|&i| data.get(i).copied().ok_or_else(|| LearnerError::Shape(format!("sample index {i} out of range"))))
            .collect::<Result<_, _>>()?;
        let (x, y) = batch_from_samples(&samples)?;
        let (next, loss) = train_step(spec, &p, &x, &y, cfg.lr)?;
        p = next;
        total += loss;
        steps += 1;
    }
    Ok((p, total / steps as f64))
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(seed: u64, stream: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream, epoch as u64));
    idx
}

/// The `k` points used by meta-iteration `iteration`, without replacement.
pub fn meta_sample(seed: u64, iteration: usize, n: usize, k: usize) -> Vec<usize> {
    let mut idx = epoch_order(seed, "meta-sample", iteration, n);
    idx.truncate(k);
    idx
}

/// `θ ← θ + β(θ̃ − θ)` where `θ̃` is inner SGD on `k` points sampled from
/// `micro`. Running statistics are interpolated the same way.
pub fn reptile_meta_step(
    spec: &ModelSpec,
    params: &ModelParams,
    micro: &[&SampleTensor],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<ModelParams, LearnerError> {
    cfg.validate()?;
    if micro.is_empty() {
        return Err(LearnerError::EmptyMicroDataset);
    }
    let k = cfg.k();
    if k > micro.len() {
        return Err(LearnerError::Config(format!("meta sample size {k} exceeds {} micro samples", micro.len())));
    }
    let picked = meta_sample(cfg.seed, iteration, micro.len(), k);
    let (tilde, _) = sgd_epoch(spec, params, micro, &picked, cfg)?;
    Ok(ModelParams {
        theta: interpolate(&params.theta, &tilde.theta, cfg.beta),
        running: interpolate(&params.running, &tilde.running, cfg.beta),
        seed: params.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Meta,
    Micro,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub stage: Stage,
    pub step: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Stage (i): `meta_iterations` Reptile steps on resampled subsets of
/// `micro`; stage (ii): `micro_epochs` epochs of SGD over all of `micro`.
pub fn famres_train(
    spec: &ModelSpec,
    init: &ModelParams,
    micro: &[&SampleTensor],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<CurvePoint>), LearnerError> {
    cfg.validate()?;
    if micro.is_empty() {
        return Err(LearnerError::EmptyMicroDataset);
    }
    let mut p = init.clone();
    let mut curve = Vec::new();
    let k = cfg.k().min(micro.len());
    let meta_cfg = TrainConfig { meta_k: Some(k), ..cfg.clone() };
    for it in 0..cfg.meta_iterations {
        p = reptile_meta_step(spec, &p, micro, &meta_cfg, it)?;
        if it + 1 == cfg.meta_iterations || (it + 1) % 10 == 0 {
            let (x, y) = batch_from_samples(micro)?;
            let loss = cross_entropy(&forward(spec, &p, &x, Mode::Eval)?.logits, &y)?;
            curve.push(CurvePoint { stage: Stage::Meta, step: it + 1, loss, val_accuracy: None });
        }
    }
    for e in 0..cfg.micro_epochs {
        let order = epoch_order(cfg.seed, "micro-epoch", e, micro.len());
        let (next, loss) = sgd_epoch(spec, &p, micro, &order, cfg)?;
        p = next;
        curve.push(CurvePoint { stage: Stage::Micro, step: e + 1, loss, val_accuracy: None });
    }
    Ok((p, curve))
}

/// Plain mini-batch SGD for `epochs` epochs, recording validation accuracy
/// when a validation set is given.
pub fn train_supervised(
    spec: &ModelSpec,
    init: &ModelParams,
    train: &[&SampleTensor],
    val: &[&SampleTensor],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<CurvePoint>), LearnerError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut p = init.clone();
    let mut curve = Vec::new();
    for e in 0..epochs {
        let order = epoch_order(cfg.seed, "train-epoch", e, train.len());
        let (next, loss) = sgd_epoch(spec, &p, train, &order, cfg)?;
        p = next;
        let val_accuracy = if val.is_empty() { None } else { Some(evaluate(spec, &p, val)?.accuracy) };
        curve.push(CurvePoint { stage: Stage::Supervised, step: e + 1, loss, val_accuracy });
    }
    Ok((p, curve))
}

#[cfg(test)]
mod tests {
    use super::super::model::InputShape;
    use super::*;
    use crate::pipeline::TensorShape;
    use rand::Rng;

    fn spec() -> ModelSpec {
        ModelSpec::new(InputShape { channels: 2, height: 3, width: 4 }, 3, 0.05).unwrap()
    }

    fn samples(n: usize, seed: u64) -> Vec<SampleTensor> {
        let shape = TensorShape { s: 3, k: 4, a: 2, u: 1 };
        let mut rng = substream(seed, "train-test", 0);
        (0..n)
            .map(|i| SampleTensor {
                shape,
                label: i % 3,
                data: (0..shape.len()).map(|_| rng.random_range(-1.0..1.0) + (i % 3) as f64).collect(),
            })
            .collect()
    }

    #[test]
    fn sgd_step_degeneracies() {
        let theta = [1.0, -2.0];
        assert_eq!(sgd_step(&theta, &[0.0, 0.0], 0.3), theta.to_vec());
        assert_eq!(sgd_step(&theta, &[5.0, 1.0], 0.0), theta.to_vec());
    }

    #[test]
    fn quadratic_step() {
        // f(θ) = ½(3θ₀² + θ₁²): gradient (3θ₀, θ₁).
        let theta = [1.0, -2.0];
        let grad = [3.0 * theta[0], theta[1]];
        let next = sgd_step(&theta, &grad, 0.1);
        assert!((next[0] - 0.7).abs() < 1e-12);
        assert!((next[1] + 1.8).abs() < 1e-12);
    }

    #[test]
    fn reptile_degeneracies() {
        let s = spec();
        let data = samples(12, 1);
        let refs: Vec<&SampleTensor> = data.iter().collect();
        let p = ModelParams::init(&s, 3);
        let cfg = TrainConfig { lr: 0.05, batch: 4, meta_k: Some(8), seed: 9, ..Default::default() };
        let picked = meta_sample(cfg.seed, 0, refs.len(), 8);
        let (tilde, _) = sgd_epoch(&s, &p, &refs, &picked, &cfg).unwrap();

        let one = reptile_meta_step(&s, &p, &refs, &TrainConfig { beta: 1.0, ..cfg.clone() }, 0).unwrap();
        assert_eq!(one, tilde);
        let zero = reptile_meta_step(&s, &p, &refs, &TrainConfig { beta: 0.0, ..cfg.clone() }, 0).unwrap();
        assert_eq!(zero, p);
        let half = reptile_meta_step(&s, &p, &refs, &TrainConfig { beta: 0.5, ..cfg.clone() }, 0).unwrap();
        for ((h, a), b) in half.theta.iter().zip(&p.theta).zip(&tilde.theta) {
            assert!((h - 0.5 * (a + b)).abs() <= 1e-15 * a.abs().max(b.abs()).max(1.0));
        }
        assert!(reptile_meta_step(&s, &p, &[], &cfg, 0).is_err());
        assert!(reptile_meta_step(&s, &p, &refs[..4], &cfg, 0).is_err());
    }

    #[test]
    fn famres_degeneracies() {
        let s = spec();
        let data = samples(9, 2);
        let refs: Vec<&SampleTensor> = data.iter().collect();
        let p = ModelParams::init(&s, 4);
        let cfg = TrainConfig { lr: 0.05, beta: 1.0, batch: 3, meta_k: Some(9), meta_iterations: 1, micro_epochs: 0, seed: 5 };
        let (famres, _) = famres_train(&s, &p, &refs, &cfg).unwrap();
        let (epoch, _) = sgd_epoch(&s, &p, &refs, &meta_sample(5, 0, 9, 9), &cfg).unwrap();
        assert_eq!(famres, epoch);

        let tune = TrainConfig { meta_iterations: 0, micro_epochs: 2, ..cfg.clone() };
        let (a, _) = famres_train(&s, &p, &refs, &tune).unwrap();
        let (e1, _) = sgd_epoch(&s, &p, &refs, &epoch_order(5, "micro-epoch", 0, 9), &tune).unwrap();
        let (e2, _) = sgd_epoch(&s, &e1, &refs, &epoch_order(5, "micro-epoch", 1, 9), &tune).unwrap();
        assert_eq!(a, e2);
        assert!(matches!(famres_train(&s, &p, &[], &cfg), Err(LearnerError::EmptyMicroDataset)));
    }

    #[test]
    fn memorises_two_samples() {
        let s = spec();
        let data = samples(2, 3);
        let refs: Vec<&SampleTensor> = data.iter().collect();
        let (x, y) = batch_from_samples(&refs).unwrap();
        let mut p = ModelParams::init(&s, 0);
        let mut loss = f64::INFINITY;
        for _ in 0..50 {
            let (next, l) = train_step(&s, &p, &x, &y, 0.1).unwrap();
            p = next;
            loss = l;
        }
        let after = cross_entropy(&forward(&s, &p, &x, Mode::Train).unwrap().logits, &y).unwrap();
        assert!(after < 1e-2, "loss {after} (last step {loss})");
    }

    #[test]
    fn single_batch_loss_halves() {
        let s = spec();
        let data = samples(10, 4);
        let refs: Vec<&SampleTensor> = data.iter().collect();
        let cfg = TrainConfig { lr: 0.002, batch: 10, ..Default::default() };
        let p0 = ModelParams::init(&s, 1);
        let (x, y) = batch_from_samples(&refs).unwrap();
        let initial = cross_entropy(&forward(&s, &p0, &x, Mode::Train).unwrap().logits, &y).unwrap();
        let mut p = p0;
        let mut losses = Vec::new();
        for _ in 0..500 {
            let (next, l) = train_step(&s, &p, &x, &y, cfg.lr).unwrap();
            p = next;
            losses.push(l);
        }
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let last = cross_entropy(&forward(&s, &p, &x, Mode::Train).unwrap().logits, &y).unwrap();
        assert!(last <= 0.5 * initial, "{last} vs {initial}");
    }

    #[test]
    fn training_is_deterministic() {
        let s = spec();
        let data = samples(12, 5);
        let refs: Vec<&SampleTensor> = data.iter().collect();
        let cfg = TrainConfig { meta_iterations: 3, micro_epochs: 2, batch: 4, ..Default::default() };
        let p = ModelParams::init(&s, 2);
        let a = famres_train(&s, &p, &refs, &cfg).unwrap();
        let b = famres_train(&s, &p, &refs, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
