//! Mini-batch training with Adam, global-norm clipping and per-epoch traces.
//!
//! Per-window gradients within a batch are computed in parallel and summed in
//! window order by the calling thread, so results do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{rnn_backward, rnn_forecast, rnn_forward, rnn_loss, RnnForecasterParams};
use crate::data::{WindowSample, WindowedDataset};
use crate::error::{Error, Result};
use crate::numeric::{sample_standard_normal, Parameters, SeededRng};
use crate::vae::{self, LatentMode, LossParts, LossWeights, VaeRnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Global gradient-norm ceiling.
    pub clip: f64,
    /// Per-step probability of feeding the true target during training rollouts.
    pub teacher_forcing: f64,
    /// Tail fraction of each series' training windows held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            weights: LossWeights::default(),
            clip: 5.0,
            teacher_forcing: 0.5,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip threshold must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("teacher_forcing must lie in [0,1] and validation_fraction in [0,1)"));
        }
        self.weights.validate()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescale `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm after clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
        grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    } else {
        norm
    }
}

/// A model the harness can fit on windowed data.
pub trait Trainable: Parameters + Clone + Send + Sync {
    /// Loss parts and parameter gradient of one window under stochastic
    /// training conditions drawn from `rng`.
    fn window_loss_grad(
        &self,
        sample: &WindowSample,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<(LossParts, Self)>;

    /// Deterministic evaluation loss (no sampling, no teacher forcing).
    fn window_loss(&self, sample: &WindowSample, cfg: &TrainConfig) -> Result<LossParts>;

    fn forecast(&self, x: &[Vec<f64>], mask: &[Vec<bool>], horizon: usize) -> Result<Vec<Vec<f64>>>;
}

fn teacher_plan(horizon: usize, prob: f64, rng: &mut SeededRng) -> Vec<bool> {
    (0..horizon).map(|j| j > 0 && rng.bernoulli(prob)).collect()
}

impl Trainable for VaeRnnParams {
    fn window_loss_grad(
        &self,
        s: &WindowSample,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<(LossParts, Self)> {
        let eps = sample_standard_normal(rng, self.config.latent);
        let teacher = teacher_plan(s.y.len(), cfg.teacher_forcing, rng);
        let cache = vae::forward(self, &s.x, &s.mask, Some(&s.y), s.y.len(), LatentMode::Noise(&eps), &teacher)?;
        let parts = vae::cache_losses(&cache)?;
        let grad = vae::model_backward(self, &cache, &cfg.weights)?;
        Ok((parts, grad))
    }

    fn window_loss(&self, s: &WindowSample, _cfg: &TrainConfig) -> Result<LossParts> {
        let cache = vae::forward(self, &s.x, &s.mask, Some(&s.y), s.y.len(), LatentMode::Mean, &[])?;
        vae::cache_losses(&cache)
    }

    fn forecast(&self, x: &[Vec<f64>], _mask: &[Vec<bool>], horizon: usize) -> Result<Vec<Vec<f64>>> {
        vae::predict(self, x, horizon)
    }
}

impl Trainable for RnnForecasterParams {
    fn window_loss_grad(
        &self,
        s: &WindowSample,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<(LossParts, Self)> {
        let teacher = teacher_plan(s.y.len(), cfg.teacher_forcing, rng);
        let cache = rnn_forward(self, &s.x, Some(&s.y), s.y.len(), &teacher)?;
        let pred = rnn_loss(&cache)?;
        let grad = rnn_backward(self, &cache, 1.0)?;
        Ok((
            LossParts {
                pred,
                ..LossParts::default()
            },
            grad,
        ))
    }

    fn window_loss(&self, s: &WindowSample, _cfg: &TrainConfig) -> Result<LossParts> {
        let cache = rnn_forward(self, &s.x, Some(&s.y), s.y.len(), &[])?;
        Ok(LossParts {
            pred: rnn_loss(&cache)?,
            ..LossParts::default()
        })
    }

    fn forecast(&self, x: &[Vec<f64>], _mask: &[Vec<bool>], horizon: usize) -> Result<Vec<Vec<f64>>> {
        rnn_forecast(self, x, horizon)
    }
}

/// The RNN baselines minimise prediction MSE only.
pub fn forecaster_config(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        weights: LossWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
        },
        ..*cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reco: f64,
    pub pred: f64,
    pub kl: f64,
    pub total: f64,
    pub val_total: f64,
    /// Largest post-clip gradient norm seen this epoch.
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_total).collect()
    }

    pub fn epochs_to_converge(&self) -> Option<usize> {
        epochs_to_converge(&self.val_losses())
    }
}

/// First (1-based) epoch whose validation loss is within 1% of the minimum.
pub fn epochs_to_converge(val_losses: &[f64]) -> Option<usize> {
    let min = val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    val_losses
        .iter()
        .position(|v| (v - min).abs() <= (0.01 + 1e-12) * min.abs())
        .map(|i| i + 1)
}

/// Chronological fit/validation split: the last `fraction` of each series'
/// training windows (at least one when the series has two or more).
pub fn validation_split(train: &[WindowSample], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut fit = Vec::new();
    let mut val = Vec::new();
    let mut i = 0;
    while i < train.len() {
        let series = train[i].series_index;
        let mut j = i;
        while j < train.len() && train[j].series_index == series {
            j += 1;
        }
        let n = j - i;
        let n_val = if fraction > 0.0 && n >= 2 {
            ((fraction * n as f64).ceil() as usize).clamp(1, n - 1)
        } else {
            0
        };
        fit.extend(i..j - n_val);
        val.extend(j - n_val..j);
        i = j;
    }
    (fit, val)
}

fn mean_loss<M: Trainable>(model: &M, samples: &[&WindowSample], cfg: &TrainConfig) -> Result<LossParts> {
    let parts: Vec<LossParts> = samples
        .par_iter()
        .map(|s| model.window_loss(s, cfg))
        .collect::<Result<_>>()?;
    let mut acc = LossParts::default();
    for p in &parts {
        acc.add_scaled(p, 1.0 / parts.len().max(1) as f64);
    }
    Ok(acc)
}

/// Fit `model` on the training split of a normalized dataset.
pub fn train<M: Trainable>(mut model: M, ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(M, TrainTrace)> {
    cfg.validate()?;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((model, trace));
    }
    if ds.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let (fit_idx, val_idx) = validation_split(&ds.train, cfg.validation_fraction);
    let val: Vec<&WindowSample> = if val_idx.is_empty() {
        fit_idx.iter().map(|&i| &ds.train[i]).collect()
    } else {
        val_idx.iter().map(|&i| &ds.train[i]).collect()
    };
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = Adam::from_config(model.num_params(), cfg);
    let mut order = fit_idx.clone();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_parts = LossParts::default();
        let mut max_norm: f64 = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
            let results: Vec<(LossParts, M)> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| model.window_loss_grad(&ds.train[i], cfg, &mut SeededRng::new(seed)))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; model.num_params()];
            let mut batch_parts = LossParts::default();
            for (parts, g) in &results {
                batch_parts.add_scaled(parts, scale);
                let mut off = 0;
                g.visit(&mut |s| {
                    for (a, v) in grad[off..off + s.len()].iter_mut().zip(s) {
                        *a += scale * v;
                    }
                    off += s.len();
                });
            }
            let total = batch_parts.total(&cfg.weights);
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            max_norm = max_norm.max(clip_global_norm(&mut grad, cfg.clip));
            let mut flat = model.to_flat();
            adam.step(&mut flat, &grad);
            model.set_flat(&flat);
            epoch_parts.add_scaled(&batch_parts, batch.len() as f64 / order.len() as f64);
        }
        let val_parts = mean_loss(&model, &val, cfg)?;
        trace.epochs.push(EpochRecord {
            epoch,
            reco: epoch_parts.reco,
            pred: epoch_parts.pred,
            kl: epoch_parts.kl,
            total: epoch_parts.total(&cfg.weights),
            val_total: val_parts.total(&cfg.weights),
            max_grad_norm: max_norm,
        });
    }
    Ok((model, trace))
}

/// Mean deterministic loss of `model` over a set of windows.
pub fn evaluate_loss<M: Trainable>(model: &M, samples: &[WindowSample], cfg: &TrainConfig) -> Result<LossParts> {
    let refs: Vec<&WindowSample> = samples.iter().collect();
    mean_loss(model, &refs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = vec![1.0];
        let mut adam = Adam::new(1, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..200 {
            let g = vec![2.0 * p[0]];
            adam.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2, "|p| = {}", p[0].abs());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![3.0, 4.0];
        let n = clip_global_norm(&mut g, 1.0);
        assert!(n <= 1.0 + 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn convergence_epoch_examples() {
        assert_eq!(epochs_to_converge(&[10.0, 5.0, 4.04, 4.0]), Some(3));
        assert_eq!(epochs_to_converge(&[3.0, 3.0, 3.0]), Some(1));
        assert_eq!(epochs_to_converge(&[7.5]), Some(1));
        assert_eq!(epochs_to_converge(&[10.0, 8.0, 6.0, 4.0]), Some(4));
        assert_eq!(epochs_to_converge(&[]), None);
    }

    #[test]
    fn validation_takes_series_tails() {
        let mk = |series_index: usize, start: usize| WindowSample {
            x: vec![],
            mask: vec![],
            y: vec![],
            series_id: String::new(),
            series_index,
            start,
        };
        let train: Vec<_> = (0..10).map(|i| mk(0, i)).chain((0..5).map(|i| mk(1, i))).collect();
        let (fit, val) = validation_split(&train, 0.1);
        assert_eq!(val, vec![9, 14]);
        assert_eq!(fit.len(), 13);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip: -1.0, ..Default::default() }.validate().is_err());
    }
}
