//! Multitask VAE-RNN: a recurrent encoder summarises the input window into a
//! single Gaussian latent, and a recurrent decoder started from that latent
//! both reconstructs the window and rolls the forecast forward.
//!
//! Decoder feeding, with `x` the (mask-filled) input window of length `T`:
//!
//! | decoder step | input             | output head            |
//! |--------------|-------------------|------------------------|
//! | `0`          | zeros             | `x̂_0`                  |
//! | `t ∈ 1..T`   | `x_{t-1}`         | `x̂_t`                  |
//! | `T`          | `x_{T-1}`         | `ŷ_0`                  |
//! | `T + j`      | `ŷ_{j-1}` or `y_{j-1}` (teacher forcing) | `ŷ_j` |
//!
//! All values are in normalized units, so a masked entry pre-filled with `0`
//! holds the training mean.

use std::hash::{DefaultHasher, Hasher};

use serde::{Deserialize, Serialize};

use crate::cells::{
    sequence_backward, sequence_forward, step_backward, step_forward, CellKind, CellParams,
    Direction, HiddenState, SequenceCache, StepCache,
};
use crate::error::{Error, Result};
use crate::numeric::{Affine, Parameters, SeededRng};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            input_dim: 1,
            hidden: 64,
            latent: 8,
        }
    }
}

impl VaeConfig {
    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::invalid(format!(
                "VAE dimensions must be positive (d={}, h={}, k={})",
                self.input_dim, self.hidden, self.latent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeRnnParams {
    pub config: VaeConfig,
    pub encoder: CellParams,
    pub mu_head: Affine,
    pub logvar_head: Affine,
    /// `h_0 = tanh(latent_to_hidden(z))`.
    pub latent_to_hidden: Affine,
    /// `c_0 = latent_to_cell(z)`, LSTM only.
    pub latent_to_cell: Option<Affine>,
    pub decoder: CellParams,
    pub recon_head: Affine,
    pub pred_head: Affine,
}

impl VaeRnnParams {
    pub fn init(config: VaeConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let VaeConfig {
            cell,
            input_dim: d,
            hidden: h,
            latent: k,
        } = config;
        Ok(Self {
            config,
            encoder: CellParams::init(cell, d, h, rng),
            mu_head: Affine::init(h, k, rng),
            logvar_head: Affine::init(h, k, rng),
            latent_to_hidden: Affine::init(k, h, rng),
            latent_to_cell: (cell == CellKind::Lstm).then(|| Affine::init(k, h, rng)),
            decoder: CellParams::init(cell, d, h, rng),
            recon_head: Affine::init(h, d, rng),
            pred_head: Affine::init(h, d, rng),
        })
    }

    pub fn zeros(config: VaeConfig) -> Result<Self> {
        let mut p = Self::init(config, &mut SeededRng::new(0))?;
        p.fill(0.0);
        Ok(p)
    }

    pub(crate) fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.visit(&mut |s| {
            for v in s {
                hasher.write_u64(v.to_bits());
            }
        });
        hasher.finish()
    }

    fn check_window(&self, x: &[Vec<f64>]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::invalid("input window must have at least one step"));
        }
        for row in x {
            Error::check_dim("window width", self.config.input_dim, row.len())?;
        }
        Ok(())
    }
}

impl Parameters for VaeRnnParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        self.mu_head.visit(f);
        self.logvar_head.visit(f);
        self.latent_to_hidden.visit(f);
        if let Some(a) = &self.latent_to_cell {
            a.visit(f);
        }
        self.decoder.visit(f);
        self.recon_head.visit(f);
        self.pred_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.mu_head.visit_mut(f);
        self.logvar_head.visit_mut(f);
        self.latent_to_hidden.visit_mut(f);
        if let Some(a) = &mut self.latent_to_cell {
            a.visit_mut(f);
        }
        self.decoder.visit_mut(f);
        self.recon_head.visit_mut(f);
        self.pred_head.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
    /// Noise used to draw `z`; all zeros when `z = mu`.
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub reco: f64,
    pub pred: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        loss_total(self, w)
    }

    pub fn add_scaled(&mut self, other: &LossParts, s: f64) {
        self.reco += s * other.reco;
        self.pred += s * other.pred;
        self.kl += s * other.kl;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub x_hat: Vec<Vec<f64>>,
    pub y_hat: Vec<Vec<f64>>,
    pub latent: LatentState,
}

/// Mean squared error over observed entries only.
pub fn loss_reconstruction(x: &[Vec<f64>], x_hat: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<f64> {
    Error::check_dim("loss_reconstruction rows", x.len(), x_hat.len())?;
    Error::check_dim("loss_reconstruction mask rows", x.len(), mask.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((xr, hr), mr) in x.iter().zip(x_hat).zip(mask) {
        Error::check_dim("loss_reconstruction width", xr.len(), hr.len())?;
        Error::check_dim("loss_reconstruction mask width", xr.len(), mr.len())?;
        for ((a, b), &m) in xr.iter().zip(hr).zip(mr) {
            if m {
                sum += (a - b).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("reconstruction loss needs at least one observed entry"));
    }
    Ok(sum / n as f64)
}

/// Mean squared error over every horizon entry.
pub fn loss_prediction(y: &[Vec<f64>], y_hat: &[Vec<f64>]) -> Result<f64> {
    Error::check_dim("loss_prediction rows", y.len(), y_hat.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        Error::check_dim("loss_prediction width", a.len(), b.len())?;
        sum += a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        n += a.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `-0.5 Σ (1 + logvar − mu² − exp(logvar))`, KL to the standard normal.
pub fn loss_kl(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    Error::check_dim("loss_kl", mu.len(), logvar.len())?;
    Ok(-0.5
        * mu
            .iter()
            .zip(logvar)
            .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>())
}

/// KL averaged over a batch of posteriors.
pub fn loss_kl_batch(posteriors: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if posteriors.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (mu, lv) in posteriors {
        s += loss_kl(mu, lv)?;
    }
    Ok(s / posteriors.len() as f64)
}

pub fn loss_total(parts: &LossParts, w: &LossWeights) -> f64 {
    w.alpha * parts.reco + w.beta * parts.pred + w.gamma * parts.kl
}

/// `(mu, logvar)` of the approximate posterior; `logvar` is clamped.
pub fn encode(p: &VaeRnnParams, x: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check_window(x)?;
    let (mu, raw, _, _) = encode_inner(p, x)?;
    let logvar = raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    Ok((mu, logvar))
}

fn encode_inner(p: &VaeRnnParams, x: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, SequenceCache, Vec<f64>)> {
    let enc = sequence_forward(
        &p.encoder,
        x,
        &HiddenState::zeros(p.config.cell, p.config.hidden),
        Direction::Forward,
    )?;
    let h = enc.final_state.h;
    let mu = p.mu_head.apply(&h);
    let raw = p.logvar_head.apply(&h);
    Ok((mu, raw, enc.cache, h))
}

pub fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<LatentState> {
    Error::check_dim("reparameterize logvar", mu.len(), logvar.len())?;
    Error::check_dim("reparameterize eps", mu.len(), eps.len())?;
    let z = mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(LatentState {
        mu: mu.to_vec(),
        logvar: logvar.to_vec(),
        z,
        eps: eps.to_vec(),
    })
}

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut SeededRng) -> Result<LatentState> {
    let eps = crate::numeric::sample_standard_normal(rng, mu.len());
    reparameterize_with(mu, logvar, &eps)
}

/// How the latent is chosen in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum LatentMode<'a> {
    /// `z = mu`.
    Mean,
    /// `z = mu + σ ⊙ eps` with the given noise.
    Noise(&'a [f64]),
}

#[derive(Debug, Clone)]
enum DecoderInput {
    Zero,
    Window(usize),
    Target(usize),
    OwnPrediction(usize),
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    x: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    y: Option<Vec<Vec<f64>>>,
    enc: SequenceCache,
    enc_h: Vec<f64>,
    logvar_raw: Vec<f64>,
    h0_act: Vec<f64>,
    dec_steps: Vec<StepCache>,
    dec_h: Vec<Vec<f64>>,
    dec_inputs: Vec<DecoderInput>,
    output: ModelOutput,
}

impl ForwardCache {
    pub fn output(&self) -> &ModelOutput {
        &self.output
    }
}

/// Forward pass with activations retained.
///
/// `teacher[j]` (for `j ≥ 1`) feeds the true `y_{j-1}` instead of `ŷ_{j-1}` at
/// prediction step `j`; it requires `y`.
pub fn forward(
    p: &VaeRnnParams,
    x: &[Vec<f64>],
    mask: &[Vec<bool>],
    y: Option<&[Vec<f64>]>,
    horizon: usize,
    latent_mode: LatentMode<'_>,
    teacher: &[bool],
) -> Result<ForwardCache> {
    p.check_window(x)?;
    if horizon < 1 {
        return Err(Error::invalid("prediction horizon must be at least 1"));
    }
    Error::check_dim("mask rows", x.len(), mask.len())?;
    for m in mask {
        Error::check_dim("mask width", p.config.input_dim, m.len())?;
    }
    if let Some(y) = y {
        Error::check_dim("target horizon", horizon, y.len())?;
        for row in y {
            Error::check_dim("target width", p.config.input_dim, row.len())?;
        }
    }
    if teacher.iter().any(|&t| t) && y.is_none() {
        return Err(Error::invalid("teacher forcing requires targets"));
    }
    let k = p.config.latent;
    let (mu, logvar_raw, enc, enc_h) = encode_inner(p, x)?;
    let logvar: Vec<f64> = logvar_raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    let latent = match latent_mode {
        LatentMode::Mean => reparameterize_with(&mu, &logvar, &vec![0.0; k])?,
        LatentMode::Noise(eps) => reparameterize_with(&mu, &logvar, eps)?,
    };
    let h0_pre = p.latent_to_hidden.apply(&latent.z);
    let h0_act: Vec<f64> = h0_pre.iter().map(|v| v.tanh()).collect();
    let c0 = p.latent_to_cell.as_ref().map(|a| a.apply(&latent.z));
    let mut state = HiddenState {
        h: h0_act.clone(),
        c: c0,
    };

    let t_len = x.len();
    let d = p.config.input_dim;
    let total = t_len + horizon;
    let mut dec_steps = Vec::with_capacity(total);
    let mut dec_h = Vec::with_capacity(total);
    let mut dec_inputs = Vec::with_capacity(total);
    let mut x_hat = Vec::with_capacity(t_len);
    let mut y_hat: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let zeros = vec![0.0; d];
    for s in 0..total {
        let src = if s == 0 {
            DecoderInput::Zero
        } else if s <= t_len {
            DecoderInput::Window(s - 1)
        } else {
            let j = s - t_len;
            if teacher.get(j).copied().unwrap_or(false) {
                DecoderInput::Target(j - 1)
            } else {
                DecoderInput::OwnPrediction(j - 1)
            }
        };
        let input: &[f64] = match &src {
            DecoderInput::Zero => &zeros,
            DecoderInput::Window(t) => &x[*t],
            DecoderInput::Target(j) => &y.expect("checked above")[*j],
            DecoderInput::OwnPrediction(j) => &y_hat[*j],
        };
        let (next, cache) = step_forward(&p.decoder, input, &state);
        if s < t_len {
            x_hat.push(p.recon_head.apply(&next.h));
        } else {
            y_hat.push(p.pred_head.apply(&next.h));
        }
        dec_h.push(next.h.clone());
        dec_steps.push(cache);
        dec_inputs.push(src);
        state = next;
    }

    Ok(ForwardCache {
        fingerprint: p.fingerprint(),
        x: x.to_vec(),
        mask: mask.to_vec(),
        y: y.map(<[_]>::to_vec),
        enc,
        enc_h,
        logvar_raw,
        h0_act,
        dec_steps,
        dec_h,
        dec_inputs,
        output: ModelOutput { x_hat, y_hat, latent },
    })
}

/// Inference decode: autoregressive rollout, no teacher forcing.
pub fn decode(p: &VaeRnnParams, z: &[f64], x: &[Vec<f64>], horizon: usize) -> Result<ModelOutput> {
    Error::check_dim("decode latent", p.config.latent, z.len())?;
    p.check_window(x)?;
    if horizon < 1 {
        return Err(Error::invalid("prediction horizon must be at least 1"));
    }
    let h0: Vec<f64> = p.latent_to_hidden.apply(z).iter().map(|v| v.tanh()).collect();
    let c0 = p.latent_to_cell.as_ref().map(|a| a.apply(z));
    let mut state = HiddenState { h: h0, c: c0 };
    let d = p.config.input_dim;
    let mut x_hat = Vec::with_capacity(x.len());
    let mut y_hat: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut input = vec![0.0; d];
    for s in 0..x.len() + horizon {
        let (next, _) = step_forward(&p.decoder, &input, &state);
        state = next;
        if s < x.len() {
            x_hat.push(p.recon_head.apply(&state.h));
            input.clone_from(&x[s]);
        } else {
            let out = p.pred_head.apply(&state.h);
            input.clone_from(&out);
            y_hat.push(out);
        }
    }
    Ok(ModelOutput {
        x_hat,
        y_hat,
        latent: LatentState {
            mu: z.to_vec(),
            logvar: vec![LOGVAR_MIN; z.len()],
            z: z.to_vec(),
            eps: vec![0.0; z.len()],
        },
    })
}

/// Deterministic forecast (`z = mu`).
pub fn predict(p: &VaeRnnParams, x: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let (mu, _) = encode(p, x)?;
    Ok(decode(p, &mu, x, horizon)?.y_hat)
}

/// Loss components of a cached forward pass.
pub fn cache_losses(cache: &ForwardCache) -> Result<LossParts> {
    let out = &cache.output;
    Ok(LossParts {
        reco: loss_reconstruction(&cache.x, &out.x_hat, &cache.mask)?,
        pred: match &cache.y {
            Some(y) => loss_prediction(y, &out.y_hat)?,
            None => 0.0,
        },
        kl: loss_kl(&out.latent.mu, &out.latent.logvar)?,
    })
}

/// Exact gradient of `α L_reco + β L_pred + γ L_KL` for the cached window.
pub fn model_backward(p: &VaeRnnParams, cache: &ForwardCache, w: &LossWeights) -> Result<VaeRnnParams> {
    if cache.fingerprint != p.fingerprint() {
        return Err(Error::StaleCache(
            "parameters changed since the forward pass".into(),
        ));
    }
    let cfg = p.config;
    let (d, hs) = (cfg.input_dim, cfg.hidden);
    let t_len = cache.x.len();
    let horizon = cache.output.y_hat.len();
    let mut grad = p.zeros_like();

    let n_obs = cache.mask.iter().flatten().filter(|m| **m).count();
    if n_obs == 0 {
        return Err(Error::invalid("reconstruction loss needs at least one observed entry"));
    }
    let reco_scale = 2.0 * w.alpha / n_obs as f64;
    let pred_scale = 2.0 * w.beta / (horizon * d) as f64;

    // Pending dL/dŷ_j contributed by later steps that consumed ŷ_j as input.
    let mut feed_grad = vec![vec![0.0; d]; horizon];
    let mut dh = vec![0.0; hs];
    let mut dc = (cfg.cell == CellKind::Lstm).then(|| vec![0.0; hs]);
    for s in (0..t_len + horizon).rev() {
        let h = &cache.dec_h[s];
        if s < t_len {
            let dout: Vec<f64> = (0..d)
                .map(|c| {
                    if cache.mask[s][c] {
                        reco_scale * (cache.output.x_hat[s][c] - cache.x[s][c])
                    } else {
                        0.0
                    }
                })
                .collect();
            let dhh = p.recon_head.backward(h, &dout, &mut grad.recon_head);
            add_into(&mut dh, &dhh);
        } else {
            let j = s - t_len;
            let mut dout = std::mem::take(&mut feed_grad[j]);
            if let Some(y) = &cache.y {
                for c in 0..d {
                    dout[c] += pred_scale * (cache.output.y_hat[j][c] - y[j][c]);
                }
            }
            let dhh = p.pred_head.backward(h, &dout, &mut grad.pred_head);
            add_into(&mut dh, &dhh);
        }
        let g = step_backward(&p.decoder, &cache.dec_steps[s], &dh, dc.as_deref(), &mut grad.decoder);
        if let DecoderInput::OwnPrediction(j) = cache.dec_inputs[s] {
            add_into(&mut feed_grad[j], &g.dx);
        }
        dh = g.dh_prev;
        dc = g.dc_prev;
    }

    // Decoder initial state.
    let dpre: Vec<f64> = dh
        .iter()
        .zip(&cache.h0_act)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();
    let z = &cache.output.latent.z;
    let mut dz = p.latent_to_hidden.backward(z, &dpre, &mut grad.latent_to_hidden);
    if let (Some(a), Some(ga), Some(dc)) = (&p.latent_to_cell, grad.latent_to_cell.as_mut(), dc.as_ref()) {
        add_into(&mut dz, &a.backward(z, dc, ga));
    }

    // Latent: reparameterization plus KL.
    let lat = &cache.output.latent;
    let mut dmu = dz.clone();
    let mut dlv_raw = vec![0.0; cfg.latent];
    for i in 0..cfg.latent {
        let sigma = (0.5 * lat.logvar[i]).exp();
        let dlv = dz[i] * 0.5 * sigma * lat.eps[i] + w.gamma * 0.5 * (lat.logvar[i].exp() - 1.0);
        dmu[i] += w.gamma * lat.mu[i];
        let raw = cache.logvar_raw[i];
        if raw > LOGVAR_MIN && raw < LOGVAR_MAX {
            dlv_raw[i] = dlv;
        }
    }
    let mut denc = p.mu_head.backward(&cache.enc_h, &dmu, &mut grad.mu_head);
    add_into(
        &mut denc,
        &p.logvar_head.backward(&cache.enc_h, &dlv_raw, &mut grad.logvar_head),
    );

    let final_grad = HiddenState {
        h: denc,
        c: (cfg.cell == CellKind::Lstm).then(|| vec![0.0; hs]),
    };
    let enc_grads = sequence_backward(&p.encoder, &cache.enc, &vec![Vec::new(); t_len], Some(&final_grad))?;
    grad.encoder = enc_grads.params;
    Ok(grad)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Fill masked entries of one window with the model's reconstruction.
///
/// `x` is in normalized units; masked entries are ignored on input (replaced
/// by `0`, the training mean) and observed entries are returned untouched.
pub fn impute(p: &VaeRnnParams, x: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    p.check_window(x)?;
    Error::check_dim("impute mask rows", x.len(), mask.len())?;
    let mut observed = 0;
    for m in mask {
        Error::check_dim("impute mask width", p.config.input_dim, m.len())?;
        observed += m.iter().filter(|v| **v).count();
    }
    if observed == 0 {
        return Err(Error::invalid("cannot impute a fully masked window"));
    }
    if observed == x.len() * p.config.input_dim {
        return Ok(x.to_vec());
    }
    let filled = prefill(x, mask);
    let (mu, _) = encode(p, &filled)?;
    let out = decode(p, &mu, &filled, 1)?;
    Ok(filled
        .iter()
        .zip(mask)
        .zip(&out.x_hat)
        .map(|((row, m), rec)| {
            row.iter()
                .zip(m)
                .zip(rec)
                .map(|((v, &obs), r)| if obs { *v } else { *r })
                .collect()
        })
        .collect())
}

/// Replace masked entries by `0` (the normalized training mean).
pub fn prefill(x: &[Vec<f64>], mask: &[Vec<bool>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(mask)
        .map(|(row, m)| row.iter().zip(m).map(|(v, &o)| if o { *v } else { 0.0 }).collect())
        .collect()
}

/// Impute a whole series by tiling it with windows of `window` steps.
///
/// Tiles are contiguous; the last tile is aligned to the end of the series and
/// only fills entries no earlier tile reached. Tiles with no observed entry
/// are skipped and left at `0`.
pub fn impute_series(
    p: &VaeRnnParams,
    values: &[Vec<f64>],
    mask: &[Vec<bool>],
    window: usize,
) -> Result<Vec<Vec<f64>>> {
    Error::check_dim("impute_series mask rows", values.len(), mask.len())?;
    if window == 0 {
        return Err(Error::invalid("window must be at least one step"));
    }
    let n = values.len();
    let mut out = prefill(values, mask);
    let mut done = vec![false; n];
    let mut starts: Vec<usize> = (0..n).step_by(window).filter(|s| s + window <= n).collect();
    if n >= window && starts.last().is_none_or(|s| s + window < n) {
        starts.push(n - window);
    } else if n < window {
        starts = vec![0];
    }
    for start in starts {
        let end = (start + window).min(n);
        let xs = &values[start..end];
        let ms = &mask[start..end];
        if !ms.iter().flatten().any(|m| *m) {
            continue;
        }
        let filled = impute(p, xs, ms)?;
        for (off, row) in filled.into_iter().enumerate() {
            let t = start + off;
            if !done[t] {
                out[t] = row;
                done[t] = true;
            }
        }
    }
    Ok(out)
}
