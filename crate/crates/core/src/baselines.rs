//! Comparison forecasters: persistence, linear trend, ARIMA(p, d, 0) and
//! plain recurrent networks.
//!
//! Every forecaster maps an input window (`T × d`, with mask) to a `w × d`
//! forecast. Windows are in normalized units, so a channel with no observed
//! value in the window falls back to `0`, its training mean.

use serde::{Deserialize, Serialize};

use crate::cells::{
    bidirectional_forward, sequence_backward, sequence_forward, step_backward, step_forward,
    BiCellParams, CellKind, CellParams, Direction, HiddenState, SequenceCache, StepCache,
};
use crate::error::{Error, Result};
use crate::numeric::{least_squares, Affine, Matrix, Parameters, SeededRng};

fn check_window(x: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<usize> {
    Error::check_dim("window mask rows", x.len(), mask.len())?;
    let d = x.first().map_or(0, Vec::len);
    for (r, m) in x.iter().zip(mask) {
        Error::check_dim("window width", d, r.len())?;
        Error::check_dim("mask width", d, m.len())?;
    }
    Ok(d)
}

fn observed(x: &[Vec<f64>], mask: &[Vec<bool>], c: usize) -> Vec<(f64, f64)> {
    x.iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, m))| m[c])
        .map(|(t, (r, _))| (t as f64, r[c]))
        .collect()
}

/// Repeat the last observed value of each channel.
pub fn forward_fill_forecast(x: &[Vec<f64>], mask: &[Vec<bool>], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let d = check_window(x, mask)?;
    if !mask.iter().flatten().any(|m| *m) {
        return Err(Error::invalid("forward fill needs at least one observed value"));
    }
    let last: Vec<f64> = (0..d)
        .map(|c| observed(x, mask, c).last().map_or(0.0, |p| p.1))
        .collect();
    Ok(vec![last; horizon])
}

/// Least-squares line over the observed steps of each channel, extrapolated.
///
/// Glucose (channel 0) needs two observed points; other channels with fewer
/// fall back to persistence.
pub fn linear_trend_forecast(x: &[Vec<f64>], mask: &[Vec<bool>], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let d = check_window(x, mask)?;
    let t_len = x.len() as f64;
    let mut out = vec![vec![0.0; d]; horizon];
    for c in 0..d {
        let pts = observed(x, mask, c);
        if pts.len() < 2 {
            if c == 0 {
                return Err(Error::invalid("linear trend needs at least two observed glucose values"));
            }
            let v = pts.last().map_or(0.0, |p| p.1);
            out.iter_mut().for_each(|r| r[c] = v);
            continue;
        }
        let n = pts.len() as f64;
        let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let vm = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - vm)).sum();
        let slope = sxy / sxx;
        for (j, row) in out.iter_mut().enumerate() {
            row[c] = vm + slope * (t_len + j as f64 - tm);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArConfig {
    pub p: usize,
    pub d: usize,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self { p: 6, d: 1 }
    }
}

impl ArConfig {
    pub fn validate(&self, history_len: usize) -> Result<()> {
        if self.p < 1 {
            return Err(Error::invalid("AR order p must be at least 1"));
        }
        if self.d > 2 {
            return Err(Error::invalid("differencing order d must be 0, 1 or 2"));
        }
        if history_len <= self.p + self.d + 1 {
            return Err(Error::invalid(format!(
                "history of {history_len} steps is too short for AR({}) with d={}",
                self.p, self.d
            )));
        }
        Ok(())
    }
}

/// Fitted AR coefficients on the differenced series, lag 1 first.
pub fn ar_fit(history: &[f64], cfg: &ArConfig) -> Result<Vec<f64>> {
    cfg.validate(history.len())?;
    let z = difference(history, cfg.d);
    let rows = z.len() - cfg.p;
    let mut design = Matrix::zeros(rows, cfg.p);
    let mut target = Vec::with_capacity(rows);
    for (r, t) in (cfg.p..z.len()).enumerate() {
        for lag in 0..cfg.p {
            design.set(r, lag, z[t - 1 - lag]);
        }
        target.push(z[t]);
    }
    least_squares(&design, &target).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "AR({}) design on {} differenced points (d={}): {msg}",
            cfg.p,
            z.len(),
            cfg.d
        )),
        other => other,
    })
}

fn difference(x: &[f64], order: usize) -> Vec<f64> {
    let mut z = x.to_vec();
    for _ in 0..order {
        z = z.windows(2).map(|w| w[1] - w[0]).collect();
    }
    z
}

/// ARIMA(p, d, 0): difference `d` times, fit AR(p) by least squares (no
/// intercept), forecast recursively and undo the differencing.
pub fn ar_fit_forecast(history: &[f64], cfg: &ArConfig, horizon: usize) -> Result<Vec<f64>> {
    let coef = ar_fit(history, cfg)?;
    // levels[k] is the series differenced k times.
    let levels: Vec<Vec<f64>> = (0..=cfg.d).map(|k| difference(history, k)).collect();
    let mut z = levels[cfg.d].clone();
    let mut lasts: Vec<f64> = levels.iter().map(|l| *l.last().expect("validated length")).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next: f64 = coef.iter().enumerate().map(|(lag, a)| a * z[z.len() - 1 - lag]).sum();
        z.push(next);
        lasts[cfg.d] = next;
        for k in (0..cfg.d).rev() {
            lasts[k] += lasts[k + 1];
        }
        out.push(lasts[0]);
    }
    Ok(out)
}

/// Per-channel ARIMA over one (mask-filled) window.
pub fn ar_window_forecast(x: &[Vec<f64>], cfg: &ArConfig, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let d = x.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; d]; horizon];
    for c in 0..d {
        let hist: Vec<f64> = x.iter().map(|r| r[c]).collect();
        for (row, v) in out.iter_mut().zip(ar_fit_forecast(&hist, cfg, horizon)?) {
            row[c] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ForecastEncoder {
    Uni(CellParams),
    /// Reads the window both ways; the horizon is rolled out by the forward
    /// cell only, with the backward summary held fixed.
    Bi(BiCellParams),
}

/// Recurrent forecaster: read the window, then roll the horizon out
/// autoregressively through an affine head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnForecasterParams {
    pub encoder: ForecastEncoder,
    pub head: Affine,
}

impl RnnForecasterParams {
    pub fn init(kind: CellKind, bidirectional: bool, input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        if bidirectional {
            let cells = BiCellParams::init(kind, input, hidden, rng);
            Self {
                encoder: ForecastEncoder::Bi(cells),
                head: Affine::init(2 * hidden, input, rng),
            }
        } else {
            Self {
                encoder: ForecastEncoder::Uni(CellParams::init(kind, input, hidden, rng)),
                head: Affine::init(hidden, input, rng),
            }
        }
    }

    pub fn forward_cell(&self) -> &CellParams {
        match &self.encoder {
            ForecastEncoder::Uni(c) => c,
            ForecastEncoder::Bi(b) => &b.forward,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.forward_cell().kind
    }

    pub fn is_bidirectional(&self) -> bool {
        matches!(self.encoder, ForecastEncoder::Bi(_))
    }

    pub fn input_dim(&self) -> usize {
        self.forward_cell().input_size
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell().hidden_size
    }

    pub fn label(&self) -> String {
        format!("{}{}", if self.is_bidirectional() { "Bi" } else { "" }, self.kind().name())
    }
}

impl Parameters for RnnForecasterParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        match &self.encoder {
            ForecastEncoder::Uni(c) => c.visit(f),
            ForecastEncoder::Bi(b) => b.visit(f),
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match &mut self.encoder {
            ForecastEncoder::Uni(c) => c.visit_mut(f),
            ForecastEncoder::Bi(b) => b.visit_mut(f),
        }
        self.head.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct RnnForecastCache {
    fwd: SequenceCache,
    bwd: Option<SequenceCache>,
    bwd_summary: Vec<f64>,
    /// Rollout steps `1..w`.
    roll: Vec<StepCache>,
    /// Forward-cell hidden state feeding the head at each horizon step.
    head_h: Vec<Vec<f64>>,
    own_feed: Vec<bool>,
    y: Option<Vec<Vec<f64>>>,
    pub y_hat: Vec<Vec<f64>>,
}

fn head_input(h: &[f64], summary: &[f64]) -> Vec<f64> {
    h.iter().chain(summary).copied().collect()
}

/// Forward pass with activations retained. `teacher[j]` (j ≥ 1) feeds `y_{j-1}`.
pub fn rnn_forward(
    p: &RnnForecasterParams,
    x: &[Vec<f64>],
    y: Option<&[Vec<f64>]>,
    horizon: usize,
    teacher: &[bool],
) -> Result<RnnForecastCache> {
    if horizon < 1 {
        return Err(Error::invalid("prediction horizon must be at least 1"));
    }
    if teacher.iter().any(|t| *t) && y.is_none() {
        return Err(Error::invalid("teacher forcing requires targets"));
    }
    if let Some(y) = y {
        Error::check_dim("target horizon", horizon, y.len())?;
    }
    let (fwd_out, bwd) = match &p.encoder {
        ForecastEncoder::Uni(c) => (
            sequence_forward(c, x, &HiddenState::zeros(c.kind, c.hidden_size), Direction::Forward)?,
            None,
        ),
        ForecastEncoder::Bi(b) => {
            let out = bidirectional_forward(b, x)?;
            (out.forward, Some(out.backward))
        }
    };
    let bwd_summary = bwd.as_ref().map_or_else(Vec::new, |b| b.final_state.h.clone());
    let cell = p.forward_cell();
    let mut state = fwd_out.final_state.clone();
    let mut y_hat: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut head_h = Vec::with_capacity(horizon);
    let mut roll = Vec::with_capacity(horizon.saturating_sub(1));
    let mut own_feed = Vec::with_capacity(horizon.saturating_sub(1));
    for j in 0..horizon {
        if j > 0 {
            let tf = teacher.get(j).copied().unwrap_or(false);
            let input = if tf { &y.expect("checked")[j - 1] } else { &y_hat[j - 1] };
            let (next, cache) = step_forward(cell, input, &state);
            roll.push(cache);
            own_feed.push(!tf);
            state = next;
        }
        y_hat.push(p.head.apply(&head_input(&state.h, &bwd_summary)));
        head_h.push(state.h.clone());
    }
    Ok(RnnForecastCache {
        fwd: fwd_out.cache,
        bwd: bwd.map(|b| b.cache),
        bwd_summary,
        roll,
        head_h,
        own_feed,
        y: y.map(<[_]>::to_vec),
        y_hat,
    })
}

/// Autoregressive forecast without teacher forcing.
pub fn rnn_forecast(p: &RnnForecasterParams, x: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>> {
    Ok(rnn_forward(p, x, None, horizon, &[])?.y_hat)
}

/// Mean squared prediction error of a cached pass.
pub fn rnn_loss(cache: &RnnForecastCache) -> Result<f64> {
    let y = cache.y.as_ref().ok_or_else(|| Error::invalid("no targets in cache"))?;
    crate::vae::loss_prediction(y, &cache.y_hat)
}

/// Exact gradient of the prediction MSE, scaled by `scale`.
pub fn rnn_backward(p: &RnnForecasterParams, cache: &RnnForecastCache, scale: f64) -> Result<RnnForecasterParams> {
    let y = cache.y.as_ref().ok_or_else(|| Error::invalid("no targets in cache"))?;
    let horizon = cache.y_hat.len();
    let d = p.input_dim();
    let hs = p.hidden();
    if cache.head_h.len() != horizon || cache.head_h.first().map_or(0, Vec::len) != hs {
        return Err(Error::StaleCache("forecast cache does not match parameters".into()));
    }
    let mut grad = p.zeros_like();
    let coef = 2.0 * scale / (horizon * d) as f64;
    let mut feed = vec![vec![0.0; d]; horizon];
    let mut dh = vec![0.0; hs];
    let mut dc = (p.kind() == CellKind::Lstm).then(|| vec![0.0; hs]);
    let mut d_summary = vec![0.0; cache.bwd_summary.len()];
    let cell = p.forward_cell().clone();
    let mut cell_grad = CellParams::zeros(cell.kind, cell.input_size, cell.hidden_size);
    for j in (0..horizon).rev() {
        let mut dout = std::mem::take(&mut feed[j]);
        for c in 0..d {
            dout[c] += coef * (cache.y_hat[j][c] - y[j][c]);
        }
        let hin = head_input(&cache.head_h[j], &cache.bwd_summary);
        let dhin = p.head.backward(&hin, &dout, &mut grad.head);
        for (a, b) in dh.iter_mut().zip(&dhin[..hs]) {
            *a += b;
        }
        for (a, b) in d_summary.iter_mut().zip(&dhin[hs..]) {
            *a += b;
        }
        if j > 0 {
            let g = step_backward(&cell, &cache.roll[j - 1], &dh, dc.as_deref(), &mut cell_grad);
            if cache.own_feed[j - 1] {
                for (a, b) in feed[j - 1].iter_mut().zip(&g.dx) {
                    *a += b;
                }
            }
            dh = g.dh_prev;
            dc = g.dc_prev;
        }
    }
    let t_len = cache.fwd.len();
    let final_grad = HiddenState { h: dh, c: dc };
    let fwd_g = sequence_backward(&cell, &cache.fwd, &vec![Vec::new(); t_len], Some(&final_grad))?;
    cell_grad.add_scaled(&fwd_g.params, 1.0);
    match (&mut grad.encoder, &p.encoder, &cache.bwd) {
        (ForecastEncoder::Uni(g), ForecastEncoder::Uni(_), None) => *g = cell_grad,
        (ForecastEncoder::Bi(g), ForecastEncoder::Bi(b), Some(bc)) => {
            g.forward = cell_grad;
            let summary = HiddenState {
                h: d_summary,
                c: (b.backward.kind == CellKind::Lstm).then(|| vec![0.0; hs]),
            };
            g.backward = sequence_backward(&b.backward, bc, &vec![Vec::new(); t_len], Some(&summary))?.params;
        }
        _ => return Err(Error::StaleCache("encoder layout differs from cache".into())),
    }
    Ok(grad)
}
