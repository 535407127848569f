//! GRU and LSTM cells with exact backpropagation through time.
//!
//! Gate weights are stacked row-wise: `w` is `(G·h) × d`, `u` is `(G·h) × h`
//! and `b` has `G·h` entries, with `G = 3` (reset, update, candidate) for the
//! GRU and `G = 4` (input, forget, cell, output) for the LSTM.
//!
//! GRU:  `r = σ(W_r x + U_r h + b_r)`, `u = σ(W_u x + U_u h + b_u)`,
//!       `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − u) ⊙ n + u ⊙ h`.
//!
//! LSTM: `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f ⊙ c + i ⊙ g`,
//!       `h' = o ⊙ tanh(c')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix, Parameters, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_size: usize, hidden_size: usize) -> Self {
        let g = kind.gates() * hidden_size;
        Self {
            kind,
            input_size,
            hidden_size,
            w: Matrix::zeros(g, input_size),
            u: Matrix::zeros(g, hidden_size),
            b: vec![0.0; g],
        }
    }

    /// Scaled-uniform weights, zero biases except the LSTM forget gate (+1).
    pub fn init(kind: CellKind, input_size: usize, hidden_size: usize, rng: &mut SeededRng) -> Self {
        let g = kind.gates() * hidden_size;
        let mut b = vec![0.0; g];
        if kind == CellKind::Lstm {
            b[hidden_size..2 * hidden_size].fill(1.0);
        }
        Self {
            kind,
            input_size,
            hidden_size,
            w: Matrix::uniform_init(g, input_size, input_size, rng),
            u: Matrix::uniform_init(g, hidden_size, hidden_size, rng),
            b,
        }
    }

    /// `G (d h + h² + h)`.
    pub fn expected_param_count(kind: CellKind, d: usize, h: usize) -> usize {
        kind.gates() * (d * h + h * h + h)
    }

    fn check_shapes(&self) -> Result<()> {
        let g = self.kind.gates() * self.hidden_size;
        Error::check_dim("CellParams w rows", g, self.w.rows())?;
        Error::check_dim("CellParams w cols", self.input_size, self.w.cols())?;
        Error::check_dim("CellParams u rows", g, self.u.rows())?;
        Error::check_dim("CellParams u cols", self.hidden_size, self.u.cols())?;
        Error::check_dim("CellParams b", g, self.b.len())
    }
}

impl Parameters for CellParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.data());
        f(self.u.data());
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.data_mut());
        f(self.u.data_mut());
        f(&mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    /// Cell state; present only for LSTM.
    pub c: Option<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(kind: CellKind, hidden_size: usize) -> Self {
        Self {
            h: vec![0.0; hidden_size],
            c: (kind == CellKind::Lstm).then(|| vec![0.0; hidden_size]),
        }
    }

    fn check(&self, p: &CellParams) -> Result<()> {
        Error::check_dim("HiddenState h", p.hidden_size, self.h.len())?;
        match (p.kind, &self.c) {
            (CellKind::Lstm, Some(c)) => Error::check_dim("HiddenState c", p.hidden_size, c.len()),
            (CellKind::Lstm, None) => Err(Error::invalid("LSTM state requires a cell vector")),
            (CellKind::Gru, Some(_)) => Err(Error::invalid("GRU state carries no cell vector")),
            (CellKind::Gru, None) => Ok(()),
        }
    }
}

/// Activations of one step, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gate values, `G·h` entries in gate order.
    gates: Vec<f64>,
    /// GRU: `r ⊙ h_prev`. LSTM: `tanh(c')`.
    aux: Vec<f64>,
}

/// One recurrence step.
pub fn cell_step(p: &CellParams, x: &[f64], state: &HiddenState) -> Result<HiddenState> {
    p.check_shapes()?;
    Error::check_dim("cell_step input", p.input_size, x.len())?;
    state.check(p)?;
    Ok(step_forward(p, x, state).0)
}

pub(crate) fn step_forward(p: &CellParams, x: &[f64], state: &HiddenState) -> (HiddenState, StepCache) {
    let hs = p.hidden_size;
    match p.kind {
        CellKind::Gru => {
            let mut a = p.b.clone();
            p.w.matvec_rows_into(0, 3 * hs, x, &mut a);
            p.u.matvec_rows_into(0, 2 * hs, &state.h, &mut a[..2 * hs]);
            for v in &mut a[..2 * hs] {
                *v = sigmoid(*v);
            }
            let rh: Vec<f64> = a[..hs].iter().zip(&state.h).map(|(r, h)| r * h).collect();
            p.u.matvec_rows_into(2 * hs, 3 * hs, &rh, &mut a[2 * hs..]);
            for v in &mut a[2 * hs..] {
                *v = v.tanh();
            }
            let h_new: Vec<f64> = (0..hs)
                .map(|j| {
                    let z = a[hs + j];
                    (1.0 - z) * a[2 * hs + j] + z * state.h[j]
                })
                .collect();
            let cache = StepCache {
                x: x.to_vec(),
                h_prev: state.h.clone(),
                c_prev: Vec::new(),
                gates: a,
                aux: rh,
            };
            (HiddenState { h: h_new, c: None }, cache)
        }
        CellKind::Lstm => {
            let c_prev = state.c.as_ref().expect("LSTM state carries a cell vector");
            let mut a = p.b.clone();
            p.w.matvec_rows_into(0, 4 * hs, x, &mut a);
            p.u.matvec_rows_into(0, 4 * hs, &state.h, &mut a);
            for (gi, v) in a.iter_mut().enumerate() {
                *v = if gi / hs == 2 { v.tanh() } else { sigmoid(*v) };
            }
            let c_new: Vec<f64> = (0..hs)
                .map(|j| a[hs + j] * c_prev[j] + a[j] * a[2 * hs + j])
                .collect();
            let tc: Vec<f64> = c_new.iter().map(|c| c.tanh()).collect();
            let h_new: Vec<f64> = (0..hs).map(|j| a[3 * hs + j] * tc[j]).collect();
            let cache = StepCache {
                x: x.to_vec(),
                h_prev: state.h.clone(),
                c_prev: c_prev.clone(),
                gates: a,
                aux: tc,
            };
            (
                HiddenState {
                    h: h_new,
                    c: Some(c_new),
                },
                cache,
            )
        }
    }
}

/// Gradients flowing into the previous step.
pub(crate) struct StepGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Option<Vec<f64>>,
}

/// Backward through one step given `dL/dh'` and (LSTM) `dL/dc'`; parameter
/// gradients are accumulated into `grad`.
pub(crate) fn step_backward(
    p: &CellParams,
    cache: &StepCache,
    dh: &[f64],
    dc: Option<&[f64]>,
    grad: &mut CellParams,
) -> StepGrads {
    let hs = p.hidden_size;
    let a = &cache.gates;
    let mut dx = vec![0.0; p.input_size];
    match p.kind {
        CellKind::Gru => {
            let mut da = vec![0.0; 3 * hs];
            let mut dh_prev = vec![0.0; hs];
            for j in 0..hs {
                let (z, n) = (a[hs + j], a[2 * hs + j]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (cache.h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                da[2 * hs + j] = dn * (1.0 - n * n);
                da[hs + j] = dz * z * (1.0 - z);
            }
            let mut drh = vec![0.0; hs];
            p.u.matvec_t_rows_into(2 * hs, 3 * hs, &da[2 * hs..], &mut drh);
            for j in 0..hs {
                let r = a[j];
                dh_prev[j] += drh[j] * r;
                da[j] = drh[j] * cache.h_prev[j] * r * (1.0 - r);
            }
            p.u.matvec_t_rows_into(0, 2 * hs, &da[..2 * hs], &mut dh_prev);
            p.w.matvec_t_rows_into(0, 3 * hs, &da, &mut dx);
            grad.w.add_outer_rows(0, &da, &cache.x);
            grad.u.add_outer_rows(0, &da[..2 * hs], &cache.h_prev);
            grad.u.add_outer_rows(2 * hs, &da[2 * hs..], &cache.aux);
            for (g, d) in grad.b.iter_mut().zip(&da) {
                *g += d;
            }
            StepGrads {
                dx,
                dh_prev,
                dc_prev: None,
            }
        }
        CellKind::Lstm => {
            let mut da = vec![0.0; 4 * hs];
            let mut dc_prev = vec![0.0; hs];
            for j in 0..hs {
                let (i, f, g, o) = (a[j], a[hs + j], a[2 * hs + j], a[3 * hs + j]);
                let tc = cache.aux[j];
                let dcj = dc.map_or(0.0, |d| d[j]) + dh[j] * o * (1.0 - tc * tc);
                da[j] = dcj * g * i * (1.0 - i);
                da[hs + j] = dcj * cache.c_prev[j] * f * (1.0 - f);
                da[2 * hs + j] = dcj * i * (1.0 - g * g);
                da[3 * hs + j] = dh[j] * tc * o * (1.0 - o);
                dc_prev[j] = dcj * f;
            }
            let mut dh_prev = vec![0.0; hs];
            p.u.matvec_t_rows_into(0, 4 * hs, &da, &mut dh_prev);
            p.w.matvec_t_rows_into(0, 4 * hs, &da, &mut dx);
            grad.w.add_outer_rows(0, &da, &cache.x);
            grad.u.add_outer_rows(0, &da, &cache.h_prev);
            for (g, d) in grad.b.iter_mut().zip(&da) {
                *g += d;
            }
            StepGrads {
                dx,
                dh_prev,
                dc_prev: Some(dc_prev),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Consume the sequence last-to-first; outputs are still reported in
    /// input time order.
    Backward,
}

/// Forward activations of a whole unroll.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    kind: CellKind,
    input_size: usize,
    hidden_size: usize,
    direction: Direction,
    /// In processing order.
    steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    /// One hidden vector per input step, in input time order.
    pub states: Vec<Vec<f64>>,
    pub final_state: HiddenState,
    pub cache: SequenceCache,
}

fn processing_order(t: usize, direction: Direction) -> Box<dyn Iterator<Item = usize>> {
    match direction {
        Direction::Forward => Box::new(0..t),
        Direction::Backward => Box::new((0..t).rev()),
    }
}

pub fn sequence_forward(
    p: &CellParams,
    xs: &[Vec<f64>],
    init: &HiddenState,
    direction: Direction,
) -> Result<SequenceOutput> {
    if xs.is_empty() {
        return Err(Error::invalid("sequence_forward requires at least one step"));
    }
    p.check_shapes()?;
    init.check(p)?;
    for x in xs {
        Error::check_dim("sequence_forward input", p.input_size, x.len())?;
    }
    let mut states = vec![Vec::new(); xs.len()];
    let mut steps = Vec::with_capacity(xs.len());
    let mut state = init.clone();
    for t in processing_order(xs.len(), direction) {
        let (next, cache) = step_forward(p, &xs[t], &state);
        states[t] = next.h.clone();
        steps.push(cache);
        state = next;
    }
    Ok(SequenceOutput {
        states,
        final_state: state,
        cache: SequenceCache {
            kind: p.kind,
            input_size: p.input_size,
            hidden_size: p.hidden_size,
            direction,
            steps,
        },
    })
}

#[derive(Debug, Clone)]
pub struct SequenceGrads {
    pub params: CellParams,
    /// `dL/dx_t` in input time order.
    pub inputs: Vec<Vec<f64>>,
    /// Gradient with respect to the initial state.
    pub init: HiddenState,
}

/// Backpropagation through the full unroll.
///
/// `d_states[t]` is `dL/dh_t` for the state reported at input index `t` (an
/// empty slice means zero); `d_final` adds gradient on the final `h` and, for
/// LSTM, the final cell vector.
pub fn sequence_backward(
    p: &CellParams,
    cache: &SequenceCache,
    d_states: &[Vec<f64>],
    d_final: Option<&HiddenState>,
) -> Result<SequenceGrads> {
    if cache.kind != p.kind || cache.input_size != p.input_size || cache.hidden_size != p.hidden_size {
        return Err(Error::StaleCache(
            "sequence cache was produced by a differently shaped cell".into(),
        ));
    }
    let t_len = cache.steps.len();
    Error::check_dim("sequence_backward upstream steps", t_len, d_states.len())?;
    let hs = p.hidden_size;
    for d in d_states {
        if !d.is_empty() {
            Error::check_dim("sequence_backward upstream width", hs, d.len())?;
        }
    }
    let mut grad = CellParams::zeros(p.kind, p.input_size, hs);
    let mut inputs = vec![Vec::new(); t_len];
    let mut dh = vec![0.0; hs];
    let mut dc = (p.kind == CellKind::Lstm).then(|| vec![0.0; hs]);
    if let Some(df) = d_final {
        df.check(p)?;
        dh.clone_from(&df.h);
        if let (Some(dc), Some(src)) = (dc.as_mut(), df.c.as_ref()) {
            dc.clone_from(src);
        }
    }
    let order: Vec<usize> = processing_order(t_len, cache.direction).collect();
    for (k, &t) in order.iter().enumerate().rev() {
        if !d_states[t].is_empty() {
            for (a, b) in dh.iter_mut().zip(&d_states[t]) {
                *a += b;
            }
        }
        let g = step_backward(p, &cache.steps[k], &dh, dc.as_deref(), &mut grad);
        inputs[t] = g.dx;
        dh = g.dh_prev;
        dc = g.dc_prev;
    }
    Ok(SequenceGrads {
        params: grad,
        inputs,
        init: HiddenState { h: dh, c: dc },
    })
}

/// Two independent cells reading the sequence in opposite directions; the
/// per-step output is `[forward ; backward]`, width `2h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiCellParams {
    pub forward: CellParams,
    pub backward: CellParams,
}

impl BiCellParams {
    pub fn init(kind: CellKind, input_size: usize, hidden_size: usize, rng: &mut SeededRng) -> Self {
        Self {
            forward: CellParams::init(kind, input_size, hidden_size, rng),
            backward: CellParams::init(kind, input_size, hidden_size, rng),
        }
    }
}

impl Parameters for BiCellParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.forward.visit(f);
        self.backward.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BiSequenceOutput {
    pub states: Vec<Vec<f64>>,
    pub forward: SequenceOutput,
    pub backward: SequenceOutput,
}

pub fn bidirectional_forward(p: &BiCellParams, xs: &[Vec<f64>]) -> Result<BiSequenceOutput> {
    let fwd = sequence_forward(
        &p.forward,
        xs,
        &HiddenState::zeros(p.forward.kind, p.forward.hidden_size),
        Direction::Forward,
    )?;
    let bwd = sequence_forward(
        &p.backward,
        xs,
        &HiddenState::zeros(p.backward.kind, p.backward.hidden_size),
        Direction::Backward,
    )?;
    let states = fwd
        .states
        .iter()
        .zip(&bwd.states)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    Ok(BiSequenceOutput {
        states,
        forward: fwd,
        backward: bwd,
    })
}
