//! Forward passes for the gradient checks, written independently of the
//! library and generic over the scalar type. [`DD`] is a double-double
//! number with about 32 significant digits.

use std::ops::{Add, Div, Mul, Neg, Sub};

use glycovae::cells::{CellKind, CellParams, Direction};
use glycovae::numeric::{Affine, Matrix};
use glycovae::vae::{LossWeights, VaeRnnParams, LOGVAR_MAX, LOGVAR_MIN};

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn approx(self) -> f64;
    fn exp(self) -> Self;

    fn tanh(self) -> Self {
        let a = self.approx();
        if a > 40.0 {
            return Self::of(1.0);
        }
        if a < -40.0 {
            return Self::of(-1.0);
        }
        let e = (self + self).exp();
        (e - Self::of(1.0)) / (e + Self::of(1.0))
    }

    fn sigmoid(self) -> Self {
        if self.approx() >= 0.0 {
            Self::of(1.0) / (Self::of(1.0) + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::of(1.0) + e)
        }
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn approx(self) -> f64 {
        self
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> DD {
    let s = a + b;
    DD { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    fn scale(self, f: f64) -> DD {
        DD {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, b: DD) -> DD {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, b: DD) -> DD {
        self + (-b)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, b: DD) -> DD {
        let (p, e) = two_prod(self.hi, b.hi);
        quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, b: DD) -> DD {
        let q1 = self.hi / b.hi;
        let r = self - b * DD::of(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DD::of(q2);
        let q3 = r.hi / b.hi;
        quick_two_sum(q1, q2) + DD::of(q3)
    }
}

const LN2: DD = DD {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Real for DD {
    fn of(v: f64) -> Self {
        DD { hi: v, lo: 0.0 }
    }

    fn approx(self) -> f64 {
        self.hi
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DD::of(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DD::of(0.0);
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * DD::of(k)).scale(1.0 / 1024.0);
        let mut sum = DD::of(1.0);
        let mut term = DD::of(1.0);
        for n in 1..=20 {
            term = term * r / DD::of(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        let k = k as i32;
        let half = k / 2;
        sum.scale(2f64.powi(half)).scale(2f64.powi(k - half))
    }
}

fn affine<R: Real>(a: &Affine, x: &[R]) -> Vec<R> {
    let w: &Matrix = &a.weight;
    (0..w.rows())
        .map(|i| {
            let mut s = R::of(a.bias[i]);
            for (j, xj) in x.iter().enumerate() {
                s = s + R::of(w.get(i, j)) * *xj;
            }
            s
        })
        .collect()
}

fn rows<R: Real>(m: &Matrix, start: usize, end: usize, v: &[R]) -> Vec<R> {
    (start..end)
        .map(|i| {
            let mut s = R::of(0.0);
            for (j, vj) in v.iter().enumerate() {
                s = s + R::of(m.get(i, j)) * *vj;
            }
            s
        })
        .collect()
}

/// One recurrent step; returns `(h', c')`.
pub fn cell_step<R: Real>(p: &CellParams, x: &[R], h: &[R], c: &[R]) -> (Vec<R>, Vec<R>) {
    let n = p.hidden_size;
    let wx = rows(&p.w, 0, p.w.rows(), x);
    let b = |i: usize| R::of(p.b[i]);
    match p.kind {
        CellKind::Gru => {
            let uh = rows(&p.u, 0, 2 * n, h);
            let r: Vec<R> = (0..n).map(|j| (wx[j] + uh[j] + b(j)).sigmoid()).collect();
            let u: Vec<R> = (0..n).map(|j| (wx[n + j] + uh[n + j] + b(n + j)).sigmoid()).collect();
            let rh: Vec<R> = (0..n).map(|j| r[j] * h[j]).collect();
            let urh = rows(&p.u, 2 * n, 3 * n, &rh);
            let cand: Vec<R> = (0..n).map(|j| (wx[2 * n + j] + urh[j] + b(2 * n + j)).tanh()).collect();
            let h_new = (0..n).map(|j| (R::of(1.0) - u[j]) * cand[j] + u[j] * h[j]).collect();
            (h_new, Vec::new())
        }
        CellKind::Lstm => {
            let uh = rows(&p.u, 0, 4 * n, h);
            let pre = |g: usize, j: usize| wx[g * n + j] + uh[g * n + j] + b(g * n + j);
            let c_new: Vec<R> = (0..n)
                .map(|j| pre(1, j).sigmoid() * c[j] + pre(0, j).sigmoid() * pre(2, j).tanh())
                .collect();
            let h_new = (0..n).map(|j| pre(3, j).sigmoid() * c_new[j].tanh()).collect();
            (h_new, c_new)
        }
    }
}

fn lift<R: Real>(v: &[f64]) -> Vec<R> {
    v.iter().map(|x| R::of(*x)).collect()
}

/// `Σ_t ½|h_t − target_t|²` over every state of a sequence run from zeros.
pub fn cell_sequence_loss<R: Real>(p: &CellParams, xs: &[Vec<R>], targets: &[Vec<f64>], dir: Direction) -> R {
    let n = p.hidden_size;
    let mut h = vec![R::of(0.0); n];
    let mut c = vec![R::of(0.0); n];
    let order: Vec<usize> = match dir {
        Direction::Forward => (0..xs.len()).collect(),
        Direction::Backward => (0..xs.len()).rev().collect(),
    };
    let mut loss = R::of(0.0);
    for t in order {
        let (hn, cn) = cell_step(p, &xs[t], &h, &c);
        h = hn;
        c = cn;
        for (a, b) in h.iter().zip(&targets[t]) {
            let e = *a - R::of(*b);
            loss = loss + R::of(0.5) * e * e;
        }
    }
    loss
}

/// The weighted VAE-RNN objective for one window with fixed noise and
/// teacher-forcing flags.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss<R: Real>(
    p: &VaeRnnParams,
    x: &[Vec<f64>],
    mask: &[Vec<bool>],
    y: &[Vec<f64>],
    eps: &[f64],
    teacher: &[bool],
    w: &LossWeights,
) -> R {
    let hidden = p.config.hidden;
    let d = p.config.input_dim;
    let xs: Vec<Vec<R>> = x.iter().map(|r| lift(r)).collect();
    let ys: Vec<Vec<R>> = y.iter().map(|r| lift(r)).collect();

    let mut h = vec![R::of(0.0); hidden];
    let mut c = vec![R::of(0.0); hidden];
    for xt in &xs {
        let (hn, cn) = cell_step(&p.encoder, xt, &h, &c);
        h = hn;
        c = cn;
    }
    let mu = affine(&p.mu_head, &h);
    let logvar: Vec<R> = affine(&p.logvar_head, &h)
        .into_iter()
        .map(|v| {
            if v.approx() < LOGVAR_MIN {
                R::of(LOGVAR_MIN)
            } else if v.approx() > LOGVAR_MAX {
                R::of(LOGVAR_MAX)
            } else {
                v
            }
        })
        .collect();
    let z: Vec<R> = (0..mu.len())
        .map(|i| mu[i] + (R::of(0.5) * logvar[i]).exp() * R::of(eps[i]))
        .collect();

    let mut h: Vec<R> = affine(&p.latent_to_hidden, &z).into_iter().map(Real::tanh).collect();
    let mut c: Vec<R> = match &p.latent_to_cell {
        Some(a) => affine(a, &z),
        None => Vec::new(),
    };
    let t_len = xs.len();
    let horizon = ys.len();
    let mut x_hat = Vec::new();
    let mut y_hat: Vec<Vec<R>> = Vec::new();
    for s in 0..t_len + horizon {
        let input: Vec<R> = if s == 0 {
            vec![R::of(0.0); d]
        } else if s <= t_len {
            xs[s - 1].clone()
        } else {
            let j = s - t_len;
            if teacher.get(j).copied().unwrap_or(false) {
                ys[j - 1].clone()
            } else {
                y_hat[j - 1].clone()
            }
        };
        let (hn, cn) = cell_step(&p.decoder, &input, &h, &c);
        h = hn;
        c = cn;
        if s < t_len {
            x_hat.push(affine(&p.recon_head, &h));
        } else {
            y_hat.push(affine(&p.pred_head, &h));
        }
    }

    let mut reco = R::of(0.0);
    let mut observed = 0usize;
    for t in 0..t_len {
        for i in 0..d {
            if mask[t][i] {
                let e = xs[t][i] - x_hat[t][i];
                reco = reco + e * e;
                observed += 1;
            }
        }
    }
    let reco = reco / R::of(observed as f64);
    let mut pred = R::of(0.0);
    for j in 0..horizon {
        for i in 0..d {
            let e = ys[j][i] - y_hat[j][i];
            pred = pred + e * e;
        }
    }
    let pred = pred / R::of((horizon * d) as f64);
    let mut kl = R::of(0.0);
    for i in 0..mu.len() {
        kl = kl + R::of(1.0) + logvar[i] - mu[i] * mu[i] - logvar[i].exp();
    }
    let kl = R::of(-0.5) * kl;
    R::of(w.alpha) * reco + R::of(w.beta) * pred + R::of(w.gamma) * kl
}

/// Central differences with the loss evaluated in double-double precision.
/// The divisor is the exact distance between the two perturbed points.
pub fn central_difference_dd(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> DD) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            let (up, down) = (orig + step, orig - step);
            probe[i] = up;
            let plus = f(&probe);
            probe[i] = down;
            let minus = f(&probe);
            probe[i] = orig;
            let diff = plus - minus;
            let width = DD::of(up) - DD::of(down);
            (diff / width).hi
        })
        .collect()
}
