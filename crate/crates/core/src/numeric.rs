//! Dense linear algebra, seeded randomness and activations shared by every model.
//!
//! Everything is `f64`. Random streams come from ChaCha8 (value-stable across
//! platforms) and normals are produced with the polar-free Box–Muller transform,
//! so a given seed yields the same numbers on every machine and every release
//! of this crate.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            Error::check_dim("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Entries drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("matvec", self.cols, v.len())?;
        let mut out = vec![0.0; self.rows];
        self.matvec_rows_into(0, self.rows, v, &mut out);
        Ok(out)
    }

    /// `out[i - start] += row(i) · v` for rows in `start..end`. Shapes are the
    /// caller's responsibility.
    #[inline]
    pub(crate) fn matvec_rows_into(&self, start: usize, end: usize, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (o, r) in out.iter_mut().zip(start..end) {
            *o += dot(self.row(r), v);
        }
    }

    /// `out += M[start..end, :]^T · g`.
    #[inline]
    pub(crate) fn matvec_t_rows_into(&self, start: usize, end: usize, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for (gi, r) in g.iter().zip(start..end) {
            if *gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += gi * w;
            }
        }
    }

    pub fn matvec_t(&self, g: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("matvec_t", self.rows, g.len())?;
        let mut out = vec![0.0; self.cols];
        self.matvec_t_rows_into(0, self.rows, g, &mut out);
        Ok(out)
    }

    /// `M[start.., :] += g ⊗ v`.
    #[inline]
    pub(crate) fn add_outer_rows(&mut self, start: usize, g: &[f64], v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            let row = &mut self.data[(start + i) * cols..(start + i + 1) * cols];
            for (w, x) in row.iter_mut().zip(v) {
                *w += gi * x;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: Matrix::uniform_init(output, input, input, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("Affine::forward", self.input_size(), x.len())?;
        Ok(self.apply(x))
    }

    #[inline]
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.weight.matvec_rows_into(0, self.weight.rows(), x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine) -> Vec<f64> {
        grad.weight.add_outer_rows(0, dy, x);
        for (b, g) in grad.bias.iter_mut().zip(dy) {
            *b += g;
        }
        let mut dx = vec![0.0; self.input_size()];
        self.weight.matvec_t_rows_into(0, self.weight.rows(), dy, &mut dx);
        dx
    }
}

/// Numerically guarded logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

pub fn activations(x: &[f64], kind: Activation) -> Vec<f64> {
    match kind {
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
    }
}

/// Deterministic random stream: ChaCha8 keyed by a 64-bit seed.
///
/// Normals use Box–Muller on two uniforms `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`; the
/// sine branch of each pair is kept for the next call.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child stream seeded from this one.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }
}

pub fn sample_standard_normal(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// Ordinary least squares `min ||X b - y||` by Householder QR.
///
/// `design` holds one row per observation. Fails with [`Error::Singular`] when
/// the design is rank deficient relative to its largest diagonal in R.
pub fn least_squares(design: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (design.rows(), design.cols());
    Error::check_dim("least_squares", m, y.len())?;
    if m < n || n == 0 {
        return Err(Error::Singular(format!(
            "{m} equations for {n} unknowns"
        )));
    }
    let mut a = design.clone();
    let mut b = y.to_vec();
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = (k..m).map(|i| a.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a.get(k, k) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a.get(i, k)).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let s: f64 = v.iter().zip(k..m).map(|(vi, i)| vi * a.get(i, j)).sum();
                let f = 2.0 * s / vnorm2;
                for (vi, i) in v.iter().zip(k..m) {
                    a.set(i, j, a.get(i, j) - f * vi);
                }
            }
            let s: f64 = v.iter().zip(k..m).map(|(vi, i)| vi * b[i]).sum();
            let f = 2.0 * s / vnorm2;
            for (vi, i) in v.iter().zip(k..m) {
                b[i] -= f * vi;
            }
        }
        diag[k] = a.get(k, k);
    }
    let scale = diag.iter().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    for (k, d) in diag.iter().enumerate() {
        if scale == 0.0 || d.abs() <= 1e-10 * scale {
            return Err(Error::Singular(format!(
                "design column {k} is (numerically) linearly dependent; |R[{k},{k}]| = {:.3e}, max = {:.3e}",
                d.abs(),
                scale
            )));
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| a.get(k, j) * x[j]).sum();
        x[k] = (b[k] - s) / a.get(k, k);
    }
    Ok(x)
}

/// Uniform access to every learnable array of a model, in a fixed order.
///
/// The optimizer and the finite-difference checks work on the flattened view.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |s| s.fill(value));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// `self += scale * other`; both must share a layout.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            let n = s.len();
            for (a, b) in s.iter_mut().zip(&flat[offset..offset + n]) {
                *a += scale * b;
            }
            offset += n;
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

impl Parameters for Affine {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weight.data());
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.data_mut());
        f(&mut self.bias);
    }
}
