#![allow(dead_code)]

pub mod oracle;

use glycovae::cells::{sequence_backward, sequence_forward, CellKind, CellParams, Direction, HiddenState};
use glycovae::numeric::{Parameters, SeededRng};
use glycovae::vae::{self, LatentMode, LossWeights, VaeConfig, VaeRnnParams};
use oracle::{central_difference_dd, Real, DD};

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rand_rows(rng: &mut SeededRng, t: usize, d: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .collect()
}

/// Σ_t ½|h_t − target_t|² over every reported state.
pub fn cell_loss(p: &CellParams, xs: &[Vec<f64>], targets: &[Vec<f64>], dir: Direction) -> f64 {
    let out = sequence_forward(p, xs, &HiddenState::zeros(p.kind, p.hidden_size), dir).unwrap();
    out.states
        .iter()
        .zip(targets)
        .map(|(h, t)| h.iter().zip(t).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>())
        .sum()
}

pub fn check_cell(kind: CellKind, seed: u64, d: usize, h: usize, t: usize, dir: Direction) -> f64 {
    let mut rng = SeededRng::new(seed);
    let p = CellParams::init(kind, d, h, &mut rng);
    let xs = rand_rows(&mut rng, t, d);
    let targets = rand_rows(&mut rng, t, h);
    let out = sequence_forward(&p, &xs, &HiddenState::zeros(kind, h), dir).unwrap();
    let upstream: Vec<Vec<f64>> = out
        .states
        .iter()
        .zip(&targets)
        .map(|(s, tg)| s.iter().zip(tg).map(|(a, b)| a - b).collect())
        .collect();
    let grads = sequence_backward(&p, &out.cache, &upstream, None).unwrap();

    let flat = p.to_flat();
    let xs_dd: Vec<Vec<DD>> = xs.iter().map(|r| r.iter().map(|v| DD::of(*v)).collect()).collect();
    let numeric = central_difference_dd(&flat, STEP, |theta| {
        let mut q = p.clone();
        q.set_flat(theta);
        oracle::cell_sequence_loss(&q, &xs_dd, &targets, dir)
    });
    let mut worst = max_relative_error(&grads.params.to_flat(), &numeric);

    // Input gradients.
    let flat_x: Vec<f64> = xs.iter().flatten().copied().collect();
    let numeric_x = central_difference_dd(&flat_x, STEP, |v| {
        let rows: Vec<Vec<DD>> = v.chunks(d).map(|r| r.iter().map(|x| DD::of(*x)).collect()).collect();
        oracle::cell_sequence_loss(&p, &rows, &targets, dir)
    });
    let analytic_x: Vec<f64> = grads.inputs.iter().flatten().copied().collect();
    worst = worst.max(max_relative_error(&analytic_x, &numeric_x));
    worst
}

pub struct VaeCase {
    pub params: VaeRnnParams,
    pub x: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub y: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    pub teacher: Vec<bool>,
    pub weights: LossWeights,
}

impl VaeCase {
    pub fn random(seed: u64, cell: CellKind, d: usize, h: usize, k: usize, t: usize, w: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let cfg = VaeConfig {
            cell,
            input_dim: d,
            hidden: h,
            latent: k,
        };
        let mut params = VaeRnnParams::init(cfg, &mut rng).unwrap();
        params.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v = rng.uniform_range(-1.0, 1.0);
            }
        });
        let x = rand_rows(&mut rng, t, d);
        let mut mask: Vec<Vec<bool>> = (0..t).map(|_| (0..d).map(|_| rng.bernoulli(0.8)).collect()).collect();
        mask[0][0] = true;
        let y = rand_rows(&mut rng, w, d);
        let eps = glycovae::numeric::sample_standard_normal(&mut rng, k);
        let teacher = (0..w).map(|j| j > 0 && rng.bernoulli(0.5)).collect();
        let weights = LossWeights::new(
            rng.uniform_range(0.5, 1.5),
            rng.uniform_range(0.5, 1.5),
            rng.uniform_range(0.5, 1.5),
        )
        .unwrap();
        Self {
            params,
            x,
            mask,
            y,
            eps,
            teacher,
            weights,
        }
    }

    pub fn loss(&self, p: &VaeRnnParams) -> f64 {
        let cache = vae::forward(
            p,
            &self.x,
            &self.mask,
            Some(&self.y),
            self.y.len(),
            LatentMode::Noise(&self.eps),
            &self.teacher,
        )
        .unwrap();
        vae::cache_losses(&cache).unwrap().total(&self.weights)
    }

    pub fn oracle_loss<R: Real>(&self, p: &VaeRnnParams) -> R {
        oracle::vae_loss(p, &self.x, &self.mask, &self.y, &self.eps, &self.teacher, &self.weights)
    }

    pub fn max_error(&self) -> f64 {
        let p = &self.params;
        let cache = vae::forward(
            p,
            &self.x,
            &self.mask,
            Some(&self.y),
            self.y.len(),
            LatentMode::Noise(&self.eps),
            &self.teacher,
        )
        .unwrap();
        let analytic = vae::model_backward(p, &cache, &self.weights).unwrap().to_flat();
        let numeric = central_difference_dd(&p.to_flat(), STEP, |theta| {
            let mut q = p.clone();
            q.set_flat(theta);
            self.oracle_loss::<DD>(&q)
        });
        max_relative_error(&analytic, &numeric)
    }
}
