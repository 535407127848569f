use glycovae::baselines::{ar_window_forecast, forward_fill_forecast, linear_trend_forecast, ArConfig};
use glycovae::cells::CellKind;
use glycovae::data::WindowSample;
use glycovae::numeric::SeededRng;
use glycovae::train::{TrainConfig, Trainable};
use glycovae::vae::{self, cache_losses, impute, LatentMode, LossWeights, VaeConfig, VaeRnnParams};
use proptest::prelude::*;

fn model(cell: CellKind, d: usize, seed: u64) -> VaeRnnParams {
    let cfg = VaeConfig {
        cell,
        input_dim: d,
        hidden: 5,
        latent: 2,
    };
    VaeRnnParams::init(cfg, &mut SeededRng::new(seed)).unwrap()
}

fn rows(rng: &mut SeededRng, t: usize, d: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..d).map(|_| rng.uniform_range(-1.5, 1.5)).collect()).collect()
}

#[test]
fn mean_latent_makes_the_loss_seed_free() {
    let mut rng = SeededRng::new(11);
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let p = model(cell, 2, 3);
        let sample = WindowSample {
            x: rows(&mut rng, 6, 2),
            mask: vec![vec![true, true]; 6],
            y: rows(&mut rng, 3, 2),
            series_id: "s".into(),
            series_index: 0,
            start: 0,
        };
        let weights = LossWeights::new(1.0, 1.0, 0.0).unwrap();
        let losses: Vec<f64> = [0u64, 1, 12345]
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    seed,
                    weights,
                    ..TrainConfig::default()
                };
                p.window_loss(&sample, &cfg).unwrap().total(&weights)
            })
            .collect();
        assert!(losses.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
        let zero_noise = vae::forward(&p, &sample.x, &sample.mask, Some(&sample.y), 3, LatentMode::Noise(&[0.0, 0.0]), &[]).unwrap();
        assert_eq!(cache_losses(&zero_noise).unwrap().total(&weights), losses[0]);
    }
}

#[test]
fn imputation_is_idempotent_once_the_mask_is_cleared() {
    let mut rng = SeededRng::new(21);
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let p = model(cell, 3, 4);
        let x = rows(&mut rng, 8, 3);
        let mask: Vec<Vec<bool>> = (0..8).map(|t| (0..3).map(|c| (t + c) % 3 != 0).collect()).collect();
        let once = impute(&p, &x, &mask).unwrap();
        let twice = impute(&p, &once, &vec![vec![true; 3]; 8]).unwrap();
        assert_eq!(once, twice);
        for t in 0..8 {
            for c in 0..3 {
                if mask[t][c] {
                    assert_eq!(once[t][c], x[t][c]);
                }
                assert!(once[t][c].is_finite());
            }
        }
    }
}

fn window(values: &[f64], d: usize) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let x: Vec<Vec<f64>> = values.chunks(d).map(<[f64]>::to_vec).collect();
    let mask = vec![vec![true; d]; x.len()];
    (x, mask)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baselines_are_pure_and_shape_consistent(
        values in proptest::collection::vec(-3.0f64..3.0, 48),
        d in 1usize..4,
        horizon in 1usize..10,
    ) {
        let (x, mask) = window(&values[..(48 / d) * d], d);
        let ar = ArConfig { p: 2, d: 1 };
        let forecasts = [
            forward_fill_forecast(&x, &mask, horizon).unwrap(),
            linear_trend_forecast(&x, &mask, horizon).unwrap(),
        ];
        for f in &forecasts {
            prop_assert_eq!(f.len(), horizon);
            prop_assert!(f.iter().all(|r| r.len() == d));
        }
        prop_assert_eq!(&forecasts[0], &forward_fill_forecast(&x, &mask, horizon).unwrap());
        prop_assert_eq!(&forecasts[1], &linear_trend_forecast(&x, &mask, horizon).unwrap());
        if let Ok(a) = ar_window_forecast(&x, &ar, horizon) {
            prop_assert_eq!(a.len(), horizon);
            prop_assert!(a.iter().all(|r| r.len() == d));
            prop_assert_eq!(a, ar_window_forecast(&x, &ar, horizon).unwrap());
        }
    }

    #[test]
    fn ar1_on_a_constant_series_stays_constant(
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        horizon in 1usize..20,
    ) {
        let x = vec![vec![c]; 16];
        for row in ar_window_forecast(&x, &ArConfig { p: 1, d: 0 }, horizon).unwrap() {
            prop_assert!((row[0] - c).abs() <= 1e-12 * c.abs());
        }
    }
}
