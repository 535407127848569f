//! Imputation on the synthetic triple: train a VAE-RNN on the three series
//! with the gap in `ts3` masked, fill the gap, and score it against the
//! retained ground truth alongside a mean-fill baseline.

use serde::{Deserialize, Serialize};

use crate::benchmark::ModelConfig;
use crate::data::{make_windows, normalize, SynthTriple, WindowConfig};
use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::train::{train, TrainConfig, TrainTrace};
use crate::vae::{impute_series, VaeRnnParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationOutcome {
    /// `ts3` with the gap filled by the model, in original units.
    pub imputed: Vec<f64>,
    /// Mean squared error over the masked span.
    pub model_mse: f64,
    /// Same, filling the gap with the mean of the observed `ts3` values.
    pub mean_fill_mse: f64,
    pub trace: TrainTrace,
}

/// Masked-span MSE of `filled` against `truth`.
pub fn masked_mse(truth: &[f64], filled: &[f64], mask: &[bool]) -> Result<f64> {
    Error::check_dim("masked_mse", truth.len(), filled.len())?;
    let (sum, n) = truth
        .iter()
        .zip(filled)
        .zip(mask)
        .filter(|(_, m)| !**m)
        .fold((0.0, 0usize), |(s, n), ((t, f), _)| (s + (t - f) * (t - f), n + 1));
    if n == 0 {
        return Err(Error::invalid("mask hides no entries"));
    }
    Ok(sum / n as f64)
}

/// Mean of the observed entries, used for every hidden one.
pub fn mean_fill(values: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let observed: Vec<f64> = values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    if observed.is_empty() {
        return Err(Error::invalid("no observed entries to average"));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    Ok(values.iter().zip(mask).map(|(v, m)| if *m { *v } else { mean }).collect())
}

/// Train on the masked triple and impute the gap. The model sees only the
/// observed entries; the ground truth under the gap is used for scoring.
pub fn run_imputation(
    triple: &SynthTriple,
    window: &WindowConfig,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(VaeRnnParams, ImputationOutcome)> {
    let mut series = triple.combined("synth", 1.0, 0.0);
    series.channels = vec!["ts1".into(), "ts2".into(), "ts3".into()];
    let ds = normalize(&make_windows(std::slice::from_ref(&series), window)?)?;
    let stats = ds.stats.clone().expect("normalized dataset carries stats");
    let mut rng = SeededRng::new(cfg.seed);
    let params = VaeRnnParams::init(model.vae(model.cell, 3), &mut rng)?;
    let train_cfg = TrainConfig {
        seed: rng.next_u64(),
        ..*cfg
    };
    let (params, trace) = train(params, &ds, &train_cfg)?;

    let normed: Vec<Vec<f64>> = series
        .values
        .iter()
        .zip(&series.mask)
        .map(|(row, m)| {
            row.iter()
                .enumerate()
                .map(|(c, v)| if m[c] { stats.normalize(c, *v) } else { 0.0 })
                .collect()
        })
        .collect();
    let filled = impute_series(&params, &normed, &series.mask, window.input_len)?;
    let mask3 = triple.mask3();
    let imputed: Vec<f64> = filled
        .iter()
        .zip(&mask3)
        .zip(&triple.series[2])
        .map(|((row, &m), v)| if m { *v } else { stats.denormalize(2, row[2]) })
        .collect();

    let truth = &triple.series[2];
    let observed: Vec<f64> = truth.iter().zip(&mask3).map(|(v, m)| if *m { *v } else { f64::NAN }).collect();
    let model_mse = masked_mse(truth, &imputed, &mask3)?;
    let mean_fill_mse = masked_mse(truth, &mean_fill(&observed, &mask3)?, &mask3)?;
    Ok((
        params,
        ImputationOutcome {
            imputed,
            model_mse,
            mean_fill_mse,
            trace,
        },
    ))
}
