//! Benchmark orchestration: fit every configured model once at the longest
//! horizon, forecast the test windows, and score each horizon prefix in mg/dL.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ar_window_forecast, forward_fill_forecast, linear_trend_forecast, rnn_forecast, ArConfig,
    RnnForecasterParams,
};
use crate::cells::CellKind;
use crate::data::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, clarke_summary, mape, nmape, rmse, ClarkeSummary, ForecastResult};
use crate::numeric::SeededRng;
use crate::train::{forecaster_config, train, TrainConfig, TrainTrace};
use crate::vae::{predict, VaeConfig, VaeRnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    ForwardFill,
    LinearTrend,
    #[serde(rename = "ARIMA")]
    Arima,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "VAE-LSTM")]
    VaeLstm,
    #[serde(rename = "VAE-GRU")]
    VaeGru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::ForwardFill,
        ModelKind::LinearTrend,
        ModelKind::Arima,
        ModelKind::Lstm,
        ModelKind::Gru,
        ModelKind::BiLstm,
        ModelKind::BiGru,
        ModelKind::VaeLstm,
        ModelKind::VaeGru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ForwardFill => "ForwardFill",
            ModelKind::LinearTrend => "LinearTrend",
            ModelKind::Arima => "ARIMA",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::BiGru => "BiGRU",
            ModelKind::VaeLstm => "VAE-LSTM",
            ModelKind::VaeGru => "VAE-GRU",
        }
    }

    /// Lower-case file-name form, e.g. `vae-gru`.
    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase()
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, ModelKind::ForwardFill | ModelKind::LinearTrend | ModelKind::Arima)
    }

    fn cell(self) -> CellKind {
        match self {
            ModelKind::Lstm | ModelKind::BiLstm | ModelKind::VaeLstm => CellKind::Lstm,
            _ => CellKind::Gru,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.slug() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// Network sizes shared by the learned models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Cell used by the single-model `train` command.
    pub cell: CellKind,
    pub hidden: usize,
    pub latent: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden: 64,
            latent: 8,
        }
    }
}

impl ModelConfig {
    pub fn vae(&self, cell: CellKind, input_dim: usize) -> VaeConfig {
        VaeConfig {
            cell,
            input_dim,
            hidden: self.hidden,
            latent: self.latent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelKind>,
    /// Forecast horizons in steps.
    pub horizons: Vec<usize>,
    pub ar: ArConfig,
    /// Horizon whose pairs feed the Clarke scatter plots; falls back to the
    /// longest configured horizon when absent from `horizons`.
    pub clarke_horizon: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            horizons: vec![6, 12, 24, 36, 48],
            ar: ArConfig::default(),
            clarke_horizon: 12,
        }
    }
}

impl BenchmarkConfig {
    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("benchmark needs at least one model".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("benchmark horizons must be a nonempty list of positive step counts".into()));
        }
        Ok(())
    }

    pub fn scatter_horizon(&self) -> usize {
        if self.horizons.contains(&self.clarke_horizon) {
            self.clarke_horizon
        } else {
            self.max_horizon()
        }
    }
}

/// A fitted (or fit-free) forecaster.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    ForwardFill,
    LinearTrend,
    Arima(ArConfig),
    Rnn(RnnForecasterParams),
    Vae(VaeRnnParams),
}

impl TrainedModel {
    /// Forecast one normalized window; the flag reports an ARIMA fallback to
    /// forward fill on a singular fit.
    pub fn forecast(&self, x: &[Vec<f64>], mask: &[Vec<bool>], horizon: usize) -> Result<(Vec<Vec<f64>>, bool)> {
        match self {
            TrainedModel::ForwardFill => Ok((forward_fill_forecast(x, mask, horizon)?, false)),
            TrainedModel::LinearTrend => Ok((linear_trend_forecast(x, mask, horizon)?, false)),
            TrainedModel::Arima(cfg) => match ar_window_forecast(x, cfg, horizon) {
                Ok(f) => Ok((f, false)),
                Err(Error::Singular(_)) => Ok((forward_fill_forecast(x, mask, horizon)?, true)),
                Err(e) => Err(e),
            },
            TrainedModel::Rnn(p) => Ok((rnn_forecast(p, x, horizon)?, false)),
            TrainedModel::Vae(p) => Ok((predict(p, x, horizon)?, false)),
        }
    }
}

/// Initialise and train one model. `seed` drives both initialisation and the
/// training stream.
pub fn fit_model(
    kind: ModelKind,
    ds: &WindowedDataset,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    ar: &ArConfig,
    seed: u64,
) -> Result<(TrainedModel, Option<TrainTrace>)> {
    let mut rng = SeededRng::new(seed);
    let d = ds.dim();
    match kind {
        ModelKind::ForwardFill => Ok((TrainedModel::ForwardFill, None)),
        ModelKind::LinearTrend => Ok((TrainedModel::LinearTrend, None)),
        ModelKind::Arima => {
            ar.validate(ds.config.input_len)?;
            Ok((TrainedModel::Arima(*ar), None))
        }
        ModelKind::Lstm | ModelKind::Gru | ModelKind::BiLstm | ModelKind::BiGru => {
            let bi = matches!(kind, ModelKind::BiLstm | ModelKind::BiGru);
            let params = RnnForecasterParams::init(kind.cell(), bi, d, model.hidden, &mut rng);
            let cfg = TrainConfig {
                seed: rng.next_u64(),
                ..forecaster_config(train_cfg)
            };
            let (params, trace) = train(params, ds, &cfg)?;
            Ok((TrainedModel::Rnn(params), Some(trace)))
        }
        ModelKind::VaeLstm | ModelKind::VaeGru => {
            let params = VaeRnnParams::init(model.vae(kind.cell(), d), &mut rng)?;
            let cfg = TrainConfig {
                seed: rng.next_u64(),
                ..*train_cfg
            };
            let (params, trace) = train(params, ds, &cfg)?;
            Ok((TrainedModel::Vae(params), Some(trace)))
        }
    }
}

/// Normalized forecasts for every test window, plus the ARIMA fallback count.
pub fn forecast_test(model: &TrainedModel, ds: &WindowedDataset, horizon: usize) -> Result<(Vec<Vec<Vec<f64>>>, usize)> {
    let out: Vec<(Vec<Vec<f64>>, bool)> = ds
        .test
        .par_iter()
        .map(|s| model.forecast(&s.x, &s.mask, horizon))
        .collect::<Result<_>>()?;
    let fallbacks = out.iter().filter(|(_, f)| *f).count();
    Ok((out.into_iter().map(|(f, _)| f).collect(), fallbacks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub series_id: String,
    pub rmse: f64,
    pub mape: f64,
    pub nmape: f64,
    pub clarke: ClarkeSummary,
}

/// Scores for one model at one horizon, aggregated over series as mean and
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonEval {
    pub horizon: usize,
    pub per_series: Vec<SeriesMetrics>,
    pub rmse: (f64, f64),
    pub mape: (f64, f64),
    pub nmape: (f64, f64),
    pub clarke_mean: [f64; 5],
    pub clarke_std: [f64; 5],
}

fn stats(ds: &WindowedDataset) -> Result<&NormStats> {
    ds.stats
        .as_ref()
        .ok_or_else(|| Error::invalid("benchmark expects a normalized dataset"))
}

/// Glucose reference/prediction pairs in mg/dL for the first `horizon` steps
/// of each test window, grouped per series in dataset order.
pub fn forecast_results(
    model_id: &str,
    ds: &WindowedDataset,
    forecasts: &[Vec<Vec<f64>>],
    horizon: usize,
) -> Result<Vec<ForecastResult>> {
    let st = stats(ds)?;
    Error::check_dim("forecasts per test window", ds.test.len(), forecasts.len())?;
    let mut groups: Vec<(usize, String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (s, f) in ds.test.iter().zip(forecasts) {
        if f.len() < horizon || s.y.len() < horizon {
            return Err(Error::invalid(format!(
                "horizon {horizon} exceeds the forecast length {}",
                f.len().min(s.y.len())
            )));
        }
        if groups.last().is_none_or(|g| g.0 != s.series_index) {
            groups.push((s.series_index, s.series_id.clone(), Vec::new(), Vec::new()));
        }
        let g = groups.last_mut().expect("group pushed above");
        for j in 0..horizon {
            g.2.push(st.denormalize(0, s.y[j][0]));
            g.3.push(st.denormalize(0, f[j][0]));
        }
    }
    groups
        .into_iter()
        .map(|(_, id, r, p)| ForecastResult::new(model_id, id, horizon, r, p))
        .collect()
}

pub fn evaluate_horizon(results: &[ForecastResult], horizon: usize) -> Result<HorizonEval> {
    if results.is_empty() {
        return Err(Error::invalid("no test windows to evaluate"));
    }
    let per_series = results
        .iter()
        .map(|r| {
            Ok(SeriesMetrics {
                series_id: r.series_id.clone(),
                rmse: rmse(r)?,
                mape: mape(r)?,
                nmape: nmape(r)?,
                clarke: clarke_summary(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&SeriesMetrics) -> f64| aggregate(&per_series.iter().map(f).collect::<Vec<_>>());
    let mut clarke_mean = [0.0; 5];
    let mut clarke_std = [0.0; 5];
    for z in 0..5 {
        (clarke_mean[z], clarke_std[z]) = col(&|m| m.clarke.pct[z])?;
    }
    Ok(HorizonEval {
        horizon,
        rmse: col(&|m| m.rmse)?,
        mape: col(&|m| m.mape)?,
        nmape: col(&|m| m.nmape)?,
        clarke_mean,
        clarke_std,
        per_series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub horizons: Vec<HorizonEval>,
    pub trace: Option<TrainTrace>,
    pub epochs_to_converge: Option<usize>,
    pub arima_fallbacks: usize,
    /// Pooled mg/dL pairs at the Clarke scatter horizon.
    pub scatter: Vec<(f64, f64)>,
}

impl ModelEval {
    pub fn at(&self, horizon: usize) -> Option<&HorizonEval> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: ModelKind,
    pub seed: u64,
    pub result: std::result::Result<ModelEval, String>,
    /// Wall-clock seconds; not serialized.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub horizons: Vec<usize>,
    pub scatter_horizon: usize,
    pub runs: Vec<ModelRun>,
}

impl BenchmarkResults {
    pub fn succeeded(&self) -> impl Iterator<Item = (ModelKind, &ModelEval)> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok().map(|e| (r.model, e)))
    }

    pub fn get(&self, model: ModelKind) -> Option<&ModelEval> {
        self.succeeded().find(|(m, _)| *m == model).map(|(_, e)| e)
    }

    pub fn failures(&self) -> Vec<(ModelKind, &str)> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().err().map(|e| (r.model, e.as_str())))
            .collect()
    }
}

fn run_model(
    kind: ModelKind,
    ds: &WindowedDataset,
    bench: &BenchmarkConfig,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelEval> {
    let (fitted, trace) = fit_model(kind, ds, model, train_cfg, &bench.ar, seed)?;
    let (forecasts, arima_fallbacks) = forecast_test(&fitted, ds, bench.max_horizon())?;
    let mut horizons = Vec::with_capacity(bench.horizons.len());
    let mut scatter = Vec::new();
    for &h in &bench.horizons {
        let results = forecast_results(kind.name(), ds, &forecasts, h)?;
        if h == bench.scatter_horizon() {
            scatter = results
                .iter()
                .flat_map(|r| r.reference.iter().copied().zip(r.predicted.iter().copied()))
                .collect();
        }
        horizons.push(evaluate_horizon(&results, h)?);
    }
    Ok(ModelEval {
        horizons,
        epochs_to_converge: trace.as_ref().and_then(TrainTrace::epochs_to_converge),
        trace,
        arima_fallbacks,
        scatter,
    })
}

/// Fit and score every configured model on a normalized dataset whose window
/// horizon covers the longest benchmark horizon. Model `i` is seeded with
/// `train_cfg.seed + i`; a failing model is recorded and the run continues.
pub fn run_benchmark(
    ds: &WindowedDataset,
    bench: &BenchmarkConfig,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<BenchmarkResults> {
    bench.validate()?;
    stats(ds)?;
    if ds.config.horizon < bench.max_horizon() {
        return Err(Error::Config(format!(
            "dataset windows carry {} target steps but the benchmark needs {}",
            ds.config.horizon,
            bench.max_horizon()
        )));
    }
    if ds.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let runs = bench
        .models
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let seed = train_cfg.seed.wrapping_add(i as u64);
            let started = Instant::now();
            let result = run_model(kind, ds, bench, model, train_cfg, seed).map_err(|e| e.to_string());
            ModelRun {
                model: kind,
                seed,
                result,
                seconds: started.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(BenchmarkResults {
        horizons: bench.horizons.clone(),
        scatter_horizon: bench.scatter_horizon(),
        runs,
    })
}
