//! Python bindings: synthetic data, metrics, baselines and the VAE-RNN model.
//!
//! Sequences cross the boundary as lists of rows (`list[list[float]]`), one
//! row per time step. Masks use the same shape with `True` for observed.

use std::path::PathBuf;

use glycovae::baselines::{ar_fit_forecast, forward_fill_forecast, linear_trend_forecast, ArConfig};
use glycovae::cells::CellKind;
use glycovae::checkpoint::{Checkpoint, Model};
use glycovae::data::{make_windows, synth_epoch, DEFAULT_STEP_MINUTES, synth_generate, TimeSeries, WindowConfig, WindowedDataset};
use glycovae::error::Error;
use glycovae::metrics::{self, ClarkeSummary, ForecastResult};
use glycovae::numeric::SeededRng;
use glycovae::train::{train, TrainConfig};
use glycovae::vae::{self, VaeConfig, VaeRnnParams};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;
type Mask = Vec<Vec<bool>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn full_mask(x: &Rows) -> Mask {
    x.iter().map(|r| vec![true; r.len()]).collect()
}

fn parse_cell(name: &str) -> PyResult<CellKind> {
    match name.to_ascii_lowercase().as_str() {
        "gru" => Ok(CellKind::Gru),
        "lstm" => Ok(CellKind::Lstm),
        _ => Err(PyValueError::new_err(format!("unknown cell `{name}`; use \"gru\" or \"lstm\""))),
    }
}

fn result(reference: Vec<f64>, predicted: Vec<f64>) -> PyResult<ForecastResult> {
    let n = reference.len();
    ForecastResult::new("python", "python", n, reference, predicted).map_err(py_err)
}

/// The three-sine synthetic triple with a 60-step gap in `ts3`.
///
/// Returns a dict with `ts1`, `ts2`, `ts3` (complete), `mask3`, `gap_start`
/// and `gap_len`.
#[pyfunction]
#[pyo3(signature = (n_samples=1440, seed=0, noise=0.5))]
fn synth<'py>(py: Python<'py>, n_samples: usize, seed: u64, noise: f64) -> PyResult<Bound<'py, PyDict>> {
    let t = synth_generate(n_samples, seed, noise).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("ts1", t.series[0].clone())?;
    d.set_item("ts2", t.series[1].clone())?;
    d.set_item("ts3", t.series[2].clone())?;
    d.set_item("mask3", t.mask3())?;
    d.set_item("gap_start", t.gap_start)?;
    d.set_item("gap_len", t.gap_len)?;
    Ok(d)
}

#[pyfunction]
fn rmse(reference: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&result(reference, predicted)?).map_err(py_err)
}

/// Mean absolute percentage error, in percent.
#[pyfunction]
fn mape(reference: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::mape(&result(reference, predicted)?).map_err(py_err)
}

/// Summed absolute error over summed reference, in percent.
#[pyfunction]
fn nmape(reference: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::nmape(&result(reference, predicted)?).map_err(py_err)
}

/// Clarke Error Grid zone letter of one (reference, predicted) pair in mg/dL.
#[pyfunction]
fn clarke_zone(reference: f64, predicted: f64) -> PyResult<String> {
    Ok(metrics::clarke_zone(reference, predicted).map_err(py_err)?.letter().to_string())
}

/// Zone percentages as a dict `{"A": .., ..., "E": ..}`.
#[pyfunction]
fn clarke_summary<'py>(py: Python<'py>, reference: Vec<f64>, predicted: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = ClarkeSummary::from_pairs(&reference, &predicted).map_err(py_err)?;
    let d = PyDict::new(py);
    for z in metrics::ClarkeZone::ALL {
        d.set_item(z.letter().to_string(), s.get(z))?;
    }
    Ok(d)
}

#[pyfunction]
fn kl_divergence(mu: Vec<f64>, logvar: Vec<f64>) -> PyResult<f64> {
    vae::loss_kl(&mu, &logvar).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, horizon, mask=None))]
fn forward_fill(x: Rows, horizon: usize, mask: Option<Mask>) -> PyResult<Rows> {
    let mask = mask.unwrap_or_else(|| full_mask(&x));
    forward_fill_forecast(&x, &mask, horizon).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, horizon, mask=None))]
fn linear_trend(x: Rows, horizon: usize, mask: Option<Mask>) -> PyResult<Rows> {
    let mask = mask.unwrap_or_else(|| full_mask(&x));
    linear_trend_forecast(&x, &mask, horizon).map_err(py_err)
}

/// ARIMA(p, d, 0) forecast of a univariate history.
#[pyfunction]
#[pyo3(signature = (history, horizon, p=6, d=1))]
fn arima(history: Vec<f64>, horizon: usize, p: usize, d: usize) -> PyResult<Vec<f64>> {
    ar_fit_forecast(&history, &ArConfig { p, d }, horizon).map_err(py_err)
}

/// Multitask VAE-RNN: reconstructs its input window and forecasts ahead.
///
/// Values are expected in standardized units; masked entries are treated
/// as 0 (the mean).
#[pyclass(name = "VaeRnn")]
struct PyVaeRnn {
    params: VaeRnnParams,
}

#[pymethods]
impl PyVaeRnn {
    #[new]
    #[pyo3(signature = (input_dim, cell="gru", hidden=64, latent=8, seed=0))]
    fn new(input_dim: usize, cell: &str, hidden: usize, latent: usize, seed: u64) -> PyResult<Self> {
        let cfg = VaeConfig {
            cell: parse_cell(cell)?,
            input_dim,
            hidden,
            latent,
        };
        let params = VaeRnnParams::init(cfg, &mut SeededRng::new(seed)).map_err(py_err)?;
        Ok(Self { params })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.params.config.input_dim
    }

    #[getter]
    fn latent(&self) -> usize {
        self.params.config.latent
    }

    #[getter]
    fn cell(&self) -> &'static str {
        match self.params.config.cell {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    /// Posterior mean and log-variance of the latent code.
    fn encode(&self, x: Rows) -> PyResult<(Vec<f64>, Vec<f64>)> {
        vae::encode(&self.params, &x).map_err(py_err)
    }

    fn forecast(&self, x: Rows, horizon: usize) -> PyResult<Rows> {
        vae::predict(&self.params, &x, horizon).map_err(py_err)
    }

    /// Fill the masked entries of one window; observed entries are returned as is.
    fn impute(&self, x: Rows, mask: Mask) -> PyResult<Rows> {
        vae::impute(&self.params, &x, &mask).map_err(py_err)
    }

    /// Train on sliding windows of one series and return per-epoch losses.
    #[pyo3(signature = (values, mask=None, input_len=24, horizon=12, epochs=20, batch_size=32, learning_rate=1e-3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        values: Rows,
        mask: Option<Mask>,
        input_len: usize,
        horizon: usize,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let mask = mask.unwrap_or_else(|| full_mask(&values));
        let d = self.params.config.input_dim;
        let series = TimeSeries {
            series_id: "python".into(),
            start_time: synth_epoch(),
            step: chrono::Duration::minutes(DEFAULT_STEP_MINUTES),
            channels: (0..d).map(|i| format!("ch{i}")).collect(),
            values: vae::prefill(&values, &mask),
            mask,
        };
        let window = WindowConfig {
            input_len,
            horizon,
            train_fraction: 1.0,
            ..WindowConfig::default()
        };
        let ds: WindowedDataset = make_windows(&[series], &window).map_err(py_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let (params, trace) = train(self.params.clone(), &ds, &cfg).map_err(py_err)?;
        self.params = params;
        Ok(trace.epochs.iter().map(|e| (e.reco, e.pred, e.kl, e.total)).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ck = Checkpoint {
            model: Model::Vae(self.params.clone()),
            stats: None,
            window: None,
        };
        ck.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match Checkpoint::load(&path).map_err(py_err)?.model {
            Model::Vae(params) => Ok(Self { params }),
            Model::Rnn(_) => Err(PyValueError::new_err("checkpoint holds an RNN forecaster, not a VAE")),
        }
    }

    fn __repr__(&self) -> String {
        let c = &self.params.config;
        format!(
            "VaeRnn(input_dim={}, cell=\"{}\", hidden={}, latent={})",
            c.input_dim,
            self.cell(),
            c.hidden,
            c.latent
        )
    }
}

#[pymodule]
fn glycovae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(nmape, m)?)?;
    m.add_function(wrap_pyfunction!(clarke_zone, m)?)?;
    m.add_function(wrap_pyfunction!(clarke_summary, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(forward_fill, m)?)?;
    m.add_function(wrap_pyfunction!(linear_trend, m)?)?;
    m.add_function(wrap_pyfunction!(arima, m)?)?;
    m.add_class::<PyVaeRnn>()?;
    Ok(())
}
