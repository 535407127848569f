//! The `glycovae` command-line tool.
//!
//! Every subcommand writes into the output directory (created if missing)
//! and finishes with a `manifest.json` describing the run. All other files
//! are reproducible byte for byte under a fixed seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    evaluate_horizon, fit_model, forecast_results, forecast_test, run_benchmark, BenchmarkConfig,
    BenchmarkResults, ModelConfig, ModelEval, ModelKind, ModelRun, TrainedModel,
};
use crate::cells::CellKind;
use crate::checkpoint::{Architecture, Checkpoint, Model};
use crate::data::{
    format_timestamp, load_csv, make_windows, normalize, normalize_with, synth_cohort, synth_generate, write_csv,
    CsvSchema, DataSource, DatasetManifest, NormStats, SynthConfig, TimeSeries, WindowConfig,
};
use crate::error::{Error, Result};
use crate::imputation::run_imputation;
use crate::report::{
    clarke_summary_csv, read_pairs_csv, summarize_pairs, synth_imputation_svg, synth_series_svg, trace_csv,
    write_benchmark,
};
use crate::svg::clarke_chart;
use crate::train::TrainConfig;
use crate::vae::{impute_series, prefill};

pub const OUT_ENV: &str = "GLYCOVAE_OUT";

#[derive(Debug, Parser)]
#[command(name = "glycovae", version, about = "Glucose forecasting and imputation with recurrent VAEs")]
pub struct Cli {
    /// JSON configuration with optional `data`, `model`, `train` and `benchmark` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "glycovae-out")]
    pub out: PathBuf,
    /// Master seed, overriding `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic sine triple and cohort, with plots.
    Synth {
        /// Also train a VAE-RNN on the triple and plot the imputed gap.
        #[arg(long)]
        with_model: bool,
    },
    /// Train one model and save a checkpoint.
    Train {
        /// CGM CSV; the synthetic cohort is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Learned model to train; defaults to the VAE with `model.cell`.
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Forecast past the end of every series.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Steps to forecast; defaults to the checkpoint's window horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Fill missing entries of every series with a VAE checkpoint.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and compare every configured model.
    Benchmark {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Clarke Error Grid summary of a `reference,predicted` CSV.
    Clarke {
        #[arg(long)]
        input: PathBuf,
    },
    /// Rebuild tables and figures from a saved `results.json`.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Impute { .. } => "impute",
            Command::Evaluate { .. } => "evaluate",
            Command::Benchmark { .. } => "benchmark",
            Command::Clarke { .. } => "clarke",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CGM CSV; when absent the synthetic cohort is generated.
    pub csv: Option<PathBuf>,
    pub schema: CsvSchema,
    pub synthetic: SynthConfig,
    pub window: WindowConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub benchmark: BenchmarkConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    generated_at: String,
    wall_clock_seconds: f64,
    config: &'a Config,
    dataset: Option<DatasetManifest>,
    details: serde_json::Value,
    outputs: Vec<String>,
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
    seed: u64,
    written: Vec<PathBuf>,
    dataset: Option<DatasetManifest>,
    details: serde_json::Value,
}

impl Ctx {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn series(&self, data: &Option<PathBuf>) -> Result<(Vec<TimeSeries>, DataSource)> {
        match data.as_ref().or(self.cfg.data.csv.as_ref()) {
            Some(path) => Ok((
                load_csv(path, &self.cfg.data.schema)?,
                DataSource::Csv { path: path.clone() },
            )),
            None => Ok((
                synth_cohort(&self.cfg.data.synthetic, self.seed)?,
                DataSource::Synthetic {
                    config: self.cfg.data.synthetic,
                    seed: self.seed,
                },
            )),
        }
    }

    fn step_minutes(&self) -> i64 {
        self.cfg.data.schema.step_minutes
    }
}

/// What a finished command reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    /// Set when a benchmark finished with some (not all) models failing.
    pub incomplete: Option<String>,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx {
        seed: cfg.train.seed,
        cfg,
        out: cli.out.clone(),
        written: Vec::new(),
        dataset: None,
        details: serde_json::Value::Null,
    };
    let incomplete = match &cli.command {
        Command::Synth { with_model } => cmd_synth(&mut ctx, *with_model)?,
        Command::Train { data, model } => cmd_train(&mut ctx, data, *model)?,
        Command::Predict {
            checkpoint,
            data,
            horizon,
        } => cmd_predict(&mut ctx, checkpoint, data, *horizon)?,
        Command::Impute { checkpoint, data } => cmd_impute(&mut ctx, checkpoint, data)?,
        Command::Evaluate { checkpoint, data } => cmd_evaluate(&mut ctx, checkpoint, data)?,
        Command::Benchmark { data } => cmd_benchmark(&mut ctx, data)?,
        Command::Clarke { input } => cmd_clarke(&mut ctx, input)?,
        Command::Report { results } => cmd_report(&mut ctx, results)?,
    };
    let manifest = RunManifest {
        tool: "glycovae",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: ctx.seed,
        generated_at: chrono::Utc::now().to_rfc3339(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: &ctx.cfg,
        dataset: ctx.dataset.take(),
        details: std::mem::take(&mut ctx.details),
        outputs: ctx
            .written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    ctx.write("manifest.json", json + "\n")?;
    Ok(Outcome {
        outputs: ctx.written,
        incomplete,
    })
}

fn cmd_synth(ctx: &mut Ctx, with_model: bool) -> Result<Option<String>> {
    let sc = ctx.cfg.data.synthetic;
    let triple = synth_generate(sc.n_samples, ctx.seed, sc.noise)?;
    let mask3 = triple.mask3();
    for ts in triple.time_series() {
        let path = ctx.out.join(format!("{}.csv", ts.series_id));
        write_csv(&path, &[ts])?;
        ctx.written.push(path);
    }
    let start = crate::data::synth_epoch();
    let step = chrono::Duration::minutes(crate::data::DEFAULT_STEP_MINUTES);
    let mut mask_csv = String::from("step,timestamp,ts3_observed\n");
    let mut truth_csv = String::from("step,timestamp,ts3\n");
    for (t, m) in mask3.iter().enumerate() {
        let ts = format_timestamp(start + step * t as i32);
        mask_csv.push_str(&format!("{t},{ts},{}\n", u8::from(*m)));
        truth_csv.push_str(&format!("{t},{ts},{}\n", triple.series[2][t]));
    }
    ctx.write("mask.csv", mask_csv)?;
    ctx.write("ts3_truth.csv", truth_csv)?;
    let cohort = synth_cohort(&sc, ctx.seed)?;
    let path = ctx.out.join("cohort.csv");
    write_csv(&path, &cohort)?;
    ctx.written.push(path);
    ctx.write("fig1_series.svg", synth_series_svg(&triple.series, &mask3))?;

    let mut details = serde_json::json!({
        "gap_start": triple.gap_start,
        "gap_len": triple.gap_len,
        "n_samples": triple.len(),
    });
    if with_model {
        let (_, outcome) = run_imputation(&triple, &ctx.cfg.data.window, &ctx.cfg.model, &ctx.cfg.train)?;
        ctx.write(
            "fig2_imputation.svg",
            synth_imputation_svg(&triple.series[2], &mask3, Some(&outcome.imputed)),
        )?;
        let mut csv = String::from("step,truth,observed,imputed\n");
        for t in 0..triple.len() {
            csv.push_str(&format!("{t},{},{},{}\n", triple.series[2][t], u8::from(mask3[t]), outcome.imputed[t]));
        }
        ctx.write("imputation.csv", csv)?;
        ctx.write("trace_imputation.csv", trace_csv(&outcome.trace))?;
        println!(
            "masked-span MSE: model {:.4}, mean fill {:.4}",
            outcome.model_mse, outcome.mean_fill_mse
        );
        details["model_mse"] = outcome.model_mse.into();
        details["mean_fill_mse"] = outcome.mean_fill_mse.into();
    } else {
        ctx.write("fig2_imputation.svg", synth_imputation_svg(&triple.series[2], &mask3, None))?;
    }
    ctx.details = details;
    Ok(None)
}

fn to_checkpoint_model(fitted: TrainedModel) -> Result<Model> {
    match fitted {
        TrainedModel::Vae(p) => Ok(Model::Vae(p)),
        TrainedModel::Rnn(p) => Ok(Model::Rnn(p)),
        _ => Err(Error::Config("only learned models can be trained and saved".into())),
    }
}

fn model_kind(arch: &Architecture) -> ModelKind {
    match *arch {
        Architecture::Vae { config } => match config.cell {
            CellKind::Gru => ModelKind::VaeGru,
            CellKind::Lstm => ModelKind::VaeLstm,
        },
        Architecture::Rnn { cell, bidirectional, .. } => match (cell, bidirectional) {
            (CellKind::Gru, false) => ModelKind::Gru,
            (CellKind::Lstm, false) => ModelKind::Lstm,
            (CellKind::Gru, true) => ModelKind::BiGru,
            (CellKind::Lstm, true) => ModelKind::BiLstm,
        },
    }
}

fn cmd_train(ctx: &mut Ctx, data: &Option<PathBuf>, model: Option<ModelKind>) -> Result<Option<String>> {
    let kind = model.unwrap_or(match ctx.cfg.model.cell {
        CellKind::Gru => ModelKind::VaeGru,
        CellKind::Lstm => ModelKind::VaeLstm,
    });
    if !kind.is_learned() {
        return Err(Error::Config(format!("{kind} has no trainable parameters")));
    }
    let (series, source) = ctx.series(data)?;
    let ds = normalize(&make_windows(&series, &ctx.cfg.data.window)?)?;
    ctx.dataset = Some(DatasetManifest::new(source, &series, &ds));
    let (fitted, trace) = fit_model(kind, &ds, &ctx.cfg.model, &ctx.cfg.train, &ctx.cfg.benchmark.ar, ctx.seed)?;
    let trace = trace.unwrap_or_default();
    let ck = Checkpoint {
        model: to_checkpoint_model(fitted)?,
        stats: ds.stats.clone(),
        window: Some(ds.config),
    };
    ctx.write("model.ckpt", ck.to_bytes()?)?;
    ctx.write("trace.csv", trace_csv(&trace))?;
    if let (Some(first), Some(last)) = (trace.epochs.first(), trace.epochs.last()) {
        println!(
            "{kind}: total loss {:.4} -> {:.4} over {} epochs",
            first.total,
            last.total,
            trace.epochs.len()
        );
    }
    ctx.details = serde_json::json!({
        "model": kind,
        "epochs_to_converge": trace.epochs_to_converge(),
    });
    Ok(None)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, NormStats, WindowConfig)> {
    let ck = Checkpoint::load(path)?;
    let stats = ck
        .stats
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no normalization statistics".into()))?;
    let window = ck.window.unwrap_or_default();
    Ok((ck, stats, window))
}

fn trained(model: &Model) -> TrainedModel {
    match model {
        Model::Vae(p) => TrainedModel::Vae(p.clone()),
        Model::Rnn(p) => TrainedModel::Rnn(p.clone()),
    }
}

fn check_channels(series: &[TimeSeries], stats: &NormStats) -> Result<()> {
    for s in series {
        if s.channels != stats.channels {
            return Err(Error::invalid(format!(
                "series {} has channels {:?} but the checkpoint expects {:?}",
                s.series_id, s.channels, stats.channels
            )));
        }
    }
    Ok(())
}

fn normalized_rows(s: &TimeSeries, stats: &NormStats) -> Vec<Vec<f64>> {
    s.values
        .iter()
        .zip(&s.mask)
        .map(|(row, m)| {
            row.iter()
                .enumerate()
                .map(|(c, v)| if m[c] { stats.normalize(c, *v) } else { 0.0 })
                .collect()
        })
        .collect()
}

fn cmd_predict(ctx: &mut Ctx, checkpoint: &Path, data: &Option<PathBuf>, horizon: Option<usize>) -> Result<Option<String>> {
    let (ck, stats, window) = load_checkpoint(checkpoint)?;
    let horizon = horizon.unwrap_or(window.horizon);
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let (series, _) = ctx.series(data)?;
    check_channels(&series, &stats)?;
    let model = trained(&ck.model);
    let mut csv = format!("series_id,step,timestamp,{}\n", stats.channels.join(","));
    for s in &series {
        if s.len() < window.input_len {
            return Err(Error::invalid(format!(
                "series {} has {} steps, fewer than the {}-step input window",
                s.series_id,
                s.len(),
                window.input_len
            )));
        }
        let start = s.len() - window.input_len;
        let rows = normalized_rows(s, &stats);
        let x = prefill(&rows[start..], &s.mask[start..]);
        let (forecast, _) = model.forecast(&x, &s.mask[start..], horizon)?;
        for (j, row) in stats.denormalize_rows(&forecast).iter().enumerate() {
            let t = s.len() + j;
            let vals: Vec<String> = row.iter().map(f64::to_string).collect();
            csv.push_str(&format!("{},{t},{},{}\n", s.series_id, format_timestamp(s.time_at(t)), vals.join(",")));
        }
    }
    ctx.write("predictions.csv", csv)?;
    ctx.details = serde_json::json!({ "horizon": horizon, "series": series.len() });
    Ok(None)
}

fn cmd_impute(ctx: &mut Ctx, checkpoint: &Path, data: &Option<PathBuf>) -> Result<Option<String>> {
    let (ck, stats, window) = load_checkpoint(checkpoint)?;
    let Model::Vae(params) = &ck.model else {
        return Err(Error::Config("imputation needs a VAE checkpoint".into()));
    };
    let (series, _) = ctx.series(data)?;
    check_channels(&series, &stats)?;
    let mut filled = Vec::with_capacity(series.len());
    let mut imputed_entries = 0;
    for s in &series {
        let rows = normalized_rows(s, &stats);
        let out = stats.denormalize_rows(&impute_series(params, &rows, &s.mask, window.input_len)?);
        imputed_entries += s.mask.iter().flatten().filter(|m| !**m).count();
        let values = out
            .iter()
            .zip(&s.values)
            .zip(&s.mask)
            .map(|((fill, orig), m)| (0..s.dim()).map(|c| if m[c] { orig[c] } else { fill[c] }).collect())
            .collect();
        filled.push(TimeSeries {
            values,
            mask: vec![vec![true; s.dim()]; s.len()],
            ..s.clone()
        });
    }
    let path = ctx.out.join("imputed.csv");
    write_csv(&path, &filled)?;
    ctx.written.push(path);
    ctx.details = serde_json::json!({ "imputed_entries": imputed_entries });
    Ok(None)
}

fn cmd_evaluate(ctx: &mut Ctx, checkpoint: &Path, data: &Option<PathBuf>) -> Result<Option<String>> {
    let (ck, stats, window) = load_checkpoint(checkpoint)?;
    let (series, source) = ctx.series(data)?;
    let ds = normalize_with(&make_windows(&series, &window)?, stats)?;
    ctx.dataset = Some(DatasetManifest::new(source, &series, &ds));
    let mut horizons: Vec<usize> = ctx
        .cfg
        .benchmark
        .horizons
        .iter()
        .copied()
        .filter(|h| *h <= window.horizon)
        .collect();
    if horizons.is_empty() {
        horizons.push(window.horizon);
    }
    let kind = model_kind(&ck.model.architecture());
    let (forecasts, _) = forecast_test(&trained(&ck.model), &ds, window.horizon)?;
    let mut evals = Vec::new();
    for &h in &horizons {
        evals.push(evaluate_horizon(&forecast_results(kind.name(), &ds, &forecasts, h)?, h)?);
    }
    let scatter_h = *horizons.last().expect("nonempty horizons");
    let scatter = forecast_results(kind.name(), &ds, &forecasts, scatter_h)?
        .iter()
        .flat_map(|r| r.reference.iter().copied().zip(r.predicted.iter().copied()))
        .collect();
    let res = BenchmarkResults {
        horizons,
        scatter_horizon: scatter_h,
        runs: vec![ModelRun {
            model: kind,
            seed: ctx.seed,
            result: Ok(ModelEval {
                horizons: evals,
                trace: None,
                epochs_to_converge: None,
                arima_fallbacks: 0,
                scatter,
            }),
            seconds: 0.0,
        }],
    };
    let step = ctx.step_minutes();
    ctx.written.extend(write_benchmark(&ctx.out, &res, step)?);
    ctx.write("results.json", serde_json::to_string_pretty(&res)? + "\n")?;
    Ok(None)
}

fn cmd_benchmark(ctx: &mut Ctx, data: &Option<PathBuf>) -> Result<Option<String>> {
    let bench = ctx.cfg.benchmark.clone();
    bench.validate()?;
    let (series, source) = ctx.series(data)?;
    let window = WindowConfig {
        horizon: bench.max_horizon(),
        ..ctx.cfg.data.window
    };
    let ds = normalize(&make_windows(&series, &window)?)?;
    ctx.dataset = Some(DatasetManifest::new(source, &series, &ds));
    let res = run_benchmark(&ds, &bench, &ctx.cfg.model, &ctx.cfg.train)?;
    let step = ctx.step_minutes();
    ctx.written.extend(write_benchmark(&ctx.out, &res, step)?);
    ctx.write("results.json", serde_json::to_string_pretty(&res)? + "\n")?;
    let failures = res.failures();
    for run in &res.runs {
        match &run.result {
            Ok(e) => println!(
                "{:<12} {:>7.1}s  {}-step RMSE {:.2}",
                run.model.name(),
                run.seconds,
                e.horizons[0].horizon,
                e.horizons[0].rmse.0
            ),
            Err(msg) => println!("{:<12} failed: {msg}", run.model.name()),
        }
    }
    ctx.details = serde_json::json!({
        "models": res.runs.iter().map(|r| serde_json::json!({
            "model": r.model,
            "seed": r.seed,
            "seconds": r.seconds,
            "status": if r.result.is_ok() { "ok" } else { "failed" },
            "error": r.result.as_ref().err(),
            "arima_fallbacks": r.result.as_ref().ok().map(|e| e.arima_fallbacks),
            "epochs_to_converge": r.result.as_ref().ok().and_then(|e| e.epochs_to_converge),
        })).collect::<Vec<_>>(),
    });
    if failures.len() == res.runs.len() {
        return Err(Error::invalid("every benchmark model failed; see manifest.json"));
    }
    Ok((!failures.is_empty()).then(|| format!("{} of {} models failed", failures.len(), res.runs.len())))
}

fn cmd_clarke(ctx: &mut Ctx, input: &Path) -> Result<Option<String>> {
    let pairs = read_pairs_csv(input)?;
    let summary = summarize_pairs(&pairs)?;
    for z in crate::metrics::ClarkeZone::ALL {
        println!("zone {z}: {:.2}%", summary.get(z));
    }
    ctx.write("clarke_summary.csv", clarke_summary_csv(&summary))?;
    ctx.write("clarke.svg", clarke_chart("Clarke Error Grid", &pairs, Some(summary.pct)))?;
    ctx.details = serde_json::json!({ "pairs": summary.count, "percent": summary.pct });
    Ok(None)
}

fn cmd_report(ctx: &mut Ctx, results: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(results)?;
    let res: BenchmarkResults = serde_json::from_str(&text)?;
    let step = ctx.step_minutes();
    ctx.written.extend(write_benchmark(&ctx.out, &res, step)?);
    Ok(None)
}

/// Process exit code for an error: 2 for configuration and input problems,
/// 1 for everything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidInput(_) | Error::Json(_) | Error::Csv(_) => 2,
        _ => 1,
    }
}
