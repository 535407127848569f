//! Ingestion, uniform resampling, windowing, normalization and the synthetic
//! triple-sine generator.
//!
//! CSV schema: a header row is required. `timestamp` (ISO-8601) and `glucose`
//! (mg/dL) are mandatory; an optional `series_id` column splits the file into
//! series; every other column is an auxiliary numeric channel. Blank cells are
//! missing readings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::SeededRng;

pub const DEFAULT_STEP_MINUTES: i64 = 5;
pub const GLUCOSE: &str = "glucose";
const TIMESTAMP: &str = "timestamp";
const SERIES_ID: &str = "series_id";
const DEFAULT_SERIES: &str = "series-0";

/// Uniformly sampled multichannel series. Channel 0 is glucose.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub series_id: String,
    pub start_time: NaiveDateTime,
    pub step: Duration,
    pub channels: Vec<String>,
    /// `len × channels`; masked entries hold `NaN`.
    pub values: Vec<Vec<f64>>,
    /// `true` = observed.
    pub mask: Vec<Vec<bool>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn time_at(&self, index: usize) -> NaiveDateTime {
        self.start_time + self.step * index as i32
    }

    pub fn observed_count(&self, channel: usize) -> usize {
        self.mask.iter().filter(|m| m[channel]).count()
    }

    /// Keep only the named channels, in the given order.
    pub fn select_channels(&self, names: &[String]) -> Result<TimeSeries> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.channels
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::invalid(format!("series {} has no channel {n}", self.series_id)))
            })
            .collect::<Result<_>>()?;
        Ok(TimeSeries {
            series_id: self.series_id.clone(),
            start_time: self.start_time,
            step: self.step,
            channels: names.to_vec(),
            values: self.values.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
            mask: self.mask.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
        })
    }
}

/// One timestamped row before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReading {
    pub time: NaiveDateTime,
    pub values: Vec<Option<f64>>,
}

/// Column naming for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub step_minutes: i64,
    /// Channels to keep after `glucose`; `None` keeps every auxiliary column.
    pub channels: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            step_minutes: DEFAULT_STEP_MINUTES,
            channels: None,
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Read a CGM CSV into one resampled series per `series_id`, ordered by id.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<TimeSeries>> {
    if schema.step_minutes <= 0 {
        return Err(Error::invalid("resampling step must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = col(TIMESTAMP).ok_or_else(|| parse_error(path, 1, "missing `timestamp` column"))?;
    let glucose_col = col(GLUCOSE).ok_or_else(|| parse_error(path, 1, "missing `glucose` column"))?;
    let series_col = col(SERIES_ID);
    let aux: Vec<(usize, String)> = match &schema.channels {
        Some(names) => names
            .iter()
            .filter(|n| n.as_str() != GLUCOSE)
            .map(|n| {
                col(n)
                    .map(|i| (i, n.clone()))
                    .ok_or_else(|| parse_error(path, 1, format!("missing channel column `{n}`")))
            })
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col && *i != glucose_col && Some(*i) != series_col)
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
    };
    let mut channels = vec![GLUCOSE.to_string()];
    channels.extend(aux.iter().map(|(_, n)| n.clone()));

    let mut by_series: BTreeMap<String, Vec<RawReading>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let time = parse_timestamp(field(ts_col))
            .ok_or_else(|| parse_error(path, line, format!("unparseable timestamp `{}`", field(ts_col))))?;
        let parse_num = |i: usize, name: &str| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| parse_error(path, line, format!("unparseable {name} value `{s}`")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("non-finite {name} value")));
            }
            Ok(Some(v))
        };
        let glucose = parse_num(glucose_col, GLUCOSE)?;
        if let Some(g) = glucose {
            if !(g > 0.0 && g < 1000.0) {
                return Err(parse_error(path, line, format!("glucose {g} outside (0, 1000) mg/dL")));
            }
        }
        let mut values = vec![glucose];
        for (i, name) in &aux {
            values.push(parse_num(*i, name)?);
        }
        let id = series_col
            .map(|c| field(c).to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| DEFAULT_SERIES.to_string());
        let rows = by_series.entry(id.clone()).or_default();
        if let Some(prev) = rows.last() {
            if time == prev.time {
                return Err(parse_error(path, line, format!("duplicate timestamp in series {id}")));
            }
            if time < prev.time {
                return Err(parse_error(path, line, format!("timestamps go backwards in series {id}")));
            }
        }
        rows.push(RawReading { time, values });
    }

    let step = Duration::minutes(schema.step_minutes);
    by_series
        .into_iter()
        .map(|(id, rows)| resample_uniform(&id, &rows, &channels, step))
        .collect()
}

/// Snap readings onto a grid anchored at the first reading.
///
/// Grid slot `i` sits at `t0 + i·step`; there are `ceil((t_last − t0)/step) + 1`
/// slots. For each channel, a slot takes the value of the nearest reading
/// within `step/2` whose nearest slot it is (ties go to the earlier reading);
/// otherwise it is masked. Values are never interpolated.
pub fn resample_uniform(
    series_id: &str,
    readings: &[RawReading],
    channels: &[String],
    step: Duration,
) -> Result<TimeSeries> {
    let step_ms = step.num_milliseconds();
    if step_ms <= 0 {
        return Err(Error::invalid("resampling step must be positive"));
    }
    let d = channels.len();
    let Some(first) = readings.first() else {
        return Ok(TimeSeries {
            series_id: series_id.to_string(),
            start_time: NaiveDate::from_ymd_opt(1970, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            step,
            channels: channels.to_vec(),
            values: Vec::new(),
            mask: Vec::new(),
        });
    };
    let t0 = first.time;
    let last = readings.last().map_or(t0, |r| r.time);
    let span = (last - t0).num_milliseconds();
    let slots = (span + step_ms - 1).div_euclid(step_ms) as usize + 1;
    let mut values = vec![vec![f64::NAN; d]; slots];
    let mut best = vec![vec![i64::MAX; d]; slots];
    for r in readings {
        Error::check_dim("reading width", d, r.values.len())?;
        let offset = (r.time - t0).num_milliseconds();
        // Nearest slot, ties resolved toward the earlier slot.
        let slot = ((2 * offset + step_ms - 1).div_euclid(2 * step_ms)) as usize;
        if slot >= slots {
            continue;
        }
        let dist = (offset - slot as i64 * step_ms).abs();
        if 2 * dist > step_ms {
            continue;
        }
        for (c, v) in r.values.iter().enumerate() {
            if let Some(v) = v {
                if dist < best[slot][c] {
                    best[slot][c] = dist;
                    values[slot][c] = *v;
                }
            }
        }
    }
    let mask = best
        .iter()
        .map(|row| row.iter().map(|b| *b != i64::MAX).collect())
        .collect();
    Ok(TimeSeries {
        series_id: series_id.to_string(),
        start_time: t0,
        step,
        channels: channels.to_vec(),
        values,
        mask,
    })
}

/// Write series in the ingestion schema (a `series_id` column is included).
pub fn write_csv(path: &Path, series: &[TimeSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let channels = series.first().map(|s| s.channels.clone()).unwrap_or_else(|| vec![GLUCOSE.into()]);
    let mut header = vec![SERIES_ID.to_string(), TIMESTAMP.to_string()];
    header.extend(channels.iter().cloned());
    w.write_record(&header)?;
    for s in series {
        if s.channels != channels {
            return Err(Error::invalid("all series written to one CSV must share channels"));
        }
        for t in 0..s.len() {
            let mut row = vec![s.series_id.clone(), format_timestamp(s.time_at(t))];
            for c in 0..s.dim() {
                row.push(if s.mask[t][c] { format!("{}", s.values[t][c]) } else { String::new() });
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One training/evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `T × d` input; masked entries are `NaN` before normalization and `0`
    /// (the training mean) after.
    pub x: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// `w × d` fully observed targets.
    pub y: Vec<Vec<f64>>,
    pub series_id: String,
    pub series_index: usize,
    pub start: usize,
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    pub fn normalize_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(c, v)| self.normalize(c, *v)).collect())
            .collect()
    }

    pub fn denormalize_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(c, v)| self.denormalize(c, *v)).collect())
            .collect()
    }
}

/// Windowing policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub train_fraction: f64,
    /// Minimum fraction of observed glucose entries in the input window.
    pub min_observed: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_len: 24,
            horizon: 12,
            stride: 1,
            train_fraction: 0.8,
            min_observed: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub candidates: usize,
    /// Failed the gap policy.
    pub gaps: usize,
    /// Straddled the chronological train/test cut.
    pub boundary: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub config: WindowConfig,
    pub channels: Vec<String>,
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub drops: DropCounts,
    /// `Some` once [`normalize`] has run.
    pub stats: Option<NormStats>,
    /// Per-series index where the test portion starts.
    pub cuts: Vec<usize>,
}

impl WindowedDataset {
    pub fn dim(&self) -> usize {
        self.channels.len()
    }
}

/// Sliding windows with a chronological per-series split.
///
/// Series `i` of length `n` is cut at `floor(train_fraction · n)`; windows
/// lying wholly before the cut are training windows, windows starting at or
/// after it are test windows, and windows straddling it are dropped so the
/// two splits never share a time step.
pub fn make_windows(series: &[TimeSeries], cfg: &WindowConfig) -> Result<WindowedDataset> {
    if cfg.input_len == 0 || cfg.horizon == 0 || cfg.stride == 0 {
        return Err(Error::invalid("input length, horizon and stride must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::invalid("train_fraction must lie in [0, 1]"));
    }
    let channels = series.first().map(|s| s.channels.clone()).unwrap_or_default();
    if series.iter().any(|s| s.channels != channels) {
        return Err(Error::invalid("all series must share the same channels"));
    }
    let (t_len, w) = (cfg.input_len, cfg.horizon);
    let mut ds = WindowedDataset {
        config: *cfg,
        channels,
        train: Vec::new(),
        test: Vec::new(),
        drops: DropCounts::default(),
        stats: None,
        cuts: Vec::new(),
    };
    for (si, s) in series.iter().enumerate() {
        let cut = (cfg.train_fraction * s.len() as f64).floor() as usize;
        ds.cuts.push(cut);
        let mut start = 0;
        while start + t_len + w <= s.len() {
            ds.drops.candidates += 1;
            let end = start + t_len + w;
            let observed = s.mask[start..start + t_len].iter().filter(|m| m[0]).count();
            let target_ok = s.mask[start + t_len..end].iter().all(|m| m.iter().all(|v| *v));
            if (observed as f64) < cfg.min_observed * t_len as f64 || !target_ok {
                ds.drops.gaps += 1;
            } else if end <= cut || start >= cut {
                let sample = WindowSample {
                    x: s.values[start..start + t_len].to_vec(),
                    mask: s.mask[start..start + t_len].to_vec(),
                    y: s.values[start + t_len..end].to_vec(),
                    series_id: s.series_id.clone(),
                    series_index: si,
                    start,
                };
                if end <= cut {
                    ds.train.push(sample);
                } else {
                    ds.test.push(sample);
                }
            } else {
                ds.drops.boundary += 1;
            }
            start += cfg.stride;
        }
    }
    Ok(ds)
}

/// Training-split statistics: every distinct observed `(series, step)` value
/// covered by a training window counts once.
pub fn training_stats(ds: &WindowedDataset) -> Result<NormStats> {
    if ds.train.is_empty() {
        return Err(Error::invalid("normalization needs a nonempty training split"));
    }
    let d = ds.dim();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    let mut count = vec![0usize; d];
    for win in &ds.train {
        let rows = win.x.iter().zip(&win.mask).map(|(v, m)| (v, Some(m))).chain(win.y.iter().map(|v| (v, None)));
        for (off, (vals, mask)) in rows.enumerate() {
            if !seen.insert((win.series_index, win.start + off)) {
                continue;
            }
            for c in 0..d {
                if mask.is_none_or(|m| m[c]) {
                    sum[c] += vals[c];
                    sumsq[c] += vals[c] * vals[c];
                    count[c] += 1;
                }
            }
        }
    }
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for c in 0..d {
        if count[c] == 0 {
            return Err(Error::invalid(format!("channel {} has no observed training values", ds.channels[c])));
        }
        let n = count[c] as f64;
        mean[c] = sum[c] / n;
        let var = (sumsq[c] / n - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt();
        if !(std[c] > 1e-12 * mean[c].abs().max(1.0)) {
            return Err(Error::invalid(format!(
                "channel {} has zero variance on the training split",
                ds.channels[c]
            )));
        }
    }
    Ok(NormStats {
        channels: ds.channels.clone(),
        mean,
        std,
    })
}

/// z-score every window with training statistics; masked inputs become `0`.
pub fn normalize(ds: &WindowedDataset) -> Result<WindowedDataset> {
    normalize_with(ds, training_stats(ds)?)
}

/// z-score with previously computed statistics, e.g. from a checkpoint.
pub fn normalize_with(ds: &WindowedDataset, stats: NormStats) -> Result<WindowedDataset> {
    if stats.channels != ds.channels {
        return Err(Error::invalid(format!(
            "normalization channels {:?} do not match dataset channels {:?}",
            stats.channels, ds.channels
        )));
    }
    let apply = |w: &WindowSample| WindowSample {
        x: w.x
            .iter()
            .zip(&w.mask)
            .map(|(r, m)| {
                r.iter()
                    .enumerate()
                    .map(|(c, v)| if m[c] { stats.normalize(c, *v) } else { 0.0 })
                    .collect()
            })
            .collect(),
        y: stats.normalize_rows(&w.y),
        ..w.clone()
    };
    Ok(WindowedDataset {
        train: ds.train.iter().map(apply).collect(),
        test: ds.test.iter().map(apply).collect(),
        stats: Some(stats),
        ..ds.clone()
    })
}

/// The three noisy sines and the 60-step gap placed in the third.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTriple {
    /// `ts1, ts2, ts3`, complete (ground truth under the gap included).
    pub series: [Vec<f64>; 3],
    pub gap_start: usize,
    pub gap_len: usize,
}

pub const SYNTH_PERIODS: [f64; 3] = [12.0, 6.0, 4.0];
pub const SYNTH_GAP: usize = 60;
pub const SYNTH_MIN_SAMPLES: usize = 120;

/// `ts_i(t) = sin(2π t / P_i) + noise · N(0, 1)` with periods 12, 6, 4 and
/// `t` the integer step index. Draw order: all noise for ts1, then ts2, then
/// ts3, then the gap start (uniform over valid positions).
pub fn synth_generate(n_samples: usize, seed: u64, noise: f64) -> Result<SynthTriple> {
    if n_samples < SYNTH_MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "synthetic series need at least {SYNTH_MIN_SAMPLES} samples"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let series = SYNTH_PERIODS.map(|period| {
        (0..n_samples)
            .map(|t| {
                let base = (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                let eps = rng.standard_normal();
                if noise == 0.0 {
                    base
                } else {
                    base + noise * eps
                }
            })
            .collect::<Vec<f64>>()
    });
    let gap_start = rng.index(n_samples - SYNTH_GAP + 1);
    Ok(SynthTriple {
        series,
        gap_start,
        gap_len: SYNTH_GAP,
    })
}

pub fn synth_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

impl SynthTriple {
    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.series[0].is_empty()
    }

    /// Observation mask of ts3.
    pub fn mask3(&self) -> Vec<bool> {
        (0..self.len())
            .map(|t| t < self.gap_start || t >= self.gap_start + self.gap_len)
            .collect()
    }

    /// Three univariate series (`ts1`, `ts2`, `ts3` with its gap masked).
    pub fn time_series(&self) -> [TimeSeries; 3] {
        let mask3 = self.mask3();
        [0usize, 1, 2].map(|i| {
            let mask: Vec<Vec<bool>> = (0..self.len()).map(|t| vec![i != 2 || mask3[t]]).collect();
            TimeSeries {
                series_id: format!("ts{}", i + 1),
                start_time: synth_epoch(),
                step: Duration::minutes(DEFAULT_STEP_MINUTES),
                channels: vec![format!("ts{}", i + 1)],
                values: self.series[i]
                    .iter()
                    .zip(&mask)
                    .map(|(v, m)| vec![if m[0] { *v } else { f64::NAN }])
                    .collect(),
                mask,
            }
        })
    }

    /// One three-channel series `offset + scale · [ts1, ts2, ts3]`, with
    /// channel 0 named `glucose`.
    pub fn combined(&self, series_id: &str, scale: f64, offset: f64) -> TimeSeries {
        let mask3 = self.mask3();
        let values = (0..self.len())
            .map(|t| {
                vec![
                    offset + scale * self.series[0][t],
                    offset + scale * self.series[1][t],
                    if mask3[t] { offset + scale * self.series[2][t] } else { f64::NAN },
                ]
            })
            .collect();
        TimeSeries {
            series_id: series_id.to_string(),
            start_time: synth_epoch(),
            step: Duration::minutes(DEFAULT_STEP_MINUTES),
            channels: vec![GLUCOSE.to_string(), "ts2".to_string(), "ts3".to_string()],
            values,
            mask: mask3.iter().map(|m| vec![true, true, *m]).collect(),
        }
    }
}

/// Synthetic cohort settings: series `i` is generated with `seed + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_series: usize,
    pub n_samples: usize,
    pub noise: f64,
    /// mg/dL per unit of the unit-amplitude sines.
    pub scale: f64,
    pub offset: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_series: 3,
            n_samples: 1440,
            noise: 0.5,
            scale: 40.0,
            offset: 140.0,
        }
    }
}

pub fn synth_cohort(cfg: &SynthConfig, seed: u64) -> Result<Vec<TimeSeries>> {
    (0..cfg.n_series)
        .map(|i| {
            let triple = synth_generate(cfg.n_samples, seed.wrapping_add(i as u64), cfg.noise)?;
            Ok(triple.combined(&format!("synth-{i:02}"), cfg.scale, cfg.offset))
        })
        .collect()
}

/// Dataset description written next to every results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub step_minutes: i64,
    pub window: WindowConfig,
    pub series: Vec<SeriesSummary>,
    pub train_windows: usize,
    pub test_windows: usize,
    pub drops: DropCounts,
    pub normalization: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic { config: SynthConfig, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub series_id: String,
    pub steps: usize,
    pub observed_glucose: usize,
    pub test_cut: usize,
}

impl DatasetManifest {
    pub fn new(source: DataSource, series: &[TimeSeries], ds: &WindowedDataset) -> Self {
        Self {
            source,
            step_minutes: series.first().map_or(DEFAULT_STEP_MINUTES, |s| s.step.num_minutes()),
            window: ds.config,
            series: series
                .iter()
                .zip(&ds.cuts)
                .map(|(s, cut)| SeriesSummary {
                    series_id: s.series_id.clone(),
                    steps: s.len(),
                    observed_glucose: s.observed_count(0),
                    test_cut: *cut,
                })
                .collect(),
            train_windows: ds.train.len(),
            test_windows: ds.test.len(),
            drops: ds.drops,
            normalization: ds.stats.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(min: i64) -> NaiveDateTime {
        synth_epoch() + Duration::minutes(min)
    }

    fn reading(min: i64, v: f64) -> RawReading {
        RawReading {
            time: t(min),
            values: vec![Some(v)],
        }
    }

    fn glucose() -> Vec<String> {
        vec![GLUCOSE.to_string()]
    }

    fn series_from(values: &[f64]) -> TimeSeries {
        TimeSeries {
            series_id: "s".into(),
            start_time: synth_epoch(),
            step: Duration::minutes(5),
            channels: glucose(),
            values: values.iter().map(|v| vec![*v]).collect(),
            mask: values.iter().map(|_| vec![true]).collect(),
        }
    }

    #[test]
    fn resample_identity_on_uniform_input() {
        let rs: Vec<_> = (0..4).map(|i| reading(5 * i, 100.0 + i as f64)).collect();
        let s = resample_uniform("a", &rs, &glucose(), Duration::minutes(5)).unwrap();
        assert_eq!(s.values, vec![vec![100.0], vec![101.0], vec![102.0], vec![103.0]]);
        assert!(s.mask.iter().all(|m| m[0]));
    }

    #[test]
    fn resample_seven_minute_pair() {
        let s = resample_uniform("a", &[reading(0, 100.0), reading(7, 110.0)], &glucose(), Duration::minutes(5)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.mask, vec![vec![true], vec![true], vec![false]]);
        assert_eq!(s.values[1][0], 110.0);
    }

    #[test]
    fn resample_twenty_minute_gap() {
        let s = resample_uniform("a", &[reading(0, 100.0), reading(20, 120.0)], &glucose(), Duration::minutes(5)).unwrap();
        assert_eq!(s.len(), 5);
        let observed: Vec<bool> = s.mask.iter().map(|m| m[0]).collect();
        assert_eq!(observed, vec![true, false, false, false, true]);
    }

    #[test]
    fn resample_rejects_bad_step() {
        assert!(resample_uniform("a", &[reading(0, 1.0)], &glucose(), Duration::zero()).is_err());
    }

    #[test]
    fn windows_count_and_stride() {
        let s = series_from(&(0..10).map(|v| 100.0 + v as f64).collect::<Vec<_>>());
        let cfg = WindowConfig {
            input_len: 4,
            horizon: 2,
            stride: 1,
            train_fraction: 1.0,
            min_observed: 0.5,
        };
        let one = make_windows(&[series_from(&[1.0; 6])], &cfg).unwrap();
        assert_eq!(one.train.len(), 1);
        let cfg8 = WindowConfig { ..cfg };
        let three = make_windows(&[series_from(&[1.0; 8])], &cfg8).unwrap();
        assert_eq!(three.train.len(), 3);
        let ds = make_windows(&[s], &WindowConfig { stride: 2, ..cfg }).unwrap();
        for pair in ds.train.windows(2) {
            assert_eq!(pair[1].start - pair[0].start, 2);
        }
    }

    #[test]
    fn gaps_in_every_target_drop_everything() {
        let mut s = series_from(&[100.0; 8]);
        for t in [4usize, 5, 6, 7] {
            s.mask[t][0] = false;
            s.values[t][0] = f64::NAN;
        }
        let cfg = WindowConfig {
            input_len: 3,
            horizon: 2,
            stride: 1,
            train_fraction: 1.0,
            min_observed: 0.5,
        };
        let ds = make_windows(&[s], &cfg).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 0);
        assert_eq!(ds.drops.gaps, ds.drops.candidates);
        assert_eq!(ds.drops.candidates, 4);
    }

    #[test]
    fn split_has_no_overlap() {
        let s = series_from(&(0..100).map(|v| 100.0 + (v as f64).sin()).collect::<Vec<_>>());
        let cfg = WindowConfig {
            input_len: 6,
            horizon: 3,
            stride: 1,
            train_fraction: 0.8,
            min_observed: 0.5,
        };
        let ds = make_windows(&[s], &cfg).unwrap();
        let last_train_end = ds.train.iter().map(|w| w.start + 9).max().unwrap();
        let first_test = ds.test.iter().map(|w| w.start).min().unwrap();
        assert!(last_train_end <= first_test);
        assert_eq!(ds.drops.boundary, 8);
    }

    #[test]
    fn normalization_round_trip_and_moments() {
        let vals: Vec<f64> = (0..60).map(|v| 120.0 + 30.0 * (v as f64 * 0.3).sin()).collect();
        let s = series_from(&vals);
        let cfg = WindowConfig {
            input_len: 5,
            horizon: 5,
            stride: 10,
            train_fraction: 0.5,
            min_observed: 0.5,
        };
        let raw = make_windows(&[s], &cfg).unwrap();
        let ds = normalize(&raw).unwrap();
        let stats = ds.stats.as_ref().unwrap();
        // Training windows tile the first 30 steps exactly once.
        let zs: Vec<f64> = ds.train.iter().flat_map(|w| w.x.iter().chain(&w.y).map(|r| r[0])).collect();
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        for (a, b) in raw.test.iter().zip(&ds.test) {
            let back = stats.denormalize_rows(&b.y);
            for (r, s) in a.y.iter().zip(&back) {
                assert!((r[0] - s[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_test_channel_still_normalizes() {
        let mut vals: Vec<f64> = (0..40).map(|v| 100.0 + v as f64).collect();
        vals[30..].fill(90.0);
        let cfg = WindowConfig {
            input_len: 3,
            horizon: 2,
            stride: 1,
            train_fraction: 0.7,
            min_observed: 0.5,
        };
        let ds = normalize(&make_windows(&[series_from(&vals)], &cfg).unwrap()).unwrap();
        assert!(ds.test.iter().flat_map(|w| w.x.iter().flatten()).all(|v| v.is_finite()));
        let flat = make_windows(&[series_from(&[100.0; 40])], &cfg).unwrap();
        assert!(normalize(&flat).is_err());
    }

    #[test]
    fn stats_ignore_test_values() {
        let vals: Vec<f64> = (0..50).map(|v| 100.0 + (v % 7) as f64).collect();
        let cfg = WindowConfig {
            input_len: 4,
            horizon: 2,
            stride: 1,
            train_fraction: 0.6,
            min_observed: 0.5,
        };
        let a = training_stats(&make_windows(&[series_from(&vals)], &cfg).unwrap()).unwrap();
        let mut perturbed = vals.clone();
        for v in &mut perturbed[30..] {
            *v += 55.0;
        }
        let b = training_stats(&make_windows(&[series_from(&perturbed)], &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_is_deterministic_with_sixty_step_gap() {
        let a = synth_generate(1440, 7, 0.5).unwrap();
        let b = synth_generate(1440, 7, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask3().iter().filter(|m| !**m).count(), 60);
        assert!(synth_generate(119, 7, 0.5).is_err());
    }

    #[test]
    fn noise_free_synth_is_exact_sine() {
        let s = synth_generate(240, 1, 0.0).unwrap();
        for (t, v) in s.series[0].iter().enumerate() {
            assert_eq!(*v, (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin());
        }
    }
}
