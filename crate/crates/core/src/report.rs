//! Result tables, plot data and figures written by the command-line tool.
//!
//! Every file except `manifest.json` is a pure function of its inputs so a
//! rerun with the same seed reproduces it byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use crate::benchmark::{BenchmarkResults, HorizonEval};
use crate::error::{Error, Result};
use crate::metrics::{clarke_zone, ClarkeSummary, ClarkeZone};
use crate::svg::{clarke_chart, line_chart, LineChart, Series};
use crate::train::TrainTrace;

/// `m.mm ± s.ss`.
pub fn fmt_pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Human label for a horizon, e.g. `30 min` or `1 h`.
pub fn horizon_label(steps: usize, step_minutes: i64) -> String {
    let minutes = steps as i64 * step_minutes;
    if minutes >= 60 && minutes % 60 == 0 {
        format!("{} h", minutes / 60)
    } else {
        format!("{minutes} min")
    }
}

/// Markdown table with columns padded to equal width.
pub fn markdown_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(headers.to_vec());
    out.push_str(&format!(
        "|{}|\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    ));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub const METRICS: [&str; 3] = ["rmse", "mape", "nmape"];

fn metric(h: &HorizonEval, name: &str) -> (f64, f64) {
    match name {
        "rmse" => h.rmse,
        "mape" => h.mape,
        _ => h.nmape,
    }
}

/// `model,horizon_steps,metric,mean,std`, one row per successful model,
/// horizon and metric.
pub fn metrics_csv(res: &BenchmarkResults) -> String {
    let mut out = String::from("model,horizon_steps,metric,mean,std\n");
    for (model, eval) in res.succeeded() {
        for h in &eval.horizons {
            for m in METRICS {
                let (mean, std) = metric(h, m);
                out.push_str(&format!("{model},{},{m},{mean},{std}\n", h.horizon));
            }
        }
    }
    out
}

/// `model,horizon_steps,zone,mean,std` with zone percentages.
pub fn clarke_csv(res: &BenchmarkResults) -> String {
    let mut out = String::from("model,horizon_steps,zone,mean,std\n");
    for (model, eval) in res.succeeded() {
        for h in &eval.horizons {
            for z in ClarkeZone::ALL {
                out.push_str(&format!(
                    "{model},{},{z},{},{}\n",
                    h.horizon,
                    h.clarke_mean[z.index()],
                    h.clarke_std[z.index()]
                ));
            }
        }
    }
    out
}

/// Per-series scores behind the aggregated tables.
pub fn series_csv(res: &BenchmarkResults) -> String {
    let mut out = String::from("model,horizon_steps,series_id,rmse,mape,nmape,zone_a,zone_b,zone_c,zone_d,zone_e\n");
    for (model, eval) in res.succeeded() {
        for h in &eval.horizons {
            for s in &h.per_series {
                let p = s.clarke.pct;
                out.push_str(&format!(
                    "{model},{},{},{},{},{},{},{},{},{},{}\n",
                    h.horizon, s.series_id, s.rmse, s.mape, s.nmape, p[0], p[1], p[2], p[3], p[4]
                ));
            }
        }
    }
    out
}

pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("epoch,reco,pred,kl,total,val_total,max_grad_norm\n");
    for e in &trace.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.reco, e.pred, e.kl, e.total, e.val_total, e.max_grad_norm
        ));
    }
    out
}

/// `reference,predicted,zone` rows, predictions floored at 1 mg/dL for zoning.
pub fn clarke_points_csv(pairs: &[(f64, f64)]) -> Result<String> {
    let mut out = String::from("reference,predicted,zone\n");
    for &(r, p) in pairs {
        out.push_str(&format!("{r},{p},{}\n", clarke_zone(r, p.max(1.0))?));
    }
    Ok(out)
}

pub fn markdown_report(res: &BenchmarkResults, step_minutes: i64) -> String {
    let mut out = String::from("# Benchmark results\n\nValues are mean ± standard deviation across series.\n");
    for &h in &res.horizons {
        let label = horizon_label(h, step_minutes);
        let rows: Vec<Vec<String>> = res
            .succeeded()
            .filter_map(|(m, e)| e.at(h).map(|x| (m, x)))
            .map(|(m, x)| {
                vec![
                    m.to_string(),
                    fmt_pm(x.rmse.0, x.rmse.1),
                    fmt_pm(x.mape.0, x.mape.1),
                    fmt_pm(x.nmape.0, x.nmape.1),
                ]
            })
            .collect();
        out.push_str(&format!("\n## Forecast accuracy, {label} ({h} steps)\n\n"));
        out.push_str(&markdown_table(&["Model", "RMSE (mg/dL)", "MAPE (%)", "nMAPE (%)"], &rows));
    }
    for &h in &res.horizons {
        let label = horizon_label(h, step_minutes);
        let rows: Vec<Vec<String>> = res
            .succeeded()
            .filter_map(|(m, e)| e.at(h).map(|x| (m, x)))
            .map(|(m, x)| {
                let mut row = vec![m.to_string()];
                row.extend((0..5).map(|z| fmt_pm(x.clarke_mean[z], x.clarke_std[z])));
                row
            })
            .collect();
        out.push_str(&format!("\n## Clarke Error Grid zones (%), {label} ({h} steps)\n\n"));
        out.push_str(&markdown_table(&["Model", "A", "B", "C", "D", "E"], &rows));
    }
    let labels: Vec<String> = res.horizons.iter().map(|&h| horizon_label(h, step_minutes)).collect();
    let mut headers = vec!["Model"];
    headers.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = res
        .succeeded()
        .map(|(m, e)| {
            let mut row = vec![m.to_string()];
            row.extend(e.horizons.iter().map(|x| fmt_pm(x.nmape.0, x.nmape.1)));
            row
        })
        .collect();
    out.push_str("\n## nMAPE (%) by prediction horizon\n\n");
    out.push_str(&markdown_table(&headers, &rows));

    let rows: Vec<Vec<String>> = res
        .succeeded()
        .filter_map(|(m, e)| e.trace.as_ref().map(|t| (m, e, t)))
        .map(|(m, e, t)| {
            vec![
                m.to_string(),
                t.epochs.len().to_string(),
                e.epochs_to_converge.map_or("-".into(), |c| c.to_string()),
                t.epochs.last().map_or("-".into(), |r| format!("{:.4}", r.val_total)),
            ]
        })
        .collect();
    if !rows.is_empty() {
        out.push_str("\n## Training convergence\n\n");
        out.push_str("Epochs to converge is the first epoch whose validation loss is within 1% of the run's minimum.\n\n");
        out.push_str(&markdown_table(
            &["Model", "Epochs", "Epochs to converge", "Final validation loss"],
            &rows,
        ));
    }
    let fallbacks: Vec<String> = res
        .succeeded()
        .filter(|(_, e)| e.arima_fallbacks > 0)
        .map(|(m, e)| format!("- {m}: {} test windows fell back to forward fill (singular fit)\n", e.arima_fallbacks))
        .collect();
    if !fallbacks.is_empty() {
        out.push_str("\n## Notes\n\n");
        out.push_str(&fallbacks.concat());
    }
    let failures = res.failures();
    if !failures.is_empty() {
        out.push_str("\n## Failed models\n\n");
        for (m, msg) in failures {
            out.push_str(&format!("- {m}: {msg}\n"));
        }
    }
    out
}

/// Validation loss per epoch for every trained model.
pub fn convergence_svg(res: &BenchmarkResults) -> Option<String> {
    let series: Vec<Series> = res
        .succeeded()
        .filter_map(|(m, e)| e.trace.as_ref().map(|t| (m, t)))
        .map(|(m, t)| {
            Series::new(
                m.name(),
                t.epochs.iter().map(|r| (r.epoch as f64, r.val_total)).collect(),
            )
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    Some(line_chart(&LineChart {
        title: "Validation loss per epoch".into(),
        x_label: "Epoch".into(),
        y_label: "Validation loss (normalized units)".into(),
        series,
        note: Some("Converged epoch: first epoch within 1% of the minimum validation loss.".into()),
    }))
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

/// Write every deterministic benchmark artifact into `dir`.
pub fn write_benchmark(dir: &Path, res: &BenchmarkResults, step_minutes: i64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write(dir, "metrics.csv", &metrics_csv(res), &mut written)?;
    write(dir, "clarke.csv", &clarke_csv(res), &mut written)?;
    write(dir, "series_metrics.csv", &series_csv(res), &mut written)?;
    write(dir, "tables.md", &markdown_report(res, step_minutes), &mut written)?;
    let label = horizon_label(res.scatter_horizon, step_minutes);
    for (model, eval) in res.succeeded() {
        let slug = model.slug();
        if let Some(trace) = &eval.trace {
            write(dir, &format!("trace_{slug}.csv"), &trace_csv(trace), &mut written)?;
        }
        write(dir, &format!("clarke_points_{slug}.csv"), &clarke_points_csv(&eval.scatter)?, &mut written)?;
        let pct = eval.at(res.scatter_horizon).map(|h| h.clarke_mean);
        let svg = clarke_chart(&format!("{model}: Clarke Error Grid, {label} horizon"), &eval.scatter, pct);
        write(dir, &format!("clarke_{slug}.svg"), &svg, &mut written)?;
    }
    if let Some(svg) = convergence_svg(res) {
        write(dir, "convergence.svg", &svg, &mut written)?;
    }
    Ok(written)
}

/// Read `reference,predicted` pairs; column names `reference`/`ref` and
/// `predicted`/`pred` are accepted. Errors carry the 1-based file line.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let (ri, pi) = match (find(&["reference", "ref"]), find(&["predicted", "pred"])) {
        (Some(r), Some(p)) => (r, p),
        _ => return Err(parse_err(1, "header must name reference and predicted columns".into())),
    };
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid {what} value {raw:?}")))
        };
        let r = field(ri, "reference")?;
        if r <= 0.0 {
            return Err(parse_err(line, format!("reference must be positive, got {r}")));
        }
        pairs.push((r, field(pi, "predicted")?));
    }
    if pairs.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(pairs)
}

/// Zone summary for raw pairs with predictions floored at 1 mg/dL.
pub fn summarize_pairs(pairs: &[(f64, f64)]) -> Result<ClarkeSummary> {
    let r: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let p: Vec<f64> = pairs.iter().map(|p| p.1.max(1.0)).collect();
    ClarkeSummary::from_pairs(&r, &p)
}

pub fn clarke_summary_csv(s: &ClarkeSummary) -> String {
    let mut out = String::from("zone,percent\n");
    for z in ClarkeZone::ALL {
        out.push_str(&format!("{z},{}\n", s.get(z)));
    }
    out
}

/// Three synthetic series on one plot, with the masked span of the third
/// left blank.
pub fn synth_series_svg(series: &[Vec<f64>; 3], mask3: &[bool]) -> String {
    let ts3: Vec<f64> = series[2]
        .iter()
        .zip(mask3)
        .map(|(v, m)| if *m { *v } else { f64::NAN })
        .collect();
    line_chart(&LineChart {
        title: "Synthetic series".into(),
        x_label: "Time step".into(),
        y_label: "Value".into(),
        series: vec![
            Series::from_values("ts1 (period 12)", &series[0]),
            Series::from_values("ts2 (period 6)", &series[1]),
            Series::from_values("ts3 (period 4, masked)", &ts3),
        ],
        note: None,
    })
}

/// Third series before and (optionally) after imputation, zoomed on the
/// masked span with some context either side.
pub fn synth_imputation_svg(truth: &[f64], mask3: &[bool], imputed: Option<&[f64]>) -> String {
    let first = mask3.iter().position(|m| !m).unwrap_or(0);
    let last = mask3.iter().rposition(|m| !m).unwrap_or(truth.len().saturating_sub(1));
    let lo = first.saturating_sub(40);
    let hi = (last + 41).min(truth.len());
    let span = |v: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> { (lo..hi).map(|i| (i as f64, v(i))).collect() };
    let mut series = vec![
        Series::new("ts3 observed", span(&|i| if mask3[i] { truth[i] } else { f64::NAN })),
        Series {
            dashed: true,
            ..Series::new("ts3 held-out truth", span(&|i| if mask3[i] { f64::NAN } else { truth[i] }))
        },
    ];
    if let Some(imp) = imputed {
        series.push(Series::new("ts3 after imputation", span(&|i| imp[i])));
    }
    line_chart(&LineChart {
        title: if imputed.is_some() {
            "ts3 before and after imputation".into()
        } else {
            "ts3 with the masked span".into()
        },
        x_label: "Time step".into(),
        y_label: "Value".into(),
        series,
        note: None,
    })
}
