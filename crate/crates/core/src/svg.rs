//! Self-contained SVG charts: multi-series line plots and Clarke Error Grid
//! scatter plots. Output depends only on the input numbers.

use std::fmt::Write;

use crate::metrics::{clarke_zone, ClarkeZone};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A named series of `(x, y)` points; a non-finite `y` breaks the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        Self::new(name, values.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Optional footnote under the plot area.
    pub note: Option<String>,
}

/// Roughly five "nice" tick positions spanning `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64], y_ticks: &[f64]) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for &x in x_ticks {
        let px = num(f.px(x));
        let _ = writeln!(out, r##"<line x1="{px}" y1="{b}" x2="{px}" y2="{}" stroke="black"/><text x="{px}" y="{}" text-anchor="middle">{}</text>"##, b + 5.0, b + 18.0, num(x));
    }
    for &y in y_ticks {
        let py = num(f.py(y));
        let _ = writeln!(out, r##"<line x1="{}" y1="{py}" x2="{l}" y2="{py}" stroke="black"/><line x1="{l}" y1="{py}" x2="{r}" y2="{py}" stroke="#e0e0e0"/><text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{}</text>"##, l - 5.0, l - 8.0, num(y));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[(String, &str)]) {
    for (i, (name, color)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{y}" dominant-baseline="middle">{}</text>"#,
            x + 20.0,
            x + 26.0,
            escape(name)
        );
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

pub fn line_chart(chart: &LineChart) -> String {
    let all = || chart.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (ylo, yhi) = bounds(all().map(|p| p.1));
    let pad = 0.05 * (yhi - ylo);
    let f = Frame {
        x0,
        x1,
        y0: ylo - pad,
        y1: yhi + pad,
    };
    let mut out = String::new();
    open(&mut out, &chart.title);
    axes(&mut out, &f, &chart.x_label, &chart.y_label, &ticks(f.x0, f.x1), &ticks(f.y0, f.y1));
    let mut names = Vec::new();
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="5 3""# } else { "" };
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, out: &mut String| {
            if run.len() > 1 {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                    run.join(" ")
                );
            } else if let Some(p) = run.first() {
                let (cx, cy) = p.split_once(',').expect("point pair");
                let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="1.5" fill="{color}"/>"#);
            }
            run.clear();
        };
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                run.push(format!("{},{}", num(f.px(x)), num(f.py(y))));
            } else {
                flush(&mut run, &mut out);
            }
        }
        flush(&mut run, &mut out);
        names.push((s.name.clone(), color));
    }
    legend(&mut out, &names);
    if let Some(note) = &chart.note {
        let _ = writeln!(out, r#"<text x="{LEFT}" y="{}" font-size="10">{}</text>"#, HEIGHT - 2.0, escape(note));
    }
    out.push_str("</svg>\n");
    out
}

const GRID_MAX: f64 = 400.0;

/// Zone boundary segments of the Clarke Error Grid on a 0–400 mg/dL square.
pub const CLARKE_BOUNDARIES: [[(f64, f64); 2]; 13] = [
    [(0.0, 0.0), (400.0, 400.0)],
    [(0.0, 70.0), (175.0 / 3.0, 70.0)],
    [(175.0 / 3.0, 70.0), (400.0 / 1.2, 400.0)],
    [(70.0, 84.0), (70.0, 400.0)],
    [(0.0, 180.0), (70.0, 180.0)],
    [(70.0, 180.0), (290.0, 400.0)],
    [(70.0, 0.0), (70.0, 56.0)],
    [(70.0, 56.0), (400.0, 320.0)],
    [(180.0, 0.0), (180.0, 70.0)],
    [(180.0, 70.0), (400.0, 70.0)],
    [(240.0, 70.0), (240.0, 180.0)],
    [(240.0, 180.0), (400.0, 180.0)],
    [(130.0, 0.0), (180.0, 70.0)],
];

const ZONE_LABELS: [(&str, f64, f64); 10] = [
    ("A", 30.0, 15.0),
    ("A", 370.0, 330.0),
    ("B", 280.0, 370.0),
    ("B", 300.0, 220.0),
    ("C", 160.0, 370.0),
    ("C", 160.0, 15.0),
    ("D", 30.0, 140.0),
    ("D", 370.0, 120.0),
    ("E", 30.0, 370.0),
    ("E", 370.0, 30.0),
];

fn zone_color(z: ClarkeZone) -> &'static str {
    match z {
        ClarkeZone::A => "#2ca02c",
        ClarkeZone::B => "#1f77b4",
        ClarkeZone::C => "#ff7f0e",
        ClarkeZone::D => "#d62728",
        ClarkeZone::E => "#7b1fa2",
    }
}

/// Scatter of `(reference, predicted)` pairs over the zone boundaries.
/// Points beyond 400 mg/dL are clamped to the frame edge.
pub fn clarke_chart(title: &str, pairs: &[(f64, f64)], pct: Option<[f64; 5]>) -> String {
    let f = Frame {
        x0: 0.0,
        x1: GRID_MAX,
        y0: 0.0,
        y1: GRID_MAX,
    };
    let mut out = String::new();
    open(&mut out, title);
    let t: Vec<f64> = (0..=8).map(|k| 50.0 * k as f64).collect();
    axes(&mut out, &f, "Reference glucose (mg/dL)", "Predicted glucose (mg/dL)", &t, &t);
    for &(r, p) in pairs {
        let zone = clarke_zone(r, p.max(1.0)).unwrap_or(ClarkeZone::E);
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="1.6" fill="{}" fill-opacity="0.6"/>"#,
            num(f.px(r.clamp(0.0, GRID_MAX))),
            num(f.py(p.clamp(0.0, GRID_MAX))),
            zone_color(zone)
        );
    }
    for [(ax, ay), (bx, by)] in CLARKE_BOUNDARIES {
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="1"/>"#,
            num(f.px(ax)),
            num(f.py(ay)),
            num(f.px(bx)),
            num(f.py(by))
        );
    }
    for (label, x, y) in ZONE_LABELS {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="16" font-weight="bold" text-anchor="middle" dominant-baseline="middle">{label}</text>"#,
            num(f.px(x)),
            num(f.py(y))
        );
    }
    let names: Vec<(String, &str)> = ClarkeZone::ALL
        .iter()
        .map(|z| {
            let label = match pct {
                Some(p) => format!("Zone {z}: {:.2}%", p[z.index()]),
                None => format!("Zone {z}"),
            };
            (label, zone_color(*z))
        })
        .collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}
