//! Standalone SVG line charts.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

use crate::artifacts;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#ff7f0e", "#2ca02c", "#7f7f7f", "#9467bd", "#8c564b", "#e377c2"];

/// One line; separate segments leave gaps where data is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub segments: Vec<Vec<(f64, f64)>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(series: &[Series]) -> Option<((f64, f64), (f64, f64))> {
    let mut it = series.iter().flat_map(|s| s.segments.iter().flatten());
    let &(x0, y0) = it.next()?;
    let init = ((x0, x0), (y0, y0));
    Some(it.fold(init, |((xl, xh), (yl, yh)), &(x, y)| ((xl.min(x), xh.max(x)), (yl.min(y), yh.max(y)))))
}

/// Renders the series on shared axes with a legend.
pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let ((x_lo, mut x_hi), (mut y_lo, mut y_hi)) = bounds(series).unwrap_or(((0.0, 1.0), (0.0, 1.0)));
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = (y_hi - y_lo) * 0.05;
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (x_lo + f * (x_hi - x_lo), y_lo + f * (y_hi - y_lo));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(x), HEIGHT - MARGIN + 16.0, tick(x));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 6.0, sy(y) + 4.0, tick(y));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<g class="series" data-label="{}" stroke="{color}" fill="none" stroke-width="1.5">"#, escape(&s.label));
        for seg in &s.segments {
            let pts: Vec<String> = seg.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(out, r#"<polyline points="{}"/>"#, pts.join(" "));
        }
        let _ = writeln!(out, "</g>");
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN - 150.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[derive(Deserialize)]
struct PredictionRow {
    round: usize,
    point: usize,
    prediction: String,
    truth: String,
}

fn first_value(cell: &str) -> Option<f64> {
    cell.split(';').next().filter(|s| !s.is_empty()).and_then(|s| s.parse().ok())
}

/// Prediction-vs-truth chart of one device over `rounds`, read from a run
/// directory. Each prediction is drawn at the first point it forecasts.
pub fn prediction_chart(run_dir: &Path, device: &str, rounds: RangeInclusive<usize>) -> anyhow::Result<String> {
    let path = run_dir.join(artifacts::PREDICTIONS_DIR).join(format!("{device}.csv"));
    let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("no predictions for `{device}` at {}", path.display()))?;
    let rows = rdr.deserialize::<PredictionRow>().collect::<Result<Vec<_>, _>>()?;
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0);
    let picked: Vec<&PredictionRow> = rows.iter().filter(|r| rounds.contains(&r.round)).collect();
    if picked.is_empty() {
        bail!("no rounds in {}..={}; valid rounds are 1..={last}", rounds.start(), rounds.end());
    }
    let collect = |value: &dyn Fn(&PredictionRow) -> Option<f64>| {
        let mut segments = vec![Vec::new()];
        for r in &picked {
            match value(r) {
                Some(v) => segments.last_mut().unwrap().push((r.point as f64, v)),
                None if !segments.last().unwrap().is_empty() => segments.push(Vec::new()),
                None => {}
            }
        }
        segments.retain(|s| !s.is_empty());
        segments
    };
    // truths cover the latest O points, so the last entry is the reading at `point`
    let truth = collect(&|r| r.truth.rsplit(';').next().filter(|s| !s.is_empty()).and_then(|s| s.parse().ok()));
    let prediction = collect(&|r| first_value(&r.prediction));
    let series = [Series { label: "truth".into(), segments: truth }, Series { label: "prediction".into(), segments: prediction }];
    let title = format!("{device}: rounds {}-{}", rounds.start(), rounds.end().min(&last));
    Ok(render(&title, "data point", "reading", &series))
}

/// Smoothed-MSE comparison with one series per run.
pub fn smoothed_chart(runs: &[(String, &Path)]) -> anyhow::Result<String> {
    if runs.is_empty() {
        bail!("no runs to compare");
    }
    let mut series = Vec::with_capacity(runs.len());
    for (label, dir) in runs {
        let path = dir.join(artifacts::SMOOTHED_FILE);
        let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let end: f64 = rec.get(1).context("missing last_round")?.parse()?;
            let avg: f64 = rec.get(2).context("missing avg_mse")?.parse()?;
            points.push((end, avg));
        }
        series.push(Series { label: label.clone(), segments: vec![points] });
    }
    Ok(render("Smoothed average device MSE", "round", "MSE", &series))
}
