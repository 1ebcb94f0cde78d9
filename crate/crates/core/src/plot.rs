//! Standalone SVG charts for the CSV tables emitted by the toolkit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

type Column = Vec<Option<f64>>;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 30.0, 40.0, 60.0);
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Scatter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Half-width of a shaded band around each point.
    pub band: Option<Vec<f64>>,
    pub style: Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

impl Chart {
    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (i, &(px, py)) in s.points.iter().enumerate() {
                let b = s.band.as_ref().map_or(0.0, |b| b[i]);
                x = (x.0.min(px), x.1.max(px));
                y = (y.0.min(py - b), y.1.max(py + b));
            }
        }
        if !x.0.is_finite() {
            x = (0.0, 1.0);
            y = (0.0, 1.0);
        }
        if x.0 == x.1 {
            x = (x.0 - 0.5, x.1 + 0.5);
        }
        let y = self.y_range.unwrap_or_else(|| {
            let pad = ((y.1 - y.0) * 0.05).max(1e-6);
            (y.0 - pad, y.1 + pad)
        });
        (x, y)
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let (ml, mr, mt, mb) = MARGIN;
        let pw = WIDTH - ml - mr;
        let ph = HEIGHT - mt - mb;
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        for t in nice_ticks(x0, x1) {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#ddd"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"##,
                sx(t),
                mt,
                mt + ph,
                mt + ph + 16.0,
                t
            );
        }
        for t in nice_ticks(y0, y1) {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#ddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"##,
                ml,
                sy(t),
                ml + pw,
                ml - 6.0,
                sy(t) + 4.0,
                (t * 1e6).round() / 1e6
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0:.1}" text-anchor="middle" transform="rotate(-90 18 {0:.1})">{1}</text>"#,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if let Some(band) = &series.band {
                let upper = series.points.iter().zip(band).map(|(&(x, y), b)| (sx(x), sy(y + b)));
                let lower = series.points.iter().zip(band).rev().map(|(&(x, y), b)| (sx(x), sy(y - b)));
                let pts: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
            match series.style {
                Style::Line => {
                    let pts: Vec<String> =
                        series.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                        pts.join(" ")
                    );
                }
                Style::Scatter => {
                    for &(x, y) in &series.points {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.5"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                }
            }
            let ly = mt + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                ml + pw - 140.0,
                ly - 4.0,
                ml + pw - 122.0,
                ly,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn has(&self, names: &[&str]) -> bool {
        names.iter().all(|n| self.col(n).is_some())
    }

    /// Numeric column; empty cells read as `None`.
    fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.col(name).ok_or_else(|| Error::Data(format!("missing column {name}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(c).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse()
                    .map(Some)
                    .map_err(|_| Error::Data(format!("row {}: column {name} is not a number: {cell}", i + 2)))
            })
            .collect()
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { headers, rows })
}

fn series_from(name: &str, xs: &[Option<f64>], ys: &[Option<f64>], sd: Option<&[Option<f64>]>, style: Style) -> Option<Series> {
    let mut points = Vec::new();
    let mut band = Vec::new();
    for i in 0..xs.len() {
        if let (Some(x), Some(y)) = (xs[i], ys[i]) {
            points.push((x, y));
            band.push(sd.and_then(|s| s[i]).unwrap_or(0.0));
        }
    }
    (!points.is_empty()).then(|| Series {
        name: name.into(),
        points,
        band: sd.map(|_| band),
        style,
    })
}

/// Picks a chart for a CSV by its header: layer profiles, sweep accuracies,
/// binned resolution statistics or per-sample resolution records.
pub fn chart_for_csv(path: &Path) -> Result<Chart> {
    let t = read_table(path)?;
    let title = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if t.has(&["layer", "text", "text_sd", "image", "image_sd"]) {
        let layer = t.numbers("layer")?;
        let series = [("text color token", "text", "text_sd"), ("image tokens", "image", "image_sd")]
            .iter()
            .filter_map(|&(name, v, sd)| {
                let (v, sd) = (t.numbers(v).ok()?, t.numbers(sd).ok()?);
                series_from(name, &layer, &v, Some(&sd), Style::Line)
            })
            .collect();
        return Ok(Chart {
            title,
            x_label: "layer".into(),
            y_label: "summed |Δ attention|".into(),
            y_range: None,
            series,
        });
    }
    if t.has(&["layer", "kind", "accuracy"]) {
        let (layer, acc) = (t.numbers("layer")?, t.numbers("accuracy")?);
        let kc = t.col("kind").unwrap();
        let mut by_kind: BTreeMap<String, (Column, Column)> = BTreeMap::new();
        for (i, row) in t.rows.iter().enumerate() {
            let e = by_kind.entry(row[kc].clone()).or_default();
            e.0.push(layer[i]);
            e.1.push(acc[i]);
        }
        let series = by_kind
            .iter()
            .filter_map(|(k, (x, y))| series_from(k, x, y, None, Style::Line))
            .collect();
        return Ok(Chart {
            title,
            x_label: "layer".into(),
            y_label: "probe accuracy".into(),
            y_range: Some((0.0, 1.0)),
            series,
        });
    }
    if t.has(&["bin_lo", "bin_hi", "mean_strength", "var_strength"]) {
        let (lo, hi) = (t.numbers("bin_lo")?, t.numbers("bin_hi")?);
        let mid: Vec<Option<f64>> = lo.iter().zip(&hi).map(|(a, b)| Some((a.unwrap_or(0.0) + b.unwrap_or(0.0)) / 2.0)).collect();
        let sd: Vec<Option<f64>> = t.numbers("var_strength")?.iter().map(|v| v.map(f64::sqrt)).collect();
        let series = series_from("mean strength ± sd", &mid, &t.numbers("mean_strength")?, Some(&sd), Style::Line)
            .into_iter()
            .collect();
        return Ok(Chart {
            title,
            x_label: "resolution confidence".into(),
            y_label: "conflict strength".into(),
            y_range: None,
            series,
        });
    }
    if t.has(&["confidence", "conflict_strength"]) {
        let series = series_from(
            "samples",
            &t.numbers("confidence")?,
            &t.numbers("conflict_strength")?,
            None,
            Style::Scatter,
        )
        .into_iter()
        .collect();
        return Ok(Chart {
            title,
            x_label: "resolution confidence".into(),
            y_label: "conflict strength".into(),
            y_range: None,
            series,
        });
    }
    Err(Error::Data(format!(
        "{}: no chart for columns [{}]",
        path.display(),
        t.headers.join(", ")
    )))
}

pub fn plot_csv(csv_path: &Path, svg_path: &Path) -> Result<()> {
    let svg = chart_for_csv(csv_path)?.to_svg();
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))
}
