//! Minimal self-contained SVG line charts for the CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::cache::sha256_hex;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub reference: Option<f64>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Read a risk or predictive CSV into one series per rule (and sparsity level).
pub fn chart_from_csv(text: &str) -> Result<Chart> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let (y_col, group_col, y_label) = if let Some(i) = column(&headers, "risk") {
        (i, column(&headers, "rule"), "risk")
    } else if let Some(i) = column(&headers, "kl_risk") {
        (i, column(&headers, "estimator"), "KL risk")
    } else {
        bail!("expected a `risk` or `kl_risk` column");
    };
    let x_col = column(&headers, "r").context("expected an `r` column")?;
    let k_col = column(&headers, "k");
    let p_col = column(&headers, "p");
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut p = None;
    for rec in rdr.records() {
        let rec = rec?;
        let x: f64 = rec[x_col]
            .parse()
            .with_context(|| format!("bad r value `{}`", &rec[x_col]))?;
        let y: f64 = rec[y_col]
            .parse()
            .with_context(|| format!("bad risk value `{}`", &rec[y_col]))?;
        let mut name = group_col
            .map(|g| rec[g].to_string())
            .unwrap_or_else(|| "series".into());
        if let Some(k) = k_col.map(|k| &rec[k]).filter(|k| !k.is_empty()) {
            name = format!("{name} k={k}");
        }
        if let Some(pc) = p_col {
            p = rec[pc].parse::<f64>().ok();
        }
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        groups.entry(name).or_default().push((x, y));
    }
    if groups.is_empty() {
        bail!("no data rows");
    }
    let series = order
        .into_iter()
        .map(|n| Series {
            points: groups.remove(&n).unwrap_or_default(),
            name: n,
        })
        .collect();
    Ok(Chart {
        title: String::new(),
        x_label: "‖θ‖".into(),
        y_label: y_label.into(),
        series,
        reference: if y_label == "risk" { p } else { None },
    })
}

/// Round step for about `n` ticks over `span`.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(chart: &Chart, provenance: &str) -> String {
    let pts = chart.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some(r) = chart.reference {
        y0 = y0.min(r);
        y1 = y1.max(r);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 1.0 };
    y0 -= pad;
    y1 += pad;
    let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<!-- {} -->", escape(provenance).replace("--", "- -"));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let xs = nice_step(x1 - x0, 6.0);
    let mut t = (x0 / xs).ceil() * xs;
    while t <= x1 + 1e-9 * xs {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph,
            MARGIN_T + ph + 5.0,
            MARGIN_T + ph + 18.0,
            fmt_tick(t, xs)
        );
        t += xs;
    }
    let ys = nice_step(y1 - y0, 6.0);
    let mut t = (y0 / ys).ceil() * ys;
    while t <= y1 + 1e-9 * ys {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/><line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L - 5.0,
            MARGIN_L + pw,
            MARGIN_L - 8.0,
            y + 4.0,
            fmt_tick(t, ys)
        );
        t += ys;
    }
    if let Some(r) = chart.reference {
        let y = sy(r);
        let _ = writeln!(
            s,
            r#"<line class="reference" x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="6,4"/><text x="{:.2}" y="{:.2}" fill="gray">p = {r}</text>"#,
            MARGIN_L + pw,
            MARGIN_L + pw + 5.0,
            y + 4.0
        );
    }
    for (i, series) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&series.name)
        );
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = MARGIN_L + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&chart.y_label)
    );
    if !chart.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&chart.title)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10()).ceil() as usize
    };
    let v = if v.abs() < 1e-12 * step { 0.0 } else { v };
    format!("{v:.decimals$}")
}

/// Render `input` to `output`, optionally overriding the reference level.
pub fn plot_file(
    input: &Path,
    output: &Path,
    reference: Option<f64>,
    title: Option<&str>,
) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let text = String::from_utf8(bytes.clone()).context("input is not UTF-8")?;
    let mut chart = chart_from_csv(&text)?;
    if reference.is_some() {
        chart.reference = reference;
    }
    chart.title = title.map(String::from).unwrap_or_else(|| {
        input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let name = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let provenance = format!("data: {name} sha256={}", sha256_hex(&bytes));
    std::fs::write(output, render_svg(&chart, &provenance))
        .with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}
