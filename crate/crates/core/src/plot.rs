//! Deterministic SVG line plots with ±1 standard deviation bands.
//!
//! Output depends only on the input data: fixed 720×480 viewport, generic
//! font families, coordinates printed with two decimals, a fixed palette.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PADDING: f64 = 0.05;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
const DASHES: [&str; 3] = ["", "6,3", "2,2"];

/// One curve: `(x, mean, std)` points in increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Padded axis range; a zero-width range is widened to ±0.5.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        let p = (hi - lo) * PADDING;
        (lo - p, hi + p)
    }
}

/// Roughly five ticks on a 1-2-5 step.
fn nice_ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

fn fmt_tick(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Renders the series into an SVG document.
pub fn render_svg(style: &PlotStyle, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidParameter("nothing to plot".into()));
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    if all
        .clone()
        .any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite()))
    {
        return Err(Error::InvalidParameter("plot data must be finite".into()));
    }
    if style.log_x && all.clone().any(|p| p.0 <= 0.0) {
        return Err(Error::InvalidParameter(
            "log x axis needs positive x".into(),
        ));
    }
    let tx = |x: f64| if style.log_x { x.log10() } else { x };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in all.clone() {
        x0 = x0.min(tx(p.0));
        x1 = x1.max(tx(p.0));
        y0 = y0.min(p.1 - p.2);
        y1 = y1.max(p.1 + p.2);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&style.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );

    // y ticks
    let (yt, yd) = nice_ticks(y0, y1);
    for v in yt {
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(v, yd)
        );
    }
    // x ticks: the data grid if small, otherwise evenly spaced
    let mut xs: Vec<f64> = all.clone().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let xticks: Vec<(f64, String)> = if xs.len() <= 12 {
        xs.iter().map(|&x| (x, format!("{x}"))).collect()
    } else {
        let (t, dec) = nice_ticks(x0, x1);
        t.into_iter()
            .map(|v| {
                if style.log_x {
                    let x = 10f64.powf(v);
                    (x, format!("{x:.3e}"))
                } else {
                    (v, fmt_tick(v, dec))
                }
            })
            .collect()
    };
    for (x, label) in xticks {
        let px = sx(x);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            TOP,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&style.y_label)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = DASHES[(i / PALETTE.len()) % DASHES.len()];
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let mut band = String::new();
        for p in &ser.points {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 + p.2));
        }
        for p in ser.points.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 - p.2));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash_attr}/>"#,
            line.join(" ")
        );
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Which columns of a CSV to plot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotRequest {
    pub x: String,
    pub y: String,
    /// Columns whose values define one curve each; empty for a single curve.
    pub group: Vec<String>,
    /// Keep only rows where each column equals the given text.
    pub filter: Vec<(String, String)>,
    pub log_x: bool,
    pub title: String,
}

/// Numeric cells are shown in shortest form (`1.0000000000000001e-1` → `0.1`).
fn label_value(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => format!("{f}"),
        _ => v.to_string(),
    }
}

fn parse_cell(v: &str, col: &str, line: usize) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| Error::Parse {
        what: "csv cell",
        input: v.to_string(),
        reason: format!("column {col} on data row {line} is not a number"),
    })
}

/// Groups the rows of a CSV by `group`, averaging `y` over rows sharing `x`.
/// Curves keep the order in which their group first appears.
pub fn series_from_csv(text: &str, req: &PlotRequest) -> Result<Vec<Series>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| Error::Parse {
        what: "csv",
        input: String::new(),
        reason: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown column {name:?}")))
    };
    let xi = col(&req.x)?;
    let yi = col(&req.y)?;
    let gi: Vec<usize> = req.group.iter().map(|g| col(g)).collect::<Result<_>>()?;
    let fi: Vec<(usize, &str)> = req
        .filter
        .iter()
        .map(|(c, v)| Ok((col(c)?, v.as_str())))
        .collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if fi.iter().any(|&(c, v)| rec.get(c) != Some(v)) {
            continue;
        }
        let x = parse_cell(rec.get(xi).unwrap_or(""), &req.x, line + 1)?;
        let y = parse_cell(rec.get(yi).unwrap_or(""), &req.y, line + 1)?;
        let key = if gi.is_empty() {
            req.y.clone()
        } else {
            gi.iter()
                .zip(&req.group)
                .map(|(&c, name)| format!("{name}={}", label_value(rec.get(c).unwrap_or(""))))
                .collect::<Vec<_>>()
                .join(", ")
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        // total order on x via the sign-adjusted bit pattern
        let bits = x.to_bits();
        let sort_key = if x.is_sign_negative() {
            !bits
        } else {
            bits | (1 << 63)
        };
        groups
            .entry(key)
            .or_default()
            .entry(sort_key)
            .or_insert_with(|| (x, Vec::new()))
            .1
            .push(y);
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let points = groups[&label]
                .values()
                .map(|(x, ys)| {
                    let (m, s) = crate::experiment::mean_std(ys);
                    (*x, m, s)
                })
                .collect();
            Series { label, points }
        })
        .collect())
}

/// `series_from_csv` followed by `render_svg`, labelling axes with the column names.
pub fn plot_csv(text: &str, req: &PlotRequest) -> Result<String> {
    let series = series_from_csv(text, req)?;
    if series.is_empty() {
        return Err(Error::InvalidParameter("no rows left to plot".into()));
    }
    let style = PlotStyle {
        title: req.title.clone(),
        x_label: req.x.clone(),
        y_label: req.y.clone(),
        log_x: req.log_x,
    };
    render_svg(&style, &series)
}
