//! SVG renderings of the CSV artifacts. Every number shown comes from the
//! input file.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{read_metrics, Phase, METRICS_HEADER, Q_TRACE_HEADER, SIMILARITY_SUMMARY_HEADER};
use crate::diagnostics::{percentile, read_csv_table, CsvTable};
use crate::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const MAX_CELLS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    SuccessCurve,
    Metrics,
    Heatmap,
    QTrace,
    SimilaritySummary,
    Histogram,
    Field,
}

fn detect(table: &CsvTable) -> Result<PlotKind> {
    let h: Vec<&str> = table.headers.iter().map(String::as_str).collect();
    let kind = if h.contains(&"success_iqm") {
        PlotKind::SuccessCurve
    } else if h == METRICS_HEADER {
        PlotKind::Metrics
    } else if h == Q_TRACE_HEADER {
        PlotKind::QTrace
    } else if h == SIMILARITY_SUMMARY_HEADER {
        PlotKind::SimilaritySummary
    } else if h == ["dim", "bin", "lo", "hi", "mass"] {
        PlotKind::Histogram
    } else if h == ["i", "j", "a_x", "a_y", "q", "dq_dx", "dq_dy"] {
        PlotKind::Field
    } else if !h.is_empty() && h.iter().enumerate().all(|(k, c)| *c == format!("c{k}")) {
        PlotKind::Heatmap
    } else {
        return Err(Error::Parse {
            path: table.path.clone(),
            line: 1,
            msg: format!("unrecognized column layout {h:?}"),
        });
    };
    Ok(kind)
}

/// Renders `input` to `output`, choosing the figure from the header.
pub fn plot_csv(input: &Path, output: &Path) -> Result<PlotKind> {
    let table = read_csv_table(input)?;
    if table.rows.is_empty() {
        return Err(Error::EmptyPlot(input.display().to_string()));
    }
    let kind = detect(&table)?;
    let title = input
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let svg = match kind {
        PlotKind::SuccessCurve => success_curve(&table, &title)?,
        PlotKind::Metrics => metrics_plot(input, &title)?,
        PlotKind::Heatmap => heatmap(&table, &title)?,
        PlotKind::QTrace => q_trace_plot(&table, &title)?,
        PlotKind::SimilaritySummary => {
            let x = column(&table, "step")?;
            let y = column(&table, "mean_abs")?;
            let mut c = Canvas::new(&title, "gradient step", "mean |clipped dot|", bounds(&x), bounds(&y));
            c.polyline(&x, &y, "#1f77b4", 2.0);
            c.finish()
        }
        PlotKind::Histogram => histogram_plot(&table, &title)?,
        PlotKind::Field => field_plot(&table, &title)?,
    };
    std::fs::write(output, svg).map_err(|e| Error::io(output, e))?;
    Ok(kind)
}

fn column(table: &CsvTable, name: &str) -> Result<Vec<f64>> {
    Ok(table.numeric_column(name)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let finite = v.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn merge(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.min(b.0), a.1.max(b.1))
}

struct Canvas {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = write!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = write!(body, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let _ = write!(
            body,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 10.0,
            escape(xlabel)
        );
        let _ = write!(
            body,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
        let _ = write!(
            body,
            r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
        );
        for (v, px) in [(x.0, x0), (x.1, x1)] {
            let _ = write!(body, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, y0 + 15.0, tick(v));
        }
        for (v, py) in [(y.0, y0), (y.1, y1)] {
            let _ = write!(body, r#"<text x="{}" y="{py}" text-anchor="end">{}</text>"#, x0 - 4.0, tick(v));
        }
        Self { body, x, y }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn polyline(&mut self, xs: &[f64], ys: &[f64], color: &str, width: f64) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = write!(
            self.body,
            r#"<polyline points="{}" stroke="{color}" stroke-width="{width}" fill="none"/>"#,
            pts.join(" ")
        );
    }

    fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: &str) {
        let mut pts: Vec<String> = Vec::new();
        for (&x, &y) in xs.iter().zip(hi) {
            pts.push(format!("{:.2},{:.2}", self.px(x), self.py(y)));
        }
        for (&x, &y) in xs.iter().zip(lo).rev() {
            pts.push(format!("{:.2},{:.2}", self.px(x), self.py(y)));
        }
        let _ = write!(
            self.body,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="none"/>"#,
            pts.join(" ")
        );
    }

    fn hline(&mut self, y: f64, color: &str, label: &str) {
        let (x0, x1, py) = (MARGIN, W - MARGIN, self.py(y));
        let _ = write!(
            self.body,
            r#"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="{color}" stroke-dasharray="6 4"/><text x="{x1}" y="{:.2}" text-anchor="end" fill="{color}">{}</text>"#,
            py - 4.0,
            escape(label)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = write!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const SEED_COLORS: [&str; 6] = ["#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94"];

fn success_curve(table: &CsvTable, title: &str) -> Result<String> {
    let x = column(table, "episode_end")?;
    let y = column(table, "success_iqm")?;
    let lo = column(table, "success_lo")?;
    let hi = column(table, "success_hi")?;
    let mut c = Canvas::new(title, "episode", "success rate (IQM)", bounds(&x), (0.0, 1.0));
    for (k, h) in table.headers.iter().filter(|h| h.ends_with("_success")).enumerate() {
        let s = column(table, h)?;
        c.polyline(&x, &s, SEED_COLORS[k % SEED_COLORS.len()], 1.0);
    }
    if lo.iter().all(|v| v.is_finite()) {
        c.band(&x, &lo, &hi, "#1f77b4");
    }
    c.polyline(&x, &y, "#1f77b4", 2.5);
    Ok(c.finish())
}

fn metrics_plot(path: &Path, title: &str) -> Result<String> {
    let rows = read_metrics(path)?;
    let online: Vec<f64> = rows
        .iter()
        .filter(|r| r.phase == Phase::Online)
        .map(|r| f64::from(u8::from(r.success == Some(true))))
        .collect();
    if !online.is_empty() {
        let rates: Vec<f64> = online.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let x: Vec<f64> = (0..rates.len()).map(|k| ((k + 1) * 10).min(online.len()) as f64).collect();
        let mut c = Canvas::new(title, "episode", "training success (window 10)", bounds(&x), (0.0, 1.0));
        c.polyline(&x, &rates, "#1f77b4", 2.0);
        return Ok(c.finish());
    }
    let offline: Vec<_> = rows.iter().filter(|r| r.phase == Phase::Offline).collect();
    if offline.is_empty() {
        return Err(Error::EmptyPlot(path.display().to_string()));
    }
    let x: Vec<f64> = offline.iter().map(|r| r.index as f64).collect();
    let td: Vec<f64> = offline.iter().map(|r| r.losses.td).collect();
    let critic: Vec<f64> = offline.iter().map(|r| r.losses.critic).collect();
    let bc: Vec<f64> = offline.iter().map(|r| r.losses.bc).collect();
    let y = merge(merge(bounds(&td), bounds(&critic)), bounds(&bc));
    let mut c = Canvas::new(title, "gradient step", "loss (td blue, critic orange, bc green)", bounds(&x), y);
    c.polyline(&x, &td, "#1f77b4", 2.0);
    c.polyline(&x, &critic, "#ff7f0e", 2.0);
    c.polyline(&x, &bc, "#2ca02c", 2.0);
    Ok(c.finish())
}

/// Diverging colormap that saturates at the clip ceiling.
fn diverging(v: f64, scale: f64) -> String {
    let t = (v / scale).clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

fn heatmap(table: &CsvTable, title: &str) -> Result<String> {
    let m = table.matrix()?;
    let n = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let cells = n.max(cols).min(MAX_CELLS);
    let (rb, cb) = (n.div_ceil(cells), cols.div_ceil(cells));
    let (rn, cn) = (n.div_ceil(rb), cols.div_ceil(cb));
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut c = Canvas::new(title, "pair j", &format!("pair i (color saturates at {})", tick(scale)), (0.0, cols as f64), (0.0, n as f64));
    let (cw, ch) = ((W - 2.0 * MARGIN) / cn as f64, (H - 2.0 * MARGIN) / rn as f64);
    for bi in 0..rn {
        for bj in 0..cn {
            let mut acc = 0.0;
            let mut k = 0.0;
            for row in m.iter().skip(bi * rb).take(rb) {
                for v in row.iter().skip(bj * cb).take(cb) {
                    acc += v;
                    k += 1.0;
                }
            }
            c.rect(MARGIN + bj as f64 * cw, MARGIN + bi as f64 * ch, cw, ch, &diverging(acc / k, scale));
        }
    }
    Ok(c.finish())
}

fn q_trace_plot(table: &CsvTable, title: &str) -> Result<String> {
    let step = column(table, "step")?;
    let q = column(table, "q")?;
    let bound = column(table, "bound")?;
    let mut steps: Vec<f64> = step.clone();
    steps.dedup();
    let mut lo = Vec::new();
    let mut mid = Vec::new();
    let mut hi = Vec::new();
    for &s in &steps {
        let mut v: Vec<f64> = step.iter().zip(&q).filter(|(a, _)| **a == s).map(|(_, q)| *q).collect();
        v.sort_by(f64::total_cmp);
        lo.push(percentile(&v, 0.0));
        mid.push(percentile(&v, 0.5));
        hi.push(percentile(&v, 1.0));
    }
    let b = bound[0];
    let y = merge(merge(bounds(&lo), bounds(&hi)), (b, b));
    let mut c = Canvas::new(title, "gradient step", "probe Q (min, median, max)", bounds(&steps), y);
    c.band(&steps, &lo, &hi, "#ff7f0e");
    c.polyline(&steps, &mid, "#ff7f0e", 2.0);
    c.hline(b, "#d62728", "1/(1-gamma)");
    Ok(c.finish())
}

fn histogram_plot(table: &CsvTable, title: &str) -> Result<String> {
    let dim = column(table, "dim")?;
    let lo = column(table, "lo")?;
    let hi = column(table, "hi")?;
    let mass = column(table, "mass")?;
    let dims = dim.iter().fold(0.0f64, |a, &d| a.max(d)) as usize + 1;
    let top = mass.iter().fold(0.0f64, |a, &m| a.max(m)).max(1e-12);
    let mut c = Canvas::new(title, "action value", "frequency (one band per dimension)", (-1.0, 1.0), (0.0, dims as f64));
    let band_h = (H - 2.0 * MARGIN) / dims as f64;
    for k in 0..dim.len() {
        let d = dim[k] as usize;
        let (x0, x1) = (c.px(lo[k]), c.px(hi[k]));
        let h = mass[k] / top * band_h * 0.9;
        let base = H - MARGIN - d as f64 * band_h;
        c.rect(x0, base - h, (x1 - x0).max(0.5), h, SEED_COLORS[d % SEED_COLORS.len()]);
    }
    Ok(c.finish())
}

fn field_plot(table: &CsvTable, title: &str) -> Result<String> {
    let ax = column(table, "a_x")?;
    let ay = column(table, "a_y")?;
    let q = column(table, "q")?;
    let gx = column(table, "dq_dx")?;
    let gy = column(table, "dq_dy")?;
    let grid = (ax.len() as f64).sqrt().round().max(2.0);
    let (qlo, qhi) = bounds(&q);
    let mid = 0.5 * (qlo + qhi);
    let half = 0.5 * (qhi - qlo).max(1e-12);
    let gmax = gx.iter().zip(&gy).fold(0.0f64, |a, (x, y)| a.max(x.hypot(*y))).max(1e-12);
    let mut c = Canvas::new(title, "action x", "action y (arrows: dQ/da, color: Q)", (-1.0, 1.0), (-1.0, 1.0));
    let cell = (W - 2.0 * MARGIN) / grid;
    let cellh = (H - 2.0 * MARGIN) / grid;
    for k in 0..ax.len() {
        let (px, py) = (c.px(ax[k]), c.py(ay[k]));
        c.rect(px - cell / 2.0, py - cellh / 2.0, cell, cellh, &diverging(q[k] - mid, half));
    }
    for k in 0..ax.len() {
        let (px, py) = (c.px(ax[k]), c.py(ay[k]));
        let len = 0.45 * cell.min(cellh) / gmax;
        let (dx, dy) = (gx[k] * len, -gy[k] * len);
        let _ = write!(
            c.body,
            r#"<line x1="{px:.2}" y1="{py:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.2"/><circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#,
            px + dx,
            py + dy,
            px + dx,
            py + dy
        );
    }
    Ok(c.finish())
}
