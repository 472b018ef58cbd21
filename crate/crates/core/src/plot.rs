//! Dependency-free SVG plots: multi-series line charts and stepwise
//! dendrograms. Good enough for inspecting pipeline outputs, not a charting
//! library.

use std::fmt::Write as _;
use std::path::Path;

use crate::cluster::Dendrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 460.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn finite_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Multi-series line chart; one polyline per `(label, points)` pair.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (x_lo, x_hi) = finite_bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y_lo, y_hi) = finite_bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let sx = (WIDTH - 2.0 * MARGIN) / (x_hi - x_lo);
    let sy = (HEIGHT - 2.0 * MARGIN) / (y_hi - y_lo);
    let px = |x: f64| MARGIN + (x - x_lo) * sx;
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) * sy;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    // axis extents
    for (v, x, y, anchor) in [
        (x_lo, px(x_lo), HEIGHT - MARGIN + 16.0, "middle"),
        (x_hi, px(x_hi), HEIGHT - MARGIN + 16.0, "middle"),
        (y_lo, MARGIN - 6.0, py(y_lo), "end"),
        (y_hi, MARGIN - 6.0, py(y_hi), "end"),
    ] {
        let _ = write!(
            svg,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"10\" text-anchor=\"{anchor}\" font-family=\"sans-serif\">{v:.3}</text>"
        );
    }

    for (k, (label, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        for (x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.trim_end()
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\" font-family=\"sans-serif\">{}</text>",
            WIDTH - MARGIN - 150.0,
            MARGIN + 16.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Stepwise dendrogram: leaves evenly spaced on the x axis, merge heights on
/// the y axis.
pub fn dendrogram_svg<T: Scalar>(dendrogram: &Dendrogram<T>) -> String {
    let n = dendrogram.n_leaves();
    let max_h = dendrogram
        .merges
        .iter()
        .map(|m| m.height.to_f64_lossy())
        .fold(1e-12, f64::max);
    let px = |x: f64| MARGIN + x * (WIDTH - 2.0 * MARGIN) / (n.max(2) - 1) as f64;
    let py = |h: f64| HEIGHT - MARGIN - (h / max_h) * (HEIGHT - 2.0 * MARGIN);

    // x position and current height per cluster label
    let mut pos: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, 0.0)).collect();
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    for (i, id) in dendrogram.leaf_ids.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(60 {:.1} {:.1})\">{}</text>",
            px(i as f64),
            HEIGHT - MARGIN + 12.0,
            px(i as f64),
            HEIGHT - MARGIN + 12.0,
            escape(id)
        );
    }
    for merge in &dendrogram.merges {
        let (xa, ha) = pos[merge.a];
        let (xb, hb) = pos[merge.b];
        let h = merge.height.to_f64_lossy();
        let _ = write!(
            svg,
            "<path d=\"M {:.2} {:.2} V {:.2} H {:.2} V {:.2}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\"/>",
            px(xa),
            py(ha),
            py(h),
            px(xb),
            py(hb)
        );
        pos.push(((xa + xb) / 2.0, h));
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">merge cost (max {max_h:.3})</text>",
        WIDTH / 2.0
    );
    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
