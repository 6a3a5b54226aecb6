//! Scatter plots of 2-D samples as standalone SVG.

use std::fmt::Write;

use ndarray::Array2;

use crate::error::{CliError, Result};

pub const SIZE: f64 = 480.0;
pub const MARGIN: f64 = 20.0;

/// Pixel position of `(x, y)` for a viewport `[xmin, xmax, ymin, ymax]`.
pub fn to_pixels(x: f64, y: f64, limits: [f64; 4]) -> (f64, f64) {
    let [x0, x1, y0, y1] = limits;
    let span = SIZE - 2.0 * MARGIN;
    let px = MARGIN + (x - x0) / (x1 - x0) * span;
    let py = MARGIN + (y1 - y) / (y1 - y0) * span;
    (px, py)
}

/// One circle per sample inside a framed, clipped plot area.
pub fn scatter_svg(samples: &Array2<f64>, limits: [f64; 4]) -> Result<String> {
    if samples.ncols() != 2 {
        return Err(CliError::Data(format!(
            "scatter plots need 2-D samples, got {} columns",
            samples.ncols()
        )));
    }
    let [x0, x1, y0, y1] = limits;
    if !(x0 < x1 && y0 < y1) {
        return Err(CliError::Config(format!("invalid plot limits {limits:?}")));
    }
    let span = SIZE - 2.0 * MARGIN;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<defs><clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}"/></clipPath></defs>"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(s, r#"<g clip-path="url(#plot)" fill="green" fill-opacity="0.6">"#).unwrap();
    for row in samples.rows() {
        let (px, py) = to_pixels(row[0], row[1], limits);
        writeln!(s, r#"<circle cx="{px:.3}" cy="{py:.3}" r="1.5"/>"#).unwrap();
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Viewport enclosing all samples with 5% padding; `[-1, 1]²` when empty.
pub fn auto_limits(samples: &Array2<f64>) -> [f64; 4] {
    if samples.nrows() == 0 {
        return [-1.0, 1.0, -1.0, 1.0];
    }
    let bounds = |j: usize| {
        let col = samples.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-6);
        (lo - pad, hi + pad)
    };
    let (a, b) = bounds(0);
    let (c, d) = bounds(1);
    [a, b, c, d]
}
