//! SVG rendering of a fitted curve over its data.
//!
//! Layers, back to front: the uncertainty tube (the curve polyline stroked
//! at width 2*rho with round caps and joins), the posterior mean curve, and
//! the data points drawn as triangles. Axes keep a uniform scale so circles
//! in data space stay circles on screen, with a 5% margin around the
//! combined bounding box. Coordinates are written with three decimals so a
//! rerun produces byte-identical output.

use electrogp::infer::CurveEstimate;
use nalgebra::DMatrix;

use crate::CliError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_FRAC: f64 = 0.05;

struct Frame {
    x_min: f64,
    y_min: f64,
    scale: f64,
    x_off: f64,
    y_off: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for (x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let pad = MARGIN_FRAC * (x_max - x_min).max(y_max - y_min).max(1e-9);
        x_min -= pad;
        x_max += pad;
        y_min -= pad;
        y_max += pad;
        let scale = (WIDTH / (x_max - x_min)).min(HEIGHT / (y_max - y_min));
        let x_off = 0.5 * (WIDTH - scale * (x_max - x_min));
        let y_off = 0.5 * (HEIGHT - scale * (y_max - y_min));
        Frame { x_min, y_min, scale, x_off, y_off }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = self.x_off + self.scale * (x - self.x_min);
        let sy = HEIGHT - (self.y_off + self.scale * (y - self.y_min));
        (sx, sy)
    }
}

fn path_data(frame: &Frame, vertices: &DMatrix<f64>) -> String {
    let mut d = String::new();
    for i in 0..vertices.nrows() {
        let (sx, sy) = frame.map(vertices[(i, 0)], vertices[(i, 1)]);
        if i == 0 {
            d.push_str(&format!("M {:.3} {:.3}", sx, sy));
        } else {
            d.push_str(&format!(" L {:.3} {:.3}", sx, sy));
        }
    }
    d
}

/// Renders the scene to a standalone SVG document. Only two-dimensional
/// data can be drawn; `rho` adds the uncertainty tube when present.
pub fn render_plot(
    data: &DMatrix<f64>,
    curve: &CurveEstimate,
    rho: Option<f64>,
) -> Result<String, CliError> {
    if data.ncols() != 2 || curve.vertices.ncols() != 2 {
        return Err(CliError::Usage(format!(
            "plot supports two-dimensional data only, got {} dimensions; \
             export the curve and band as CSV instead",
            data.ncols()
        )));
    }
    if let Some(r) = rho {
        if !r.is_finite() || r < 0.0 {
            return Err(CliError::Usage(format!("band radius must be nonnegative, got {}", r)));
        }
    }

    let frame = Frame::fit(
        (0..data.nrows())
            .map(|i| (data[(i, 0)], data[(i, 1)]))
            .chain((0..curve.vertices.nrows()).map(|i| (curve.vertices[(i, 0)], curve.vertices[(i, 1)]))),
    );

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = WIDTH as u32,
        h = HEIGHT as u32
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");

    if let Some(r) = rho {
        svg.push_str(&format!(
            "<path class=\"band\" d=\"{}\" fill=\"none\" stroke=\"#b8d4ea\" stroke-width=\"{:.3}\" \
             stroke-linecap=\"round\" stroke-linejoin=\"round\" opacity=\"0.85\"/>\n",
            path_data(&frame, &curve.vertices),
            2.0 * r * frame.scale
        ));
    }

    let mut pts = String::new();
    for i in 0..curve.vertices.nrows() {
        let (sx, sy) = frame.map(curve.vertices[(i, 0)], curve.vertices[(i, 1)]);
        if i > 0 {
            pts.push(' ');
        }
        pts.push_str(&format!("{:.3},{:.3}", sx, sy));
    }
    svg.push_str(&format!(
        "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"#1f3b57\" stroke-width=\"1.5\"/>\n",
        pts
    ));

    for i in 0..data.nrows() {
        let (sx, sy) = frame.map(data[(i, 0)], data[(i, 1)]);
        svg.push_str(&format!(
            "<path class=\"pt\" d=\"M {x:.3} {top:.3} L {xl:.3} {bot:.3} L {xr:.3} {bot:.3} Z\" fill=\"#c0392b\"/>\n",
            x = sx,
            top = sy - 4.5,
            xl = sx - 4.0,
            xr = sx + 4.0,
            bot = sy + 3.0
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
