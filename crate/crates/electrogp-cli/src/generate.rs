//! Synthetic curve datasets used by the examples and the validation suite.
//!
//! Every shape is a planar curve traced by a parameter t equally spaced on
//! [0, 1], with isotropic Gaussian noise of a given standard deviation added
//! to both coordinates. The noise-free points and their parameters go into a
//! truth sidecar so downstream checks can compare against the generator.

use clap::ValueEnum;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    /// Line segment rotated by 30 degrees; with noise it forms an elongated
    /// Gaussian-like cloud.
    Gaussian,
    /// Parabola y = x^2 on [-1, 1], rotated by 30 degrees.
    Parabola,
    /// Archimedean spiral r = 1 + 3s, theta = 3*pi*s, traced at uniform
    /// speed in arc length.
    Spiral,
    /// One period of a sine wave, rotated by 30 degrees.
    Sine,
    /// Half circle of radius 2.
    Arc,
}

const ROT_COS: f64 = 0.8660254037844387; // cos(30 deg)
const ROT_SIN: f64 = 0.5; // sin(30 deg)

fn rotate30(x: f64, y: f64) -> (f64, f64) {
    (ROT_COS * x - ROT_SIN * y, ROT_SIN * x + ROT_COS * y)
}

/// Noise-free curve point at parameter t in [0, 1].
pub fn curve_point(shape: Shape, t: f64) -> (f64, f64) {
    match shape {
        Shape::Gaussian => rotate30(2.0 * t - 1.0, 0.0),
        Shape::Parabola => {
            let u = 2.0 * t - 1.0;
            rotate30(u, u * u)
        }
        Shape::Spiral => {
            let s = spiral_arc_param(t);
            let theta = 3.0 * std::f64::consts::PI * s;
            let r = 1.0 + 3.0 * s;
            (r * theta.cos(), r * theta.sin())
        }
        Shape::Sine => {
            let u = 2.0 * std::f64::consts::PI * t;
            rotate30(u, u.sin())
        }
        Shape::Arc => {
            let theta = std::f64::consts::PI * t;
            (2.0 * theta.cos(), 2.0 * theta.sin())
        }
    }
}

/// Speed of the raw spiral parameterization at s.
fn spiral_speed(s: f64) -> f64 {
    let three_pi = 3.0 * std::f64::consts::PI;
    let r = 1.0 + 3.0 * s;
    (9.0 + (r * three_pi).powi(2)).sqrt()
}

const SPIRAL_CELLS: usize = 4096;

/// Maps an arc-length fraction t to the raw spiral parameter s, so that
/// equally spaced t values land equally spaced along the curve. Uses a
/// trapezoid cumulative of the speed with linear interpolation; the grid is
/// fine enough that the inversion error is far below the noise scale.
fn spiral_arc_param(t: f64) -> f64 {
    let mut cum = [0.0f64; SPIRAL_CELLS + 1];
    let h = 1.0 / SPIRAL_CELLS as f64;
    let mut prev = spiral_speed(0.0);
    for i in 1..=SPIRAL_CELLS {
        let cur = spiral_speed(i as f64 * h);
        cum[i] = cum[i - 1] + 0.5 * h * (prev + cur);
        prev = cur;
    }
    let target = t.clamp(0.0, 1.0) * cum[SPIRAL_CELLS];
    let idx = cum.partition_point(|&c| c < target).clamp(1, SPIRAL_CELLS);
    let (lo, hi) = (cum[idx - 1], cum[idx]);
    let frac = if hi > lo { (target - lo) / (hi - lo) } else { 0.0 };
    ((idx - 1) as f64 + frac) * h
}

fn gauss_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * u2;
    (r * a.cos(), r * a.sin())
}

/// Draws n noisy points along the shape. Returns the observed n x 2 matrix
/// and an n x 3 truth matrix with columns (t, y1, y2) holding the parameter
/// and the noise-free point for each row.
pub fn simulate(
    shape: Shape,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), CliError> {
    if n < 2 {
        return Err(CliError::Usage(format!("--n must be at least 2, got {}", n)));
    }
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(CliError::Usage(format!(
            "--noise-sd must be a finite nonnegative number, got {}",
            noise_sd
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(n, 2);
    let mut truth = DMatrix::zeros(n, 3);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let (x, y) = curve_point(shape, t);
        let (e1, e2) = gauss_pair(&mut rng);
        data[(i, 0)] = x + noise_sd * e1;
        data[(i, 1)] = y + noise_sd * e2;
        truth[(i, 0)] = t;
        truth[(i, 1)] = x;
        truth[(i, 2)] = y;
    }
    Ok((data, truth))
}

pub fn data_headers() -> Vec<String> {
    vec!["y1".to_string(), "y2".to_string()]
}

pub fn truth_headers() -> Vec<String> {
    vec!["t".to_string(), "y1".to_string(), "y2".to_string()]
}
