//! Coulomb repulsive process on the unit interval: densities, samplers,
//! and the spherical multivariate extension.
//!
//! The process places points in (0,1) with conditional density proportional
//! to prod_j sin^{2r}(pi |x - x_j|). The sine metric wraps around, so 0 and 1
//! are identified and there are no boundary effects.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Coordinates this close to 0 or 1 are pulled inward during validation.
pub const CLAMP_DELTA: f64 = 1e-12;

/// Repulsive strength and quadrature resolution for conditional densities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorpConfig {
    /// Repulsive parameter; larger spreads points more evenly.
    pub r: f64,
    /// Quadrature nodes per unit length when integrating unnormalized conditionals.
    pub quad_points: usize,
}

impl Default for CorpConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            quad_points: 2048,
        }
    }
}

impl CorpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Domain(format!(
                "repulsive parameter r must be positive and finite, got {}",
                self.r
            )));
        }
        if self.quad_points < 64 {
            return Err(Error::Domain(format!(
                "quad_points must be at least 64, got {}",
                self.quad_points
            )));
        }
        Ok(())
    }
}

/// Checks a coordinate lies strictly inside (0,1) and nudges it off the
/// endpoints so log sin never sees an exact zero from the boundary side.
fn validate_coord(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 || x >= 1.0 {
        return Err(Error::Domain(format!(
            "coordinate {} outside the open interval (0,1)",
            x
        )));
    }
    Ok(x.clamp(CLAMP_DELTA, 1.0 - CLAMP_DELTA))
}

fn validate_coords(xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| validate_coord(x)).collect()
}

/// A validated, strictly increasing point configuration in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet1D {
    xs: Vec<f64>,
}

impl PointSet1D {
    /// Sorts and validates. Ties are rejected: the joint density is zero there.
    pub fn new(xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Domain("point set must be nonempty".into()));
        }
        let mut xs = validate_coords(&xs)?;
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if xs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("coincident points are not allowed".into()));
        }
        Ok(Self { xs })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xs
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.xs
    }
}

/// The equally spaced configuration with wraparound gap 1/n, offset half a gap.
pub fn equally_spaced(n: usize) -> PointSet1D {
    let xs = (0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect();
    PointSet1D::new(xs).expect("equal spacing is always valid")
}

/// Wraparound sine metric d(x,y) = sin(pi |x-y|).
pub fn sine_distance(x: f64, y: f64) -> f64 {
    (PI * (x - y).abs()).sin()
}

/// Log of the unnormalized joint density: 2r * sum_{i>j} log sin(pi |x_i - x_j|).
/// Accepts points in any order; returns -inf when any pair coincides.
pub fn joint_log_density(xs: &[f64], cfg: &CorpConfig) -> Result<f64> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::Domain("point set must be nonempty".into()));
    }
    let xs = validate_coords(xs)?;
    let mut total = 0.0;
    for i in 1..xs.len() {
        for j in 0..i {
            let s = sine_distance(xs[i], xs[j]);
            if s <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += s.ln();
        }
    }
    Ok(2.0 * cfg.r * total)
}

/// Log of the unnormalized conditional density of a new point given existing ones.
pub fn conditional_log_density(x_new: f64, existing: &[f64], cfg: &CorpConfig) -> Result<f64> {
    cfg.validate()?;
    if existing.is_empty() {
        return Err(Error::Domain("existing point set must be nonempty".into()));
    }
    let x_new = validate_coord(x_new)?;
    let existing = validate_coords(existing)?;
    let mut total = 0.0;
    for &e in &existing {
        let s = sine_distance(x_new, e);
        if s <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += s.ln();
    }
    Ok(2.0 * cfg.r * total)
}

/// Gradient of `joint_log_density` in each coordinate:
/// d/dx_i = 2 r pi * sum_{j != i} cot(pi (x_i - x_j)).
///
/// Coordinates are assumed valid and pairwise distinct; the caller guards
/// the -inf case separately.
pub fn joint_latent_grad(xs: &[f64], r: f64) -> Vec<f64> {
    let n = xs.len();
    let mut g = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = PI * (xs[i] - xs[j]);
            acc += a.cos() / a.sin();
        }
        g[i] = 2.0 * r * PI * acc;
    }
    g
}

const REJECTION_CAP: u64 = 1_000_000;
const MODE_TOL: f64 = 1e-10;

/// One conditioning interval, in a shifted coordinate where the wraparound
/// segment is contiguous (its right edge may exceed 1).
#[derive(Debug, Clone)]
struct Interval {
    a: f64,
    b: f64,
    /// log of the rejection envelope height over this interval.
    log_env: f64,
}

/// Sampler for the conditional density of one new point given a fixed
/// existing configuration.
///
/// (0,1) is partitioned into the segments between sorted existing points
/// plus the single wraparound segment joining the last point to the first.
/// Segment masses come from trapezoid quadrature of the unnormalized
/// density; a draw picks a segment by its mass, then rejection-samples
/// inside it under a flat envelope at 1.05 times the segment mode.
/// The log density is strictly concave on each segment, so the mode is
/// located by golden-section search.
///
/// Quadrature and mode location happen once at construction; repeated
/// draws only evaluate the density at proposal points.
#[derive(Debug, Clone)]
pub struct CorpConditional {
    existing: Vec<f64>,
    r: f64,
    intervals: Vec<Interval>,
    cum_mass: Vec<f64>,
}

impl CorpConditional {
    pub fn new(existing: &[f64], cfg: &CorpConfig) -> Result<Self> {
        cfg.validate()?;
        if existing.is_empty() {
            return Err(Error::Domain("existing point set must be nonempty".into()));
        }
        let mut sorted = validate_coords(existing)?;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("coincident points are not allowed".into()));
        }

        let n = sorted.len();
        let mut spans = Vec::with_capacity(n);
        for k in 0..n.saturating_sub(1) {
            spans.push((sorted[k], sorted[k + 1]));
        }
        // Wraparound segment, contiguous in the shifted coordinate.
        spans.push((sorted[n - 1], sorted[0] + 1.0));

        let this = Self {
            existing: sorted,
            r: cfg.r,
            intervals: Vec::new(),
            cum_mass: Vec::new(),
        };

        // Mode per segment, then masses relative to the global maximum.
        let mut modes = Vec::with_capacity(spans.len());
        for &(a, b) in &spans {
            modes.push(this.segment_mode(a, b));
        }
        let log_max = modes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !log_max.is_finite() {
            return Err(Error::Domain(
                "conditional density is zero everywhere between existing points".into(),
            ));
        }

        let mut intervals = Vec::with_capacity(spans.len());
        let mut masses = Vec::with_capacity(spans.len());
        for (&(a, b), &mode) in spans.iter().zip(&modes) {
            let nodes = ((cfg.quad_points as f64) * (b - a)).ceil() as usize;
            let nodes = nodes.max(8);
            let h = (b - a) / nodes as f64;
            let mut acc = 0.0;
            for t in 0..=nodes {
                let u = a + h * t as f64;
                let w = if t == 0 || t == nodes { 0.5 } else { 1.0 };
                let lf = this.log_density_shifted(u);
                if lf.is_finite() {
                    acc += w * (lf - log_max).exp();
                }
            }
            masses.push(acc * h);
            intervals.push(Interval {
                a,
                b,
                log_env: mode + 1.05f64.ln(),
            });
        }

        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain(
                "conditional density has zero total mass under quadrature".into(),
            ));
        }
        let mut cum = 0.0;
        let cum_mass = masses
            .iter()
            .map(|m| {
                cum += m / total;
                cum
            })
            .collect();

        Ok(Self {
            intervals,
            cum_mass,
            ..this
        })
    }

    /// Unnormalized log density at a point in shifted coordinates (u may
    /// exceed 1 on the wraparound segment; sin(pi |.|) is 1-periodic in
    /// the sense needed here since |sin| folds the excess back).
    fn log_density_shifted(&self, u: f64) -> f64 {
        let mut total = 0.0;
        for &e in &self.existing {
            let s = (PI * (u - e)).sin().abs();
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += s.ln();
        }
        2.0 * self.r * total
    }

    /// Golden-section maximum of the log density on [a,b]. Valid because the
    /// log density is strictly concave on a segment free of existing points.
    fn segment_mode(&self, a: f64, b: f64) -> f64 {
        const INVPHI: f64 = 0.618_033_988_749_894_9;
        let mut lo = a;
        let mut hi = b;
        let mut x1 = hi - INVPHI * (hi - lo);
        let mut x2 = lo + INVPHI * (hi - lo);
        let mut f1 = self.log_density_shifted(x1);
        let mut f2 = self.log_density_shifted(x2);
        while hi - lo > MODE_TOL {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INVPHI * (hi - lo);
                f2 = self.log_density_shifted(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INVPHI * (hi - lo);
                f1 = self.log_density_shifted(x1);
            }
        }
        f1.max(f2)
    }

    /// Draws one point distributed by the conditional density.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let t: f64 = rng.gen();
        let k = match self
            .cum_mass
            .iter()
            .position(|&c| t <= c)
        {
            Some(k) => k,
            None => self.cum_mass.len() - 1,
        };
        let iv = &self.intervals[k];
        let mut attempts: u64 = 0;
        while attempts < REJECTION_CAP {
            attempts += 1;
            let u = iv.a + (iv.b - iv.a) * rng.gen::<f64>();
            let v: f64 = rng.gen();
            if v.ln() + iv.log_env <= self.log_density_shifted(u) {
                let x = if u >= 1.0 { u - 1.0 } else { u };
                return Ok(x.clamp(CLAMP_DELTA, 1.0 - CLAMP_DELTA));
            }
        }
        Err(Error::RejectionCap {
            attempts,
            acceptance_rate: 1.0 / attempts as f64,
        })
    }
}

/// Draws n points sequentially: the first uniform, each subsequent point
/// exactly from its conditional given all previous ones.
pub fn sample(n: usize, cfg: &CorpConfig, seed: u64) -> Result<PointSet1D> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first: f64 = rng.gen::<f64>().clamp(CLAMP_DELTA, 1.0 - CLAMP_DELTA);
    let mut points = vec![first];
    for _ in 1..n {
        let cond = CorpConditional::new(&points, cfg)?;
        let x = cond.draw(&mut rng)?;
        let idx = points.partition_point(|&p| p < x);
        points.insert(idx, x);
    }
    PointSet1D::new(points)
}

/// Spherical-to-Cartesian cascade: p coordinates in (0,1) map to a point on
/// the unit sphere in p+1 dimensions via angles 2 pi x_k.
pub fn spherical_to_cartesian(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Domain("spherical point needs at least one coordinate".into()));
    }
    let x = validate_coords(x)?;
    let p = x.len();
    let mut y = Vec::with_capacity(p + 1);
    let mut sin_prod = 1.0;
    for &xk in &x {
        let a = 2.0 * PI * xk;
        y.push(sin_prod * a.cos());
        sin_prod *= a.sin();
    }
    y.push(sin_prod);
    Ok(y)
}

/// Multivariate conditional log density: r * sum_j log ||Y(x_new) - Y(x_j)||^2
/// over the Cartesian images. -inf when images coincide.
pub fn multivariate_conditional_log_density(
    x_new: &[f64],
    existing: &[Vec<f64>],
    cfg: &CorpConfig,
) -> Result<f64> {
    cfg.validate()?;
    if existing.is_empty() {
        return Err(Error::Domain("existing point set must be nonempty".into()));
    }
    let p = x_new.len();
    for e in existing {
        if e.len() != p {
            return Err(Error::Domain(format!(
                "dimension mismatch: expected {} coordinates, got {}",
                p,
                e.len()
            )));
        }
    }
    let y_new = spherical_to_cartesian(x_new)?;
    let mut total = 0.0;
    for e in existing {
        let y_e = spherical_to_cartesian(e)?;
        let sq: f64 = y_new
            .iter()
            .zip(&y_e)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if sq <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += sq.ln();
    }
    Ok(cfg.r * total)
}
