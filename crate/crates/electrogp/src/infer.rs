//! Posterior summaries of a fitted model: the mean curve, Monte-Carlo
//! uncertainty bands, and latent inference for partially observed records
//! with reconstruction of their missing dimensions.

use crate::error::{Error, Result};
use crate::fit::FittedModel;
use crate::gp::GpDim;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Piecewise-linear posterior mean curve over an equally spaced latent grid.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    /// Grid on [0,1] including both endpoints.
    pub grid: Vec<f64>,
    /// One row per grid point, one column per data dimension.
    pub vertices: DMatrix<f64>,
}

/// Curve through per-dimension GP posterior means plus fixed offsets.
/// Split out from [`mean_curve`] so a prior-only GP (no training points)
/// can be queried directly.
pub fn mean_curve_gps(gps: &[GpDim], offsets: &[f64], n_mu: usize) -> Result<CurveEstimate> {
    if n_mu < 2 {
        return Err(Error::Domain(format!("need at least 2 grid points, got {}", n_mu)));
    }
    if gps.is_empty() || gps.len() != offsets.len() {
        return Err(Error::Domain(format!(
            "{} GPs with {} offsets",
            gps.len(),
            offsets.len()
        )));
    }
    let grid: Vec<f64> = (0..n_mu)
        .map(|i| i as f64 / (n_mu - 1) as f64)
        .collect();
    let mut vertices = DMatrix::zeros(n_mu, gps.len());
    for (j, gp) in gps.iter().enumerate() {
        let mean = gp.posterior_mean(&grid);
        for i in 0..n_mu {
            vertices[(i, j)] = mean[i] + offsets[j];
        }
    }
    Ok(CurveEstimate { grid, vertices })
}

pub fn mean_curve(model: &FittedModel, n_mu: usize) -> Result<CurveEstimate> {
    let gps: Vec<GpDim> = (0..model.d()).map(|j| model.gp(j).clone()).collect();
    let offsets: Vec<f64> = (0..model.d()).map(|j| model.offset(j)).collect();
    mean_curve_gps(&gps, &offsets, n_mu)
}

/// Exact minimum Euclidean distance from a point to the polyline: each
/// segment's closed-form projection, clamped to its endpoints.
pub fn point_to_polyline_distance(p: &[f64], curve: &CurveEstimate) -> f64 {
    let d = curve.vertices.ncols();
    assert_eq!(p.len(), d, "point dimension mismatch");
    let m = curve.vertices.nrows();
    let mut best = f64::INFINITY;
    for s in 0..m - 1 {
        let mut dot_pa_ba = 0.0;
        let mut norm2_ba = 0.0;
        for j in 0..d {
            let a = curve.vertices[(s, j)];
            let b = curve.vertices[(s + 1, j)];
            dot_pa_ba += (p[j] - a) * (b - a);
            norm2_ba += (b - a) * (b - a);
        }
        let t = if norm2_ba > 0.0 {
            (dot_pa_ba / norm2_ba).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut dist2 = 0.0;
        for j in 0..d {
            let a = curve.vertices[(s, j)];
            let b = curve.vertices[(s + 1, j)];
            let q = a + t * (b - a);
            dist2 += (p[j] - q) * (p[j] - q);
        }
        best = best.min(dist2);
    }
    best.sqrt()
}

#[derive(Debug, Clone)]
pub struct UncertaintyBand {
    pub eta: f64,
    /// Empirical eta-quantile of the pooled distances.
    pub rho: f64,
    pub n1: usize,
    pub n2: usize,
    /// Pooled distances in generation order, n1*n2 of them.
    pub sample_distances: Vec<f64>,
}

/// Empirical quantile: the ceil(eta*k)-th smallest of k values.
fn empirical_quantile(sorted: &[f64], eta: f64) -> f64 {
    let k = sorted.len();
    let idx = ((eta * k as f64).ceil() as usize).clamp(1, k) - 1;
    sorted[idx]
}

fn standard_normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    while out.len() < k {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        out.push(r * a.cos());
        out.push(r * a.sin());
    }
    out.truncate(k);
    out
}

/// One joint predictive draw per dimension at the given latents, with
/// observation noise included. Returns an n1 x d matrix in data space.
fn joint_predictive_draw(
    model: &FittedModel,
    latents: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let n1 = latents.len();
    let d = model.d();
    let mut draw = DMatrix::zeros(n1, d);
    for j in 0..d {
        let gp = model.gp(j);
        let (mean, mut cov) = gp.posterior_moments(latents)?;
        let sigma2 = gp.params().sigma2_effective();
        for i in 0..n1 {
            cov[(i, i)] += sigma2;
        }
        // Near-duplicate latents can leave the covariance semidefinite at
        // working precision; escalate a diagonal bump like the Gram path.
        let phi = gp.params().phi();
        let mut bump = 0.0;
        let chol = loop {
            if let Some(c) = nalgebra::linalg::Cholesky::new(cov.clone()) {
                break c;
            }
            bump = if bump == 0.0 { 1e-12 * phi } else { bump * 10.0 };
            if bump > 1e-4 * phi {
                return Err(Error::Conditioning(format!(
                    "predictive covariance for dimension {} not positive definite",
                    j
                )));
            }
            for i in 0..n1 {
                cov[(i, i)] += bump;
            }
        };
        let z = DVector::from_vec(standard_normals(rng, n1));
        let sample = &mean + chol.l() * z;
        for i in 0..n1 {
            draw[(i, j)] = sample[i] + model.offset(j);
        }
    }
    Ok(draw)
}

/// Monte-Carlo band radius: n2 repetitions each draw n1 uniform latents
/// and one joint predictive sample, pool the n1*n2 curve distances, and
/// take the eta-quantile. Repetitions use independent RNG streams derived
/// from the seed, so the pooled sample does not depend on scheduling.
pub fn uncertainty_band(
    model: &FittedModel,
    curve: &CurveEstimate,
    eta: f64,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<UncertaintyBand> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("eta must be in (0,1), got {}", eta)));
    }
    if n1 == 0 || n2 == 0 || n1 * n2 < 20 {
        return Err(Error::Domain(format!(
            "band design too small: n1*n2 = {} < 20",
            n1 * n2
        )));
    }
    let reps: Result<Vec<Vec<f64>>> = (0..n2)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let latents: Vec<f64> = (0..n1).map(|_| rng.gen::<f64>()).collect();
            let draw = joint_predictive_draw(model, &latents, &mut rng)?;
            let dists: Vec<f64> = (0..n1)
                .map(|i| {
                    let p: Vec<f64> = (0..model.d()).map(|j| draw[(i, j)]).collect();
                    point_to_polyline_distance(&p, curve)
                })
                .collect();
            Ok(dists)
        })
        .collect();
    let sample_distances: Vec<f64> = reps?.into_iter().flatten().collect();
    let mut sorted = sample_distances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rho = empirical_quantile(&sorted, eta);
    Ok(UncertaintyBand {
        eta,
        rho,
        n1,
        n2,
        sample_distances,
    })
}

/// A record with some dimensions observed and the rest missing.
#[derive(Debug, Clone)]
pub struct PartialObservation {
    observed_dims: Vec<usize>,
    observed_values: Vec<f64>,
    missing_dims: Vec<usize>,
}

impl PartialObservation {
    /// Builds from a full-width record where None marks a missing entry.
    pub fn new(record: &[Option<f64>]) -> Result<Self> {
        if record.is_empty() {
            return Err(Error::Domain("empty record".into()));
        }
        let mut observed_dims = Vec::new();
        let mut observed_values = Vec::new();
        let mut missing_dims = Vec::new();
        for (j, v) in record.iter().enumerate() {
            match v {
                Some(x) if x.is_finite() => {
                    observed_dims.push(j);
                    observed_values.push(*x);
                }
                Some(x) => {
                    return Err(Error::Domain(format!(
                        "non-finite observed value {} in dimension {}",
                        x, j
                    )));
                }
                None => missing_dims.push(j),
            }
        }
        Ok(Self {
            observed_dims,
            observed_values,
            missing_dims,
        })
    }

    pub fn d(&self) -> usize {
        self.observed_dims.len() + self.missing_dims.len()
    }

    pub fn observed_dims(&self) -> &[usize] {
        &self.observed_dims
    }

    pub fn observed_values(&self) -> &[f64] {
        &self.observed_values
    }

    pub fn missing_dims(&self) -> &[usize] {
        &self.missing_dims
    }
}

/// Latent location inferred for one record: either a maximizer of the
/// latent posterior or a retained MH chain.
#[derive(Debug, Clone)]
pub enum LatentEstimate {
    Mode(f64),
    Chain(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct LatentPosterior {
    pub estimate: LatentEstimate,
    /// MH only: accepted proposals over all post-warmup decisions.
    pub acceptance_rate: Option<f64>,
    /// Scan found competing maxima or an essentially flat posterior.
    pub multimodal_warning: bool,
    /// MH acceptance rate fell below 0.1%.
    pub low_acceptance_warning: bool,
}

impl LatentPosterior {
    pub fn point(&self) -> f64 {
        match &self.estimate {
            LatentEstimate::Mode(x) => *x,
            LatentEstimate::Chain(xs) => xs.iter().sum::<f64>() / xs.len() as f64,
        }
    }
}

/// Unnormalized log posterior of a new record's latent coordinate given
/// its observed dimensions: Gaussian predictive likelihood per observed
/// dimension (noise included) under a uniform prior on (0,1).
pub fn log_latent_posterior(model: &FittedModel, obs: &PartialObservation, x: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for (idx, &j) in obs.observed_dims.iter().enumerate() {
        let gp = model.gp(j);
        let (mean, var) = match gp.posterior_mean_var(&[x]) {
            Ok(mv) => mv,
            Err(_) => return f64::NEG_INFINITY,
        };
        let s2 = var[0] + gp.params().sigma2_effective();
        let resid = obs.observed_values[idx] - model.offset(j) - mean[0];
        total += -0.5 * (s2.ln() + resid * resid / s2 + (2.0 * std::f64::consts::PI).ln());
    }
    total
}

const MAP_SCAN_POINTS: usize = 1024;
const MAP_REFINE_TOL: f64 = 1e-8;
/// Secondary scan maxima within this log-ratio of the best flag the
/// posterior as multimodal.
const MULTIMODAL_LOG_WINDOW: f64 = 4.605170185988091; // ln(100)
/// Best-minus-median below ln(2) marks an essentially flat posterior.
const FLAT_LOG_WINDOW: f64 = std::f64::consts::LN_2;

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// MAP latent for a partial record: dense scan over (0,1) followed by
/// golden-section refinement around the best cell. The scan makes the
/// search robust to the multimodality a curved mean can induce; competing
/// maxima raise a warning flag instead of failing.
pub fn predict_latent_map(model: &FittedModel, obs: &PartialObservation) -> Result<LatentPosterior> {
    if obs.d() != model.d() {
        return Err(Error::Domain(format!(
            "record has {} dimensions, model has {}",
            obs.d(),
            model.d()
        )));
    }
    if obs.observed_dims.is_empty() {
        return Err(Error::Domain(
            "latent maximization needs at least one observed dimension".into(),
        ));
    }
    let f = |x: f64| log_latent_posterior(model, obs, x);
    let m = MAP_SCAN_POINTS;
    let xs: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = (0..m)
        .max_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap())
        .unwrap();

    // Local maxima competitive with the best indicate multimodality; a
    // best barely above the median indicates a flat posterior.
    let mut competitive_maxima = 0;
    for i in 0..m {
        let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
        let right = if i + 1 == m { f64::NEG_INFINITY } else { vals[i + 1] };
        if vals[i] >= left && vals[i] >= right && vals[best] - vals[i] <= MULTIMODAL_LOG_WINDOW {
            competitive_maxima += 1;
        }
    }
    let mut sorted_vals = vals.clone();
    sorted_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted_vals[m / 2];
    let flat = vals[best] - median < FLAT_LOG_WINDOW;
    let multimodal = competitive_maxima >= 2 || flat;

    let lo = if best == 0 { 0.0 } else { xs[best - 1] };
    let hi = if best + 1 == m { 1.0 } else { xs[best + 1] };
    let mode = golden_max(&f, lo, hi, MAP_REFINE_TOL);
    // The refined point can only improve on the scanned cell center.
    let mode = if f(mode) >= vals[best] { mode } else { xs[best] };

    Ok(LatentPosterior {
        estimate: LatentEstimate::Mode(mode),
        acceptance_rate: None,
        multimodal_warning: multimodal,
        low_acceptance_warning: false,
    })
}

const MH_LOW_ACCEPTANCE: f64 = 1e-3;

/// Independence Metropolis-Hastings on the latent posterior with Unif(0,1)
/// proposals: the proposal density cancels, leaving the likelihood ratio.
pub fn predict_latent_mh(
    model: &FittedModel,
    obs: &PartialObservation,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
) -> Result<LatentPosterior> {
    if obs.d() != model.d() {
        return Err(Error::Domain(format!(
            "record has {} dimensions, model has {}",
            obs.d(),
            model.d()
        )));
    }
    if n_samples < 1 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let f = |x: f64| log_latent_posterior(model, obs, x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = rng.gen::<f64>();
    let mut fx = f(x);
    let mut accepted = 0u64;
    let total = (burn_in + n_samples) as u64;
    let mut chain = Vec::with_capacity(n_samples);
    for step in 0..burn_in + n_samples {
        let prop = rng.gen::<f64>();
        let fp = f(prop);
        let log_ratio = fp - fx;
        if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
            x = prop;
            fx = fp;
            accepted += 1;
        }
        if step >= burn_in {
            chain.push(x);
        }
    }
    let rate = accepted as f64 / total as f64;
    Ok(LatentPosterior {
        estimate: LatentEstimate::Chain(chain),
        acceptance_rate: Some(rate),
        multimodal_warning: false,
        low_acceptance_warning: rate < MH_LOW_ACCEPTANCE,
    })
}

/// Reconstruction of the missing dimensions: mean vector and covariance
/// in data space, ordered like `missing_dims`.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub missing_dims: Vec<usize>,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// Chains longer than this are thinned evenly before mixture summaries.
const RECONSTRUCT_MAX_POINTS: usize = 256;

/// Conditional Gaussian of the missing dimensions given the latent
/// estimate. A mode gives the per-dimension predictive moments directly;
/// a chain gives a mixture, summarized by its exact mean and covariance
/// (within-sample noise plus between-sample mean spread).
pub fn reconstruct_missing(
    model: &FittedModel,
    obs: &PartialObservation,
    latent: &LatentPosterior,
) -> Result<Reconstruction> {
    if obs.d() != model.d() {
        return Err(Error::Domain(format!(
            "record has {} dimensions, model has {}",
            obs.d(),
            model.d()
        )));
    }
    let miss = obs.missing_dims.clone();
    let k = miss.len();
    if k == 0 {
        return Ok(Reconstruction {
            missing_dims: miss,
            mean: Vec::new(),
            covariance: DMatrix::zeros(0, 0),
        });
    }
    let points: Vec<f64> = match &latent.estimate {
        LatentEstimate::Mode(x) => vec![*x],
        LatentEstimate::Chain(xs) => {
            if xs.is_empty() {
                return Err(Error::Domain("empty latent chain".into()));
            }
            if xs.len() <= RECONSTRUCT_MAX_POINTS {
                xs.clone()
            } else {
                let stride = xs.len() as f64 / RECONSTRUCT_MAX_POINTS as f64;
                (0..RECONSTRUCT_MAX_POINTS)
                    .map(|i| xs[(i as f64 * stride) as usize])
                    .collect()
            }
        }
    };
    let m = points.len();
    // Per-dimension moments at each latent point: means[(s, a)], vars[(s, a)].
    let mut means = DMatrix::zeros(m, k);
    let mut vars = DMatrix::zeros(m, k);
    for (a, &j) in miss.iter().enumerate() {
        let gp = model.gp(j);
        let (mu, var) = gp.posterior_mean_var(&points)?;
        let sigma2 = gp.params().sigma2_effective();
        for s in 0..m {
            means[(s, a)] = mu[s] + model.offset(j);
            vars[(s, a)] = var[s] + sigma2;
        }
    }
    let mean: Vec<f64> = (0..k).map(|a| means.column(a).sum() / m as f64).collect();
    let mut covariance = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let mut cross = 0.0;
            for s in 0..m {
                cross += (means[(s, a)] - mean[a]) * (means[(s, b)] - mean[b]);
            }
            covariance[(a, b)] = cross / m as f64;
        }
        covariance[(a, a)] += vars.column(a).sum() / m as f64;
    }
    Ok(Reconstruction {
        missing_dims: miss,
        mean,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit, FitOptions, FittedModel, LatentConfig};
    use crate::gp::{GpDim, KernelParams};
    use crate::scg::ScgSettings;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    const PARABOLA_NOISE: f64 = 0.02;

    /// Noisy parabola (u, u^2), u in [-1,1], shared across tests.
    fn parabola_model() -> &'static (DMatrix<f64>, FittedModel) {
        static MODEL: OnceLock<(DMatrix<f64>, FittedModel)> = OnceLock::new();
        MODEL.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(4021);
            let n = 30;
            let data = DMatrix::from_fn(n, 2, |i, j| {
                let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let base = if j == 0 { u } else { u * u };
                base + PARABOLA_NOISE * gauss(&mut rng)
            });
            let opts = FitOptions {
                scg: ScgSettings {
                    max_iters: 250,
                    ..ScgSettings::default()
                },
                ..FitOptions::default()
            };
            let model = fit(&data, &opts).unwrap();
            (data, model)
        })
    }

    /// Noise-free half sine arch, for interpolation-limit checks.
    fn clean_model() -> &'static FittedModel {
        static MODEL: OnceLock<FittedModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            let n = 20;
            let data = DMatrix::from_fn(n, 2, |i, j| {
                let t = i as f64 / (n - 1) as f64;
                if j == 0 {
                    2.0 * t - 1.0
                } else {
                    (std::f64::consts::PI * t).sin()
                }
            });
            let opts = FitOptions {
                scg: ScgSettings {
                    max_iters: 250,
                    ..ScgSettings::default()
                },
                ..FitOptions::default()
            };
            fit(&data, &opts).unwrap()
        })
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn prior_only_curve_is_zero() {
        let p = KernelParams::from_natural(1.0, 1.0, 0.1).unwrap();
        let gp = GpDim::new(vec![], vec![], p).unwrap();
        let curve = mean_curve_gps(&[gp], &[0.0], 64).unwrap();
        for i in 0..64 {
            assert_eq!(curve.vertices[(i, 0)], 0.0);
        }
    }

    #[test]
    fn grid_is_equally_spaced_with_unit_endpoints() {
        let curve = mean_curve(clean_model(), 101).unwrap();
        assert_eq!(curve.grid[0], 0.0);
        assert_eq!(curve.grid[100], 1.0);
        for i in 0..100 {
            assert_abs_diff_eq!(curve.grid[i + 1] - curve.grid[i], 0.01, epsilon = 1e-12);
        }
        assert!(mean_curve(clean_model(), 1).is_err());
    }

    #[test]
    fn curve_passes_through_near_noiseless_training_points() {
        let model = clean_model();
        let curve = mean_curve(model, 512).unwrap();
        for i in 0..model.n() {
            let p: Vec<f64> = (0..2).map(|j| model.data()[(i, j)]).collect();
            let dist = point_to_polyline_distance(&p, &curve);
            assert!(dist < 1e-3, "row {} at distance {}", i, dist);
        }
    }

    #[test]
    fn curve_tracks_true_parabola_within_noise() {
        let (_, model) = parabola_model();
        let curve = mean_curve(model, 512).unwrap();
        let lats = model.latent().as_slice();
        let lo = lats.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = lats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // True curve distance via dense parameter sampling.
        let dense: Vec<(f64, f64)> = (0..20001)
            .map(|t| {
                let u = -1.0 + 2.0 * t as f64 / 20000.0;
                (u, u * u)
            })
            .collect();
        let mut worst = 0.0f64;
        for i in 0..curve.grid.len() {
            if curve.grid[i] < lo || curve.grid[i] > hi {
                continue;
            }
            let vx = curve.vertices[(i, 0)];
            let vy = curve.vertices[(i, 1)];
            let dist = dense
                .iter()
                .map(|(a, b)| ((vx - a).powi(2) + (vy - b).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(dist);
        }
        assert!(
            worst <= 3.0 * PARABOLA_NOISE,
            "worst curve deviation {} exceeds 3 noise sd",
            worst
        );
    }

    #[test]
    fn mean_curve_invariant_to_training_row_permutation() {
        let (data, model) = parabola_model();
        let n = model.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pdata = DMatrix::from_fn(n, 2, |i, j| data[(perm[i], j)]);
        let plat: Vec<f64> = perm.iter().map(|&i| model.latent().as_slice()[i]).collect();
        let permuted = FittedModel::assemble(
            pdata,
            LatentConfig::new(plat).unwrap(),
            model.theta().clone(),
            *model.corp_cfg(),
            model.use_corp_prior(),
            model.centering().map(|c| c.to_vec()),
            model.stage_objectives().to_vec(),
        )
        .unwrap();
        let a = mean_curve(model, 128).unwrap();
        let b = mean_curve(&permuted, 128).unwrap();
        for i in 0..128 {
            for j in 0..2 {
                assert_abs_diff_eq!(a.vertices[(i, j)], b.vertices[(i, j)], epsilon = 1e-9);
            }
        }
    }

    fn square_curve() -> CurveEstimate {
        // Unit square path (0,0) -> (1,0) -> (1,1) -> (0,1).
        let grid = vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let vertices =
            DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        CurveEstimate { grid, vertices }
    }

    #[test]
    fn polyline_distance_basic_cases() {
        let seg = CurveEstimate {
            grid: vec![0.0, 1.0],
            vertices: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        };
        assert_abs_diff_eq!(point_to_polyline_distance(&[0.0, 1.0], &seg), 1.0);
        assert_abs_diff_eq!(point_to_polyline_distance(&[0.5, 0.0], &seg), 0.0);
        assert_abs_diff_eq!(point_to_polyline_distance(&[2.0, 0.0], &seg), 1.0);
        let sq = square_curve();
        assert_abs_diff_eq!(point_to_polyline_distance(&[1.0, 1.0], &sq), 0.0);
        assert_abs_diff_eq!(point_to_polyline_distance(&[0.5, 0.25], &sq), 0.25);
    }

    #[test]
    fn polyline_distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let curve = square_curve();
        // Dense points along the polyline for a brute-force oracle.
        let m = 100_000;
        let mut dense = Vec::with_capacity(3 * m);
        for s in 0..3 {
            for t in 0..m {
                let t = t as f64 / (m - 1) as f64;
                let ax = curve.vertices[(s, 0)];
                let ay = curve.vertices[(s, 1)];
                let bx = curve.vertices[(s + 1, 0)];
                let by = curve.vertices[(s + 1, 1)];
                dense.push((ax + t * (bx - ax), ay + t * (by - ay)));
            }
        }
        for _ in 0..50 {
            let p = [4.0 * rng.gen::<f64>() - 2.0, 4.0 * rng.gen::<f64>() - 2.0];
            let exact = point_to_polyline_distance(&p, &curve);
            let brute = dense
                .iter()
                .map(|(x, y)| ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((exact - brute).abs() < 1e-6, "{} vs {}", exact, brute);
            assert!(exact <= brute + 1e-12);
        }
    }

    #[test]
    fn polyline_distance_bounded_by_vertex_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let curve = square_curve();
        for _ in 0..200 {
            let p = [6.0 * rng.gen::<f64>() - 3.0, 6.0 * rng.gen::<f64>() - 3.0];
            let dist = point_to_polyline_distance(&p, &curve);
            for s in 0..4 {
                let vd = ((p[0] - curve.vertices[(s, 0)]).powi(2)
                    + (p[1] - curve.vertices[(s, 1)]).powi(2))
                .sqrt();
                assert!(dist <= vd + 1e-12);
            }
        }
    }

    #[test]
    fn band_rejects_bad_designs() {
        let model = clean_model();
        let curve = mean_curve(model, 64).unwrap();
        assert!(uncertainty_band(model, &curve, 0.0, 100, 50, 1).is_err());
        assert!(uncertainty_band(model, &curve, 1.0, 100, 50, 1).is_err());
        assert!(uncertainty_band(model, &curve, 0.95, 19, 1, 1).is_err());
        assert!(uncertainty_band(model, &curve, 0.95, 0, 50, 1).is_err());
    }

    #[test]
    fn eta_near_one_gives_max_distance_and_monotone_rho() {
        let model = clean_model();
        let curve = mean_curve(model, 128).unwrap();
        let b1 = uncertainty_band(model, &curve, 0.999999, 40, 5, 7).unwrap();
        let max = b1
            .sample_distances
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(b1.rho, max);
        assert_eq!(b1.sample_distances.len(), 200);
        let b2 = uncertainty_band(model, &curve, 0.5, 40, 5, 7).unwrap();
        let b3 = uncertainty_band(model, &curve, 0.9, 40, 5, 7).unwrap();
        assert_eq!(b2.sample_distances, b3.sample_distances);
        assert!(b2.rho <= b3.rho && b3.rho <= b1.rho);
    }

    #[test]
    fn band_is_seed_deterministic() {
        let model = clean_model();
        let curve = mean_curve(model, 64).unwrap();
        let a = uncertainty_band(model, &curve, 0.9, 25, 4, 42).unwrap();
        let b = uncertainty_band(model, &curve, 0.9, 25, 4, 42).unwrap();
        let c = uncertainty_band(model, &curve, 0.9, 25, 4, 43).unwrap();
        assert_eq!(a.sample_distances, b.sample_distances);
        assert_ne!(a.sample_distances, c.sample_distances);
    }

    #[test]
    fn noise_free_fit_has_small_band_radius() {
        let model = clean_model();
        let curve = mean_curve(model, 256).unwrap();
        let band = uncertainty_band(model, &curve, 0.95, 50, 10, 3).unwrap();
        // Data span is O(2); a collapsed predictive keeps rho well under it.
        assert!(band.rho < 0.1, "rho = {}", band.rho);
    }

    #[test]
    fn band_covers_fresh_generator_points() {
        // Needs enough points that latent spacing cannot absorb the noise
        // of the monotone first dimension, keeping sigma estimates honest.
        let noise = 0.05;
        let n = 80;
        let mut rng = ChaCha8Rng::seed_from_u64(4021);
        let data = DMatrix::from_fn(n, 2, |i, j| {
            let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let base = if j == 0 { u } else { u * u };
            base + noise * gauss(&mut rng)
        });
        let opts = FitOptions {
            scg: ScgSettings {
                max_iters: 500,
                ..ScgSettings::default()
            },
            ..FitOptions::default()
        };
        let model = fit(&data, &opts).unwrap();
        let curve = mean_curve(&model, 512).unwrap();
        let band = uncertainty_band(&model, &curve, 0.95, 100, 50, 11).unwrap();
        assert_eq!(band.sample_distances.len(), 5000);
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let mut covered = 0;
        let total = 500;
        for _ in 0..total {
            let u = -1.0 + 2.0 * rng.gen::<f64>();
            let p = [
                u + noise * gauss(&mut rng),
                u * u + noise * gauss(&mut rng),
            ];
            if point_to_polyline_distance(&p, &curve) <= band.rho {
                covered += 1;
            }
        }
        let frac = covered as f64 / total as f64;
        assert!(
            (0.88..=0.99).contains(&frac),
            "coverage {} outside [0.88, 0.99] (rho = {})",
            frac,
            band.rho
        );
    }

    #[test]
    fn partial_observation_splits_record() {
        let obs = PartialObservation::new(&[Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!(obs.observed_dims(), &[0, 2]);
        assert_eq!(obs.observed_values(), &[1.0, 3.0]);
        assert_eq!(obs.missing_dims(), &[1]);
        assert_eq!(obs.d(), 3);
        assert!(PartialObservation::new(&[]).is_err());
        assert!(PartialObservation::new(&[Some(f64::NAN)]).is_err());
    }

    #[test]
    fn map_mode_recovers_training_latent() {
        let (data, model) = parabola_model();
        for i in [5usize, 15, 24] {
            let obs = PartialObservation::new(&[Some(data[(i, 0)]), Some(data[(i, 1)])]).unwrap();
            let post = predict_latent_map(model, &obs).unwrap();
            let mode = match post.estimate {
                LatentEstimate::Mode(x) => x,
                _ => unreachable!(),
            };
            let xi = model.latent().as_slice()[i];
            assert!(
                (mode - xi).abs() < 0.01,
                "row {}: mode {} vs latent {}",
                i,
                mode,
                xi
            );
        }
    }

    #[test]
    fn map_mode_beats_every_grid_point() {
        let (data, model) = parabola_model();
        let obs = PartialObservation::new(&[Some(data[(8, 0)]), Some(data[(8, 1)])]).unwrap();
        let post = predict_latent_map(model, &obs).unwrap();
        let mode = match post.estimate {
            LatentEstimate::Mode(x) => x,
            _ => unreachable!(),
        };
        let fm = log_latent_posterior(model, &obs, mode);
        for i in 0..1024 {
            let x = (i as f64 + 0.5) / 1024.0;
            assert!(fm >= log_latent_posterior(model, &obs, x));
        }
    }

    #[test]
    fn symmetric_ambiguous_observation_sets_multimodal_flag() {
        let (_, model) = parabola_model();
        // Only the second dimension observed: u^2 = 0.25 fits u = +-0.5,
        // two distinct latent locations.
        let obs = PartialObservation::new(&[None, Some(0.25)]).unwrap();
        let post = predict_latent_map(model, &obs).unwrap();
        assert!(post.multimodal_warning);
        // A fully observed record pins one branch: no warning.
        let (data, _) = parabola_model();
        let full = PartialObservation::new(&[Some(data[(20, 0)]), Some(data[(20, 1)])]).unwrap();
        let post = predict_latent_map(model, &full).unwrap();
        assert!(!post.multimodal_warning);
    }

    #[test]
    fn map_requires_an_observed_dimension() {
        let (_, model) = parabola_model();
        let obs = PartialObservation::new(&[None, None]).unwrap();
        assert!(predict_latent_map(model, &obs).is_err());
    }

    #[test]
    fn mh_on_unconditioned_record_accepts_everything() {
        let (_, model) = parabola_model();
        let obs = PartialObservation::new(&[None, None]).unwrap();
        let post = predict_latent_mh(model, &obs, 2000, 200, 5).unwrap();
        assert_eq!(post.acceptance_rate, Some(1.0));
        assert!(!post.low_acceptance_warning);
        // Chain is the proposal stream itself: uniform on (0,1).
        let chain = match post.estimate {
            LatentEstimate::Chain(c) => c,
            _ => unreachable!(),
        };
        let mean = chain.iter().sum::<f64>() / chain.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn mh_chain_matches_quadrature_normalized_target() {
        // Wide noise keeps the posterior broad, so the uniform proposal
        // mixes well (acceptance ~0.2) and the KS comparison is sharp.
        let noise = 0.35;
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(512);
        let data = DMatrix::from_fn(n, 2, |i, j| {
            let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let base = if j == 0 { u } else { u * u };
            base + noise * gauss(&mut rng)
        });
        let opts = FitOptions {
            scg: ScgSettings {
                max_iters: 300,
                ..ScgSettings::default()
            },
            ..FitOptions::default()
        };
        let owned_model = fit(&data, &opts).unwrap();
        let model = &owned_model;
        let obs = PartialObservation::new(&[Some(data[(10, 0)]), None]).unwrap();
        let post = predict_latent_mh(model, &obs, 10_000, 1000, 17).unwrap();
        let chain = match post.estimate {
            LatentEstimate::Chain(c) => c,
            _ => unreachable!(),
        };
        // Normalized CDF of the target on a fine midpoint grid.
        let m = 4096;
        let vals: Vec<f64> = (0..m)
            .map(|i| log_latent_posterior(model, &obs, (i as f64 + 0.5) / m as f64))
            .collect();
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = vals.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut cdf = Vec::with_capacity(m);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cdf.push(acc / total);
        }
        let mut sorted = chain.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nn = sorted.len() as f64;
        let mut ks = 0.0f64;
        for (idx, &x) in sorted.iter().enumerate() {
            let cell = ((x * m as f64) as usize).min(m - 1);
            let target_cdf = cdf[cell];
            let emp_hi = (idx + 1) as f64 / nn;
            let emp_lo = idx as f64 / nn;
            ks = ks.max((emp_hi - target_cdf).abs()).max((emp_lo - target_cdf).abs());
        }
        assert!(ks < 0.05, "KS distance {}", ks);
    }

    #[test]
    fn mh_is_seed_deterministic() {
        let (data, model) = parabola_model();
        let obs = PartialObservation::new(&[Some(data[(3, 0)]), None]).unwrap();
        let a = predict_latent_mh(model, &obs, 500, 100, 1).unwrap();
        let b = predict_latent_mh(model, &obs, 500, 100, 1).unwrap();
        let c = predict_latent_mh(model, &obs, 500, 100, 2).unwrap();
        let (ca, cb, cc) = match (a.estimate, b.estimate, c.estimate) {
            (LatentEstimate::Chain(x), LatentEstimate::Chain(y), LatentEstimate::Chain(z)) => {
                (x, y, z)
            }
            _ => unreachable!(),
        };
        assert_eq!(ca, cb);
        assert_ne!(ca, cc);
    }

    #[test]
    fn reconstruction_recovers_masked_training_value() {
        let model = clean_model();
        for i in [4usize, 10, 16] {
            let truth = model.data()[(i, 1)];
            let obs = PartialObservation::new(&[Some(model.data()[(i, 0)]), None]).unwrap();
            let post = predict_latent_map(model, &obs).unwrap();
            let rec = reconstruct_missing(model, &obs, &post).unwrap();
            assert_eq!(rec.missing_dims, vec![1]);
            assert!(
                (rec.mean[0] - truth).abs() < 1e-3,
                "row {}: {} vs {}",
                i,
                rec.mean[0],
                truth
            );
        }
    }

    #[test]
    fn reconstruction_empty_for_fully_observed_record() {
        let (data, model) = parabola_model();
        let obs = PartialObservation::new(&[Some(data[(0, 0)]), Some(data[(0, 1)])]).unwrap();
        let post = predict_latent_map(model, &obs).unwrap();
        let rec = reconstruct_missing(model, &obs, &post).unwrap();
        assert!(rec.missing_dims.is_empty());
        assert!(rec.mean.is_empty());
        assert_eq!(rec.covariance.nrows(), 0);
    }

    #[test]
    fn reconstruction_variance_bounded_by_prior_plus_noise() {
        let (data, model) = parabola_model();
        let obs = PartialObservation::new(&[Some(data[(12, 0)]), None]).unwrap();
        let p = model.gp(1).params();
        let bound = p.phi() + p.sigma2_effective() + 1e-8;

        let map_post = predict_latent_map(model, &obs).unwrap();
        let rec = reconstruct_missing(model, &obs, &map_post).unwrap();
        assert!(rec.covariance[(0, 0)] <= bound);

        let mh_post = predict_latent_mh(model, &obs, 3000, 500, 23).unwrap();
        let rec = reconstruct_missing(model, &obs, &mh_post).unwrap();
        assert!(rec.covariance[(0, 0)] <= bound + 0.05 * p.phi());
    }

    #[test]
    fn chain_reconstruction_mixes_mean_spread_into_variance() {
        let (_, model) = parabola_model();
        // Ambiguous observation: two latent branches produce different
        // first-dimension means, so mixture variance must exceed any
        // single-mode variance.
        let obs = PartialObservation::new(&[None, Some(0.25)]).unwrap();
        let mh_post = predict_latent_mh(model, &obs, 4000, 500, 31).unwrap();
        let rec_mix = reconstruct_missing(model, &obs, &mh_post).unwrap();
        let map_post = predict_latent_map(model, &obs).unwrap();
        let rec_mode = reconstruct_missing(model, &obs, &map_post).unwrap();
        assert!(rec_mix.covariance[(0, 0)] > 4.0 * rec_mode.covariance[(0, 0)]);
    }

    #[test]
    fn multi_record_prediction_factorizes() {
        let (data, model) = parabola_model();
        let a = PartialObservation::new(&[Some(data[(6, 0)]), None]).unwrap();
        let b = PartialObservation::new(&[Some(data[(22, 0)]), None]).unwrap();
        // MAP inference of one record is untouched by which other records
        // are processed around it.
        let solo = predict_latent_map(model, &a).unwrap();
        let _other = predict_latent_map(model, &b).unwrap();
        let again = predict_latent_map(model, &a).unwrap();
        match (&solo.estimate, &again.estimate) {
            (LatentEstimate::Mode(x), LatentEstimate::Mode(y)) => assert_eq!(x, y),
            _ => unreachable!(),
        }
        let r1 = reconstruct_missing(model, &a, &solo).unwrap();
        let r2 = reconstruct_missing(model, &a, &again).unwrap();
        assert_eq!(r1.mean, r2.mean);
        assert_eq!(r1.covariance, r2.covariance);
    }
}
