//! Joint MAP fit: latent coordinates under the repulsive prior plus
//! per-dimension GP hyperparameters, maximized by scaled conjugate
//! gradients in three steps (embedding init, hyperparameter pre-fit,
//! joint refinement).

use crate::corp::{self, CorpConfig};
use crate::error::{Error, Result};
use crate::gp::{GpDim, KernelParams};
use crate::lle::{self, LleSettings};
use crate::scg::{self, ScgSettings};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Latent coordinates, one per observation row. Strictly inside (0,1) and
/// pairwise distinct; the order matches the data rows, not sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfig {
    xs: Vec<f64>,
}

impl LatentConfig {
    pub fn new(xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Domain("latent configuration is empty".into()));
        }
        for &x in &xs {
            if !x.is_finite() || x <= 0.0 || x >= 1.0 {
                return Err(Error::Domain(format!(
                    "latent coordinate {} outside (0,1)",
                    x
                )));
            }
        }
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("latent coordinates must be distinct".into()));
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

/// Kernel triples for every output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub dims: Vec<KernelParams>,
}

impl HyperParams {
    pub fn d(&self) -> usize {
        self.dims.len()
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub corp: CorpConfig,
    pub lle: LleSettings,
    pub scg: ScgSettings,
    /// When false the repulsion term is dropped from the objective
    /// (unconstrained latent fit, kept for contrast experiments).
    pub use_corp_prior: bool,
    /// Subtract per-dimension means before fitting; offsets are recorded
    /// in the model and added back by all predictions.
    pub center: bool,
    /// Raw initial coordinates overriding the embedding step. They pass
    /// through the same rescaling into (0,1).
    pub init_coords: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            corp: CorpConfig::default(),
            lle: LleSettings::default(),
            scg: ScgSettings::default(),
            use_corp_prior: true,
            center: false,
            init_coords: None,
        }
    }
}

fn pack(theta: &HyperParams, xs: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(theta.d() * 3 + xs.len());
    for p in &theta.dims {
        v.push(p.log_phi);
        v.push(p.log_alpha);
        v.push(p.log_sigma2);
    }
    v.extend_from_slice(xs);
    v
}

fn unpack(v: &[f64], d: usize) -> (HyperParams, &[f64]) {
    let dims = (0..d)
        .map(|j| KernelParams {
            log_phi: v[3 * j],
            log_alpha: v[3 * j + 1],
            log_sigma2: v[3 * j + 2],
        })
        .collect();
    (HyperParams { dims }, &v[3 * d..])
}

fn latents_valid(xs: &[f64]) -> bool {
    for &x in xs {
        if !x.is_finite() || x <= 0.0 || x >= 1.0 {
            return false;
        }
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    !sorted.windows(2).any(|w| w[0] == w[1])
}

/// One dimension's contribution: likelihood, its three log-parameter
/// derivatives, and the latent gradient.
type DimEval = (f64, f64, f64, f64, Vec<f64>);

/// Joint objective: sum of per-dimension GP log marginal likelihoods plus
/// the repulsion term, with its gradient over [hyperparameters, latents].
///
/// Latents that coincide or leave (0,1) yield -inf rather than an error so
/// the optimizer can reject the step.
pub fn objective(
    xs: &[f64],
    theta: &HyperParams,
    data: &DMatrix<f64>,
    corp_cfg: &CorpConfig,
    use_corp_prior: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = data.nrows();
    let d = data.ncols();
    if xs.len() != n || theta.d() != d {
        return Err(Error::Domain(format!(
            "objective shapes: {} latents for {} rows, {} kernels for {} columns",
            xs.len(),
            n,
            theta.d(),
            d
        )));
    }
    let n_params = 3 * d + n;
    if !latents_valid(xs) {
        return Ok((f64::NEG_INFINITY, vec![0.0; n_params]));
    }

    let per_dim: Result<Vec<DimEval>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let ys: Vec<f64> = data.column(j).iter().cloned().collect();
            let gp = GpDim::new(xs.to_vec(), ys, theta.dims[j])?;
            let g = gp.grad_log_marginal();
            Ok((
                gp.log_marginal_likelihood(),
                g.log_phi,
                g.log_alpha,
                g.log_sigma2,
                g.x,
            ))
        })
        .collect();
    let per_dim = per_dim?;

    let mut value = 0.0;
    let mut grad = vec![0.0; n_params];
    for (j, (lml, g_phi, g_alpha, g_sigma2, g_x)) in per_dim.iter().enumerate() {
        value += lml;
        grad[3 * j] = *g_phi;
        grad[3 * j + 1] = *g_alpha;
        grad[3 * j + 2] = *g_sigma2;
        for i in 0..n {
            grad[3 * d + i] += g_x[i];
        }
    }

    if use_corp_prior {
        let corp_val = corp::joint_log_density(xs, corp_cfg)?;
        if !corp_val.is_finite() {
            return Ok((f64::NEG_INFINITY, vec![0.0; n_params]));
        }
        value += corp_val;
        let corp_grad = corp::joint_latent_grad(xs, corp_cfg.r);
        for i in 0..n {
            grad[3 * d + i] += corp_grad[i];
        }
    }
    Ok((value, grad))
}

/// The fitted model: data, optimized latents and hyperparameters, and the
/// per-dimension GP caches used by all downstream predictions.
#[derive(Debug, Clone)]
pub struct FittedModel {
    data: DMatrix<f64>,
    latent: LatentConfig,
    theta: HyperParams,
    corp_cfg: CorpConfig,
    use_corp_prior: bool,
    centering: Option<Vec<f64>>,
    final_objective: f64,
    stage_objectives: Vec<f64>,
    per_dim: Vec<GpDim>,
}

impl FittedModel {
    /// Builds the caches and recomputes the objective from parts.
    pub fn assemble(
        data: DMatrix<f64>,
        latent: LatentConfig,
        theta: HyperParams,
        corp_cfg: CorpConfig,
        use_corp_prior: bool,
        centering: Option<Vec<f64>>,
        stage_objectives: Vec<f64>,
    ) -> Result<Self> {
        let n = data.nrows();
        let d = data.ncols();
        if latent.len() != n {
            return Err(Error::Domain(format!(
                "{} latents for {} rows",
                latent.len(),
                n
            )));
        }
        if theta.d() != d {
            return Err(Error::Domain(format!(
                "{} kernels for {} columns",
                theta.d(),
                d
            )));
        }
        if let Some(c) = &centering {
            if c.len() != d {
                return Err(Error::Domain(format!(
                    "{} centering offsets for {} columns",
                    c.len(),
                    d
                )));
            }
        }
        let centered = centered_data(&data, &centering);
        let per_dim: Result<Vec<GpDim>> = (0..d)
            .map(|j| {
                let ys: Vec<f64> = centered.column(j).iter().cloned().collect();
                GpDim::new(latent.as_slice().to_vec(), ys, theta.dims[j])
            })
            .collect();
        let per_dim = per_dim?;
        let (final_objective, _) = objective(
            latent.as_slice(),
            &theta,
            &centered,
            &corp_cfg,
            use_corp_prior,
        )?;
        Ok(Self {
            data,
            latent,
            theta,
            corp_cfg,
            use_corp_prior,
            centering,
            final_objective,
            stage_objectives,
            per_dim,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn latent(&self) -> &LatentConfig {
        &self.latent
    }

    pub fn theta(&self) -> &HyperParams {
        &self.theta
    }

    pub fn corp_cfg(&self) -> &CorpConfig {
        &self.corp_cfg
    }

    pub fn use_corp_prior(&self) -> bool {
        self.use_corp_prior
    }

    pub fn centering(&self) -> Option<&[f64]> {
        self.centering.as_deref()
    }

    pub fn final_objective(&self) -> f64 {
        self.final_objective
    }

    pub fn stage_objectives(&self) -> &[f64] {
        &self.stage_objectives
    }

    pub fn gp(&self, j: usize) -> &GpDim {
        &self.per_dim[j]
    }

    /// Offset added back to dimension j on anything returned in data space.
    pub fn offset(&self, j: usize) -> f64 {
        self.centering.as_ref().map_or(0.0, |c| c[j])
    }
}

fn centered_data(data: &DMatrix<f64>, centering: &Option<Vec<f64>>) -> DMatrix<f64> {
    match centering {
        None => data.clone(),
        Some(offsets) => {
            let mut out = data.clone();
            for j in 0..data.ncols() {
                for i in 0..data.nrows() {
                    out[(i, j)] -= offsets[j];
                }
            }
            out
        }
    }
}

fn column_variance(data: &DMatrix<f64>, j: usize) -> f64 {
    let n = data.nrows() as f64;
    let mean = data.column(j).sum() / n;
    data.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn median_pairwise_distance(xs: &[f64]) -> f64 {
    let mut dists = Vec::with_capacity(xs.len() * (xs.len() - 1) / 2);
    for i in 1..xs.len() {
        for j in 0..i {
            dists.push((xs[i] - xs[j]).abs());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}

/// Three-step MAP fit.
///
/// Step 1 initializes latents by the embedding (or supplied coordinates),
/// step 2 maximizes each dimension's marginal likelihood over its own
/// kernel triple at fixed latents, step 3 maximizes the joint objective
/// over everything. The repulsion term keeps latents distinct throughout,
/// so the initial ordering survives to the solution.
pub fn fit(data: &DMatrix<f64>, opts: &FitOptions) -> Result<FittedModel> {
    let n = data.nrows();
    let d = data.ncols();
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 rows, got {}", n)));
    }
    if d < 1 {
        return Err(Error::Domain("need at least one column".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("data contains non-finite values".into()));
    }
    opts.corp.validate()?;
    opts.scg.validate()?;

    // Step 1: initial coordinates.
    let x0 = match &opts.init_coords {
        Some(raw) => {
            if raw.len() != n {
                return Err(Error::Stage(
                    "embed",
                    Box::new(Error::Domain(format!(
                        "{} initial coordinates for {} rows",
                        raw.len(),
                        n
                    ))),
                ));
            }
            lle::rescale_unit(raw).map_err(|e| Error::Stage("embed", Box::new(e)))?
        }
        None => {
            let coords =
                lle::lle_1d(data, &opts.lle).map_err(|e| Error::Stage("embed", Box::new(e)))?;
            lle::rescale_unit(&coords).map_err(|e| Error::Stage("embed", Box::new(e)))?
        }
    };

    let centering = if opts.center {
        Some(
            (0..d)
                .map(|j| data.column(j).sum() / n as f64)
                .collect::<Vec<f64>>(),
        )
    } else {
        None
    };
    let centered = centered_data(data, &centering);

    // Step 2: per-dimension hyperparameters at fixed latents.
    let med = median_pairwise_distance(x0.as_slice());
    let alpha0 = 1.0 / (2.0 * med * med);
    let theta_init: Vec<KernelParams> = (0..d)
        .map(|j| {
            let phi = column_variance(&centered, j).max(1e-12);
            KernelParams::from_natural(phi, alpha0, 0.1 * phi)
        })
        .collect::<Result<_>>()?;
    let theta_init = HyperParams { dims: theta_init };

    let (initial_value, _) = objective(
        x0.as_slice(),
        &theta_init,
        &centered,
        &opts.corp,
        opts.use_corp_prior,
    )?;
    if !initial_value.is_finite() {
        return Err(Error::Stage(
            "hyperparams",
            Box::new(Error::Domain(
                "objective not finite at the initial configuration".into(),
            )),
        ));
    }

    let xs0 = x0.as_slice().to_vec();
    let dims: Result<Vec<KernelParams>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let ys: Vec<f64> = centered.column(j).iter().cloned().collect();
            let start = [
                theta_init.dims[j].log_phi,
                theta_init.dims[j].log_alpha,
                theta_init.dims[j].log_sigma2,
            ];
            let res = scg::maximize(
                |v| {
                    let p = KernelParams {
                        log_phi: v[0],
                        log_alpha: v[1],
                        log_sigma2: v[2],
                    };
                    match GpDim::new(xs0.clone(), ys.clone(), p) {
                        Ok(gp) => {
                            let g = gp.grad_log_marginal();
                            (
                                gp.log_marginal_likelihood(),
                                vec![g.log_phi, g.log_alpha, g.log_sigma2],
                            )
                        }
                        Err(_) => (f64::NEG_INFINITY, vec![0.0; 3]),
                    }
                },
                &start,
                &opts.scg,
            )
            .map_err(|e| Error::Stage("hyperparams", Box::new(e)))?;
            Ok(KernelParams {
                log_phi: res.x[0],
                log_alpha: res.x[1],
                log_sigma2: res.x[2],
            })
        })
        .collect();
    let theta0 = HyperParams { dims: dims? };

    let (stage2_value, _) = objective(
        x0.as_slice(),
        &theta0,
        &centered,
        &opts.corp,
        opts.use_corp_prior,
    )?;

    // Step 3: joint refinement.
    let start = pack(&theta0, x0.as_slice());
    let joint = scg::maximize(
        |v| {
            let (theta, xs) = unpack(v, d);
            match objective(xs, &theta, &centered, &opts.corp, opts.use_corp_prior) {
                Ok(pair) => pair,
                Err(_) => (f64::NEG_INFINITY, vec![0.0; v.len()]),
            }
        },
        &start,
        &opts.scg,
    )
    .map_err(|e| Error::Stage("joint", Box::new(e)))?;

    let (theta_hat, xs_hat) = unpack(&joint.x, d);
    let latent = LatentConfig::new(xs_hat.to_vec())
        .map_err(|e| Error::Stage("joint", Box::new(e)))?;

    FittedModel::assemble(
        data.clone(),
        latent,
        theta_hat,
        opts.corp,
        opts.use_corp_prior,
        centering,
        vec![initial_value, stage2_value, joint.value],
    )
}
