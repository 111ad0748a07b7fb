//! Per-dimension Gaussian process machinery: squared-exponential kernel,
//! Cholesky-based marginal likelihood, analytic gradients, and posterior
//! predictive moments.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Dyn};
use std::f64::consts::PI;

/// Noise floor as a fraction of the signal variance. The effective noise
/// added to the Gram diagonal is sigma2 + NOISE_FLOOR_RATIO * phi, which
/// keeps the factorization alive on noise-free data.
pub const NOISE_FLOOR_RATIO: f64 = 1e-10;

const JITTER_MAX_RATIO: f64 = 1e-4;

/// Kernel hyperparameters, stored in log-space so optimizers can move
/// unconstrained. phi is the signal variance, alpha the inverse squared
/// length-scale, sigma2 the observation noise variance before flooring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub log_phi: f64,
    pub log_alpha: f64,
    pub log_sigma2: f64,
}

impl KernelParams {
    pub fn from_natural(phi: f64, alpha: f64, sigma2: f64) -> Result<Self> {
        if !(phi > 0.0) || !(alpha > 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::Domain(format!(
                "kernel parameters must be positive (phi={}, alpha={}, sigma2={})",
                phi, alpha, sigma2
            )));
        }
        Ok(Self {
            log_phi: phi.ln(),
            log_alpha: alpha.ln(),
            log_sigma2: sigma2.ln(),
        })
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Raw noise variance, before the floor.
    pub fn sigma2_raw(&self) -> f64 {
        self.log_sigma2.exp()
    }

    /// Noise variance actually applied to the Gram diagonal.
    pub fn sigma2_effective(&self) -> f64 {
        self.sigma2_raw() + NOISE_FLOOR_RATIO * self.phi()
    }
}

/// phi * exp(-alpha (x-y)^2).
pub fn kernel(x: f64, y: f64, params: &KernelParams) -> f64 {
    params.phi() * (-params.alpha() * (x - y) * (x - y)).exp()
}

fn gram(xs: &[f64], params: &KernelParams) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| kernel(xs[i], xs[j], params))
}

fn cross_gram(xs: &[f64], qs: &[f64], params: &KernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), qs.len(), |i, j| kernel(xs[i], qs[j], params))
}

/// Gradient of the log marginal likelihood, log-space hyperparameter
/// components plus one component per latent input.
#[derive(Debug, Clone)]
pub struct GpGrad {
    pub log_phi: f64,
    pub log_alpha: f64,
    pub log_sigma2: f64,
    pub x: Vec<f64>,
}

/// One output dimension conditioned on shared latent inputs.
///
/// Holds the Cholesky factor of A = K + sigma2_eff I (plus any escalated
/// jitter) and the solved weights A^{-1} y.
#[derive(Debug, Clone)]
pub struct GpDim {
    train_x: Vec<f64>,
    train_y: DVector<f64>,
    params: KernelParams,
    chol: Option<nalgebra::linalg::Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    log_det: f64,
    /// Escalated jitter added beyond the effective noise, 0 when unneeded.
    extra_jitter: f64,
}

impl GpDim {
    pub fn new(train_x: Vec<f64>, train_y: Vec<f64>, params: KernelParams) -> Result<Self> {
        if train_x.len() != train_y.len() {
            return Err(Error::Domain(format!(
                "input/target length mismatch: {} vs {}",
                train_x.len(),
                train_y.len()
            )));
        }
        if train_x.iter().chain(train_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite training values".into()));
        }
        let n = train_x.len();
        let train_y = DVector::from_vec(train_y);
        if n == 0 {
            return Ok(Self {
                train_x,
                train_y,
                params,
                chol: None,
                weights: DVector::zeros(0),
                log_det: 0.0,
                extra_jitter: 0.0,
            });
        }

        let base = gram(&train_x, &params);
        let noise = params.sigma2_effective();
        let phi = params.phi();
        let mut extra_jitter = 0.0;
        let mut attempt = NOISE_FLOOR_RATIO * phi;
        let chol = loop {
            let mut a = base.clone();
            for i in 0..n {
                a[(i, i)] += noise + extra_jitter;
            }
            match nalgebra::linalg::Cholesky::new(a) {
                Some(c) => break c,
                None => {
                    if extra_jitter >= JITTER_MAX_RATIO * phi {
                        return Err(Error::Conditioning(format!(
                            "Gram matrix not positive definite at jitter {:.3e}",
                            extra_jitter
                        )));
                    }
                    extra_jitter = attempt;
                    attempt *= 10.0;
                }
            }
        };

        let mut log_det = 0.0;
        for i in 0..n {
            log_det += chol.l_dirty()[(i, i)].ln();
        }
        log_det *= 2.0;
        let weights = chol.solve(&train_y);
        Ok(Self {
            train_x,
            train_y,
            params,
            chol: Some(chol),
            weights,
            log_det,
            extra_jitter,
        })
    }

    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn train_x(&self) -> &[f64] {
        &self.train_x
    }

    pub fn extra_jitter(&self) -> f64 {
        self.extra_jitter
    }

    /// -1/2 y' A^{-1} y - 1/2 log det A - n/2 log 2 pi.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n() as f64;
        if self.n() == 0 {
            return 0.0;
        }
        let quad = self.train_y.dot(&self.weights);
        -0.5 * quad - 0.5 * self.log_det - 0.5 * n * (2.0 * PI).ln()
    }

    /// Analytic gradient via S = w w' - A^{-1} and 1/2 tr(S dA/dtheta).
    /// The escalated jitter, when present, is held constant.
    pub fn grad_log_marginal(&self) -> GpGrad {
        let (datafit_x, complexity_x, hyper) = self.grad_parts();
        GpGrad {
            log_phi: hyper.0,
            log_alpha: hyper.1,
            log_sigma2: hyper.2,
            x: datafit_x
                .iter()
                .zip(&complexity_x)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Latent gradient split into the data-fit part (from w w') and the
    /// complexity part (from -A^{-1}), plus hyperparameter components.
    pub fn grad_parts(&self) -> (Vec<f64>, Vec<f64>, (f64, f64, f64)) {
        let n = self.n();
        if n == 0 {
            return (Vec::new(), Vec::new(), (0.0, 0.0, 0.0));
        }
        let chol = self.chol.as_ref().unwrap();
        let a_inv = chol.inverse();
        let w = &self.weights;

        let params = &self.params;
        let phi = params.phi();
        let alpha = params.alpha();
        let k = gram(&self.train_x, params);

        // tr(S K) and tr(S (K .* -alpha D)) accumulated elementwise.
        let mut tr_sk = 0.0;
        let mut tr_skd = 0.0;
        let mut tr_s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s_ij = w[i] * w[j] - a_inv[(i, j)];
                let dx = self.train_x[i] - self.train_x[j];
                tr_sk += s_ij * k[(i, j)];
                tr_skd += s_ij * k[(i, j)] * dx * dx;
                if i == j {
                    tr_s += s_ij;
                }
            }
        }
        // dA/dlog phi = K + floor * phi * I through the noise floor.
        let g_log_phi = 0.5 * (tr_sk + NOISE_FLOOR_RATIO * phi * tr_s);
        let g_log_alpha = 0.5 * (-alpha) * tr_skd;
        let g_log_sigma2 = 0.5 * params.sigma2_raw() * tr_s;

        let mut datafit = vec![0.0; n];
        let mut complexity = vec![0.0; n];
        for i in 0..n {
            let mut acc_d = 0.0;
            let mut acc_c = 0.0;
            for b in 0..n {
                if b == i {
                    continue;
                }
                let dk = -2.0 * alpha * (self.train_x[i] - self.train_x[b]) * k[(i, b)];
                acc_d += w[i] * w[b] * dk;
                acc_c += -a_inv[(i, b)] * dk;
            }
            datafit[i] = acc_d;
            complexity[i] = acc_c;
        }
        (datafit, complexity, (g_log_phi, g_log_alpha, g_log_sigma2))
    }

    /// Noise-free predictive mean and covariance of the latent function at
    /// the query points. An empty training set yields the prior moments.
    pub fn posterior_moments(&self, query_x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if query_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite query point".into()));
        }
        let kqq = gram(query_x, &self.params);
        if self.n() == 0 {
            return Ok((DVector::zeros(query_x.len()), kqq));
        }
        let chol = self.chol.as_ref().unwrap();
        let kq = cross_gram(&self.train_x, query_x, &self.params);
        let mean = kq.transpose() * &self.weights;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kq)
            .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
        let mut cov = kqq - v.transpose() * &v;
        // enforce symmetry lost to rounding
        let m = query_x.len();
        for i in 0..m {
            for j in 0..i {
                let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = avg;
                cov[(j, i)] = avg;
            }
        }
        Ok((mean, cov))
    }

    /// Predictive means only, cheaper than full moments on large grids.
    pub fn posterior_mean(&self, query_x: &[f64]) -> DVector<f64> {
        if self.n() == 0 {
            return DVector::zeros(query_x.len());
        }
        let kq = cross_gram(&self.train_x, query_x, &self.params);
        kq.transpose() * &self.weights
    }

    /// Predictive means and pointwise variances on a grid, skipping the
    /// full covariance.
    pub fn posterior_mean_var(&self, query_x: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let m = query_x.len();
        let phi = self.params.phi();
        if self.n() == 0 {
            return Ok((DVector::zeros(m), DVector::from_element(m, phi)));
        }
        let chol = self.chol.as_ref().unwrap();
        let kq = cross_gram(&self.train_x, query_x, &self.params);
        let mean = kq.transpose() * &self.weights;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kq)
            .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
        let mut var = DVector::from_element(m, phi);
        for j in 0..m {
            let col = v.column(j);
            var[j] -= col.dot(&col);
            if var[j] < 0.0 {
                var[j] = 0.0;
            }
        }
        Ok((mean, var))
    }
}
