//! Scaled conjugate gradient maximizer.
//!
//! Moller's variant: the step size comes from a Rayleigh-quotient curvature
//! estimate obtained by gradient differencing, stabilized by an adaptive
//! damping term lambda. No line searches. The driver maximizes by running
//! the canonical minimization recurrence on the negated objective.
//!
//! Objectives may return -inf to veto a region; the corresponding trial
//! step fails the comparison test and the damping grows, so the iterate
//! never leaves the finite domain.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScgSettings {
    pub max_iters: usize,
    /// Stop when the accepted objective improves by less than
    /// rel_tol * (1 + |value|). Zero disables.
    pub rel_tol: f64,
    /// Stop when the gradient norm drops below this. Zero disables.
    pub grad_tol: f64,
    pub init_lambda: f64,
}

impl Default for ScgSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-7,
            grad_tol: 1e-6,
            init_lambda: 1e-6,
        }
    }
}

impl ScgSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) || !(self.grad_tol >= 0.0) || !(self.init_lambda > 0.0) {
            return Err(Error::Domain(
                "tolerances must be nonnegative and init_lambda positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScgResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Accepted objective values, starting at the initial point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn add_scaled(base: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + t * d).collect()
}

fn finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

const SIGMA0: f64 = 1e-4;
const LAMBDA_CEIL: f64 = 1e200;

/// Maximizes `objective` from `x0`. The callable returns the value and its
/// gradient; a value of -inf rejects the point. The run is deterministic.
pub fn maximize<F>(mut objective: F, x0: &[f64], settings: &ScgSettings) -> Result<ScgResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    settings.validate()?;
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Domain("empty parameter vector".into()));
    }

    // Internally minimize e = -objective.
    let eval = |obj: &mut F, w: &[f64]| -> (f64, Vec<f64>) {
        let (v, mut g) = obj(w);
        for gi in &mut g {
            *gi = -*gi;
        }
        (-v, g)
    };

    let mut w = x0.to_vec();
    let (mut e_val, mut grad) = eval(&mut objective, &w);
    if !finite(e_val, &grad) {
        return Err(Error::Domain(
            "objective is not finite at the initial point".into(),
        ));
    }

    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut p = r.clone();
    let mut lambda = settings.init_lambda;
    let mut lambda_bar = 0.0;
    let mut success = true;
    let mut delta_raw = 0.0;
    let mut trace = vec![-e_val];
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;

        let p_norm2 = dot(&p, &p);
        if p_norm2 == 0.0 {
            break;
        }

        if success {
            // Curvature along p from a finite gradient difference.
            let mut sigma = SIGMA0 / p_norm2.sqrt();
            let mut probed = false;
            for _ in 0..60 {
                let w_probe = add_scaled(&w, &p, sigma);
                let (pv, pg) = eval(&mut objective, &w_probe);
                if finite(pv, &pg) {
                    let s: Vec<f64> = pg
                        .iter()
                        .zip(&grad)
                        .map(|(a, b)| (a - b) / sigma)
                        .collect();
                    delta_raw = dot(&p, &s);
                    probed = true;
                    break;
                }
                sigma /= 10.0;
            }
            if !probed {
                delta_raw = 0.0;
            }
        }

        // Damped curvature; force positive definiteness along p.
        let mut delta = delta_raw + (lambda - lambda_bar) * p_norm2;
        if delta <= 0.0 {
            lambda_bar = 2.0 * (lambda - delta / p_norm2);
            delta = -delta + lambda * p_norm2;
            lambda = lambda_bar;
        }

        let mu = dot(&p, &r);
        let alpha = mu / delta;

        let w_trial = add_scaled(&w, &p, alpha);
        let (e_trial, grad_trial) = eval(&mut objective, &w_trial);

        // Comparison parameter; non-finite trials count as failures.
        let cmp = if e_trial.is_finite() {
            2.0 * delta * (e_val - e_trial) / (mu * mu)
        } else {
            -1.0
        };

        if cmp >= 0.0 && finite(e_trial, &grad_trial) {
            let e_prev = e_val;
            w = w_trial;
            e_val = e_trial;
            grad = grad_trial;
            let r_new: Vec<f64> = grad.iter().map(|g| -g).collect();
            lambda_bar = 0.0;
            success = true;

            if iterations % dim == 0 {
                p = r_new.clone();
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &r)) / mu;
                p = r_new.iter().zip(&p).map(|(rn, pi)| rn + beta * pi).collect();
            }
            r = r_new;

            if cmp >= 0.75 {
                lambda *= 0.25;
            }

            trace.push(-e_val);
            let grad_norm = norm(&r);
            if grad_norm < settings.grad_tol {
                break;
            }
            let change = (e_prev - e_val).abs();
            if change < settings.rel_tol * (1.0 + e_val.abs()) {
                break;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }

        if cmp < 0.25 {
            lambda += delta * (1.0 - cmp) / p_norm2;
        }
        if lambda > LAMBDA_CEIL {
            break;
        }
    }

    Ok(ScgResult {
        value: -e_val,
        grad_norm: norm(&r),
        x: w,
        trace,
        iterations,
    })
}
