//! Brute-force reference computations used to check the closed forms: a Monte-Carlo ELBO
//! estimator, adaptive quadrature of `E|z|` and central finite differences.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelParams, PosteriorParams, PosteriorSet};
use crate::numeric::{derive_seed, pairwise_sum, rng};

/// Default relative finite-difference step, scaled by `max(1, |x_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Maximum bisection depth of the adaptive Simpson rule.
const QUAD_MAX_DEPTH: u32 = 60;
/// Levels that are always refined, so a narrow peak cannot slip between the first nodes.
const QUAD_MIN_DEPTH: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Monte-Carlo estimate of the ELBO `1/N sum_n E_q[log p(x_n|z) + log p(z) - log q_n(z)]`
/// at arbitrary `theta`, using `n_samples` draws per datapoint.
///
/// Datapoint `n` draws from its own generator seeded with `derive_seed(seed, n)`, so the
/// estimate does not depend on scheduling.
pub fn mc_elbo(
    posteriors: &PosteriorSet,
    theta: &ModelParams,
    data: &Dataset,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 100 {
        return Err(Error::Domain(format!("mc_elbo needs at least 100 samples, got {n_samples}")));
    }
    let (h, d, n) = (posteriors.h(), data.d(), data.n());
    if theta.h() != h || theta.d() != d || posteriors.n() != n {
        return Err(Error::Shape(format!(
            "posteriors H={h} N={}, theta {}x{}, data N={n} D={d}",
            posteriors.n(),
            theta.d(),
            theta.h()
        )));
    }
    let log_norm_lik = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * theta.sigma2).ln();
    let log_norm_prior: f64 = theta.lambdas.iter().map(|l| -(2.0 * l).ln()).sum();
    let log_norm_q = -0.5 * h as f64 * (2.0 * std::f64::consts::PI).ln();

    let per_point: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let entry = posteriors.entry(i);
            let chol = sampling_factor(&entry);
            let log_det_half: f64 = (0..h).map(|k| chol[(k, k)].ln()).sum();
            let nu = entry.nu();
            let x = data.x.row(i).transpose();
            let mut r = rng(derive_seed(seed, i as u64));
            let mut vals = Vec::with_capacity(n_samples);
            let mut eps = DVector::zeros(h);
            for _ in 0..n_samples {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut r);
                }
                let z = nu + &chol * &eps;
                let resid = &theta.w_tilde * &z - &x;
                let log_lik = log_norm_lik - resid.norm_squared() / (2.0 * theta.sigma2);
                let log_prior = log_norm_prior
                    - z.iter().zip(theta.lambdas.iter()).map(|(z, l)| z.abs() / l).sum::<f64>();
                let log_q = log_norm_q - log_det_half - 0.5 * eps.norm_squared();
                vals.push(log_lik + log_prior - log_q);
            }
            let mean = pairwise_sum(&vals) / n_samples as f64;
            let dev: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = pairwise_sum(&dev) / (n_samples - 1) as f64;
            (mean, var)
        })
        .collect();

    let means: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    let vars: Vec<f64> = per_point.iter().map(|p| p.1).collect();
    let mean = pairwise_sum(&means) / n as f64;
    let std_error = (pairwise_sum(&vars) / n_samples as f64).sqrt() / n as f64;
    Ok(McEstimate { mean, std_error, n_samples })
}

/// Lower-triangular `L` with `L L^T = T`.
fn sampling_factor(entry: &PosteriorParams) -> DMatrix<f64> {
    match entry {
        PosteriorParams::Full { chol, .. } => chol.clone(),
        PosteriorParams::Diagonal { log_tau, .. } => DMatrix::from_diagonal(&log_tau.map(f64::exp)),
        PosteriorParams::LowRank { .. } => entry
            .covariance_of()
            .cholesky()
            .expect("low-rank covariance is positive definite")
            .unpack(),
    }
}

/// `E|z|` for `z ~ N(nu, tau^2)` by adaptive Simpson quadrature over `[nu - 12 tau, nu + 12 tau]`,
/// split at the kink `z = 0`, to absolute tolerance `tolerance`.
pub fn quad_abs_moment(nu: f64, tau: f64, tolerance: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) || !(tolerance > 0.0) || !nu.is_finite() {
        return Err(Error::Domain(format!(
            "quad_abs_moment needs finite nu, tau > 0 and tolerance > 0, got ({nu}, {tau}, {tolerance})"
        )));
    }
    let norm = 1.0 / (tau * (2.0 * std::f64::consts::PI).sqrt());
    let f = |z: f64| {
        let u = (z - nu) / tau;
        norm * (-0.5 * u * u).exp() * z.abs()
    };
    let (lo, hi) = (nu - 12.0 * tau, nu + 12.0 * tau);
    let pieces: Vec<(f64, f64)> = if lo < 0.0 && hi > 0.0 { vec![(lo, 0.0), (0.0, hi)] } else { vec![(lo, hi)] };
    let tol = tolerance / pieces.len() as f64;
    let mut total = 0.0;
    for (a, b) in pieces {
        total += adaptive_simpson(&f, a, b, tol)?;
    }
    Ok(total)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if QUAD_MAX_DEPTH - depth >= QUAD_MIN_DEPTH && delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("refinement limit reached on [{a}, {b}]")));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Central differences `(f(x + h_i e_i) - f(x - h_i e_i)) / (2 h_i)` with `h_i = step * max(1, |x_i|)`.
pub fn finite_diff(objective: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let h = step * point[i].abs().max(1.0);
            x[i] = point[i] + h;
            let up = objective(&x);
            x[i] = point[i] - h;
            let down = objective(&x);
            x[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
