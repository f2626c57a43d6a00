//! Entropy-based and classical ELBOs for Laplace-prior sparse coding, with analytic
//! gradients.
//!
//! For Gaussian posteriors `q_n = N(nu_n, T_n)` and a dictionary `W~` with unit-norm
//! columns, the optimal scales and noise variance are
//!
//! ```text
//! lambda_h = 1/N sum_n tau_nh M(nu_nh / tau_nh),            tau_nh = sqrt(T_n[h,h])
//! sigma2   = 1/(D N) sum_n [ tr(W~^T W~ T_n) + ||W~ nu_n - x_n||^2 ]
//! ```
//!
//! and the annealed entropy objective is
//!
//! ```text
//! F = 1/N sum_n H[q_n] - gamma * sum_h log(2 e lambda_h) - delta * D/2 log(2 pi e sigma2).
//! ```
//!
//! With `gamma = delta = 1` it equals the classical ELBO evaluated at `(lambda, sigma2)`.
//!
//! Gradients are taken with respect to the flat posterior blocks of [`PosteriorSet`]
//! (log-parameterized), the ambient dictionary `W~` and the dictionary preimage. The
//! normalization map `u = v/||v||` contributes the Jacobian `(I - u u^T)/||v||`.
//!
//! All sums over datapoints are reduced pairwise in index order, so results do not
//! depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tri_index, Dataset, DictionaryPreimage, ModelParams, PosteriorKind, PosteriorSet};
use crate::numeric::{pairwise_sum, pairwise_sum_vecs};
use crate::special::{m_function_with, ErfBackend, HALF_LOG_2PIE, LOG_2PIE, SQRT_2_OVER_PI};

/// Weights `(gamma, delta)` on the prior and likelihood entropies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingWeights {
    pub gamma: f64,
    pub delta: f64,
}

impl Default for AnnealingWeights {
    fn default() -> Self {
        Self::UNANNEALED
    }
}

impl AnnealingWeights {
    pub const UNANNEALED: Self = Self { gamma: 1.0, delta: 1.0 };

    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0 && delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!("annealing weights must be finite and >= 0, got ({gamma}, {delta})")));
        }
        Ok(Self { gamma, delta })
    }

    /// beta-annealing: `(1, 1/beta)`.
    pub fn beta(beta: f64) -> Result<Self> {
        Self::new(1.0, 1.0 / beta)
    }

    /// Energy tempering: `(c, c)`.
    pub fn tempering(c: f64) -> Result<Self> {
        Self::new(c, c)
    }
}

/// The three entropies, the induced optimal scales and variance, and the objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub q_entropy_avg: f64,
    pub prior_entropy: f64,
    pub likelihood_entropy: f64,
    pub lambda_opt: Vec<f64>,
    pub sigma2_opt: f64,
    pub total: f64,
}

/// Gradients of the entropy objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradients {
    /// Flat gradient, same layout as [`PosteriorSet::params`].
    pub posterior: Vec<f64>,
    /// Gradient with respect to the unconstrained preimage.
    pub preimage: DMatrix<f64>,
    /// Gradient with respect to the entries of `W~` itself.
    pub w_tilde: DMatrix<f64>,
}

/// Gradients of the classical ELBO.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalGradients {
    pub posterior: Vec<f64>,
    pub w_tilde: DMatrix<f64>,
    pub lambdas: DVector<f64>,
    pub sigma2: f64,
}

/// Per-datapoint quantities shared by value and gradient passes.
struct PointStats {
    entropy: f64,
    tau: Vec<f64>,
    softmag: Vec<f64>,
    /// `tr(W~^T W~ T) + ||W~ nu - x||^2`
    energy: f64,
    /// Dense covariance; only kept for full and low-rank families.
    cov: Option<DMatrix<f64>>,
}

/// Cached inputs of one evaluation: dictionary, its Gram matrix, data columns and residuals.
pub(crate) struct Problem<'a> {
    pub post: &'a PosteriorSet,
    pub w: &'a DMatrix<f64>,
    pub gram: DMatrix<f64>,
    /// `W~ nu_n - x_n` as columns, `D x N`.
    pub resid: DMatrix<f64>,
    pub backend: ErfBackend,
}

impl<'a> Problem<'a> {
    pub fn new(post: &'a PosteriorSet, w: &'a DMatrix<f64>, xcols: &DMatrix<f64>, backend: ErfBackend) -> Result<Self> {
        check_shapes(post, w, xcols)?;
        let gram = w.transpose() * w;
        let resid = w * post.nu_matrix() - xcols;
        Ok(Self { post, w, gram, resid, backend })
    }

    fn d(&self) -> usize {
        self.w.nrows()
    }

    fn h(&self) -> usize {
        self.w.ncols()
    }

    fn n(&self) -> usize {
        self.post.n()
    }

    fn point_stats(&self, n: usize) -> PointStats {
        let h = self.h();
        let block = self.post.block(n);
        let nu = &block[..h];
        let rest = &block[h..];
        let r = self.resid.column(n);
        let sq_resid = r.norm_squared();
        let (entropy, tau, trace, cov) = match self.post.kind() {
            PosteriorKind::Diagonal => {
                let tau: Vec<f64> = rest.iter().map(|l| l.exp()).collect();
                let entropy = rest.iter().map(|l| HALF_LOG_2PIE + l).sum::<f64>();
                let trace = (0..h).map(|k| self.gram[(k, k)] * tau[k] * tau[k]).sum::<f64>();
                (entropy, tau, trace, None)
            }
            PosteriorKind::Full => {
                let l = unpack_chol(rest, h);
                let t = &l * l.transpose();
                let entropy = h as f64 * HALF_LOG_2PIE + (0..h).map(|i| rest[tri_index(i, i)]).sum::<f64>();
                let tau = (0..h).map(|k| t[(k, k)].sqrt()).collect();
                let trace = self.gram.dot(&t);
                (entropy, tau, trace, Some(t))
            }
            PosteriorKind::LowRank { rank } => {
                let t = low_rank_cov(rest, h, rank);
                let chol = t.clone().cholesky().expect("low-rank covariance is positive definite");
                let half_logdet = (0..h).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
                let entropy = h as f64 * HALF_LOG_2PIE + half_logdet;
                let tau = (0..h).map(|k| t[(k, k)].sqrt()).collect();
                let trace = self.gram.dot(&t);
                (entropy, tau, trace, Some(t))
            }
        };
        let softmag = nu
            .iter()
            .zip(&tau)
            .map(|(&m, &t)| t * m_function_with(m / t, self.backend))
            .collect();
        PointStats { entropy, tau, softmag, energy: trace + sq_resid, cov }
    }

    fn all_stats(&self) -> Vec<PointStats> {
        (0..self.n()).into_par_iter().map(|n| self.point_stats(n)).collect()
    }

    /// `(1/N) sum_n softmag_nh` per latent.
    fn mean_softmag(&self, stats: &[PointStats]) -> Vec<f64> {
        let n = stats.len() as f64;
        let h = self.h();
        let cols: Vec<Vec<f64>> = (0..h)
            .map(|k| stats.iter().map(|s| s.softmag[k]).collect::<Vec<_>>())
            .collect();
        cols.iter().map(|c| pairwise_sum(c) / n).collect()
    }

    fn mean_energy(&self, stats: &[PointStats]) -> f64 {
        let e: Vec<f64> = stats.iter().map(|s| s.energy).collect();
        pairwise_sum(&e) / stats.len() as f64
    }

    fn mean_entropy(&self, stats: &[PointStats]) -> f64 {
        let e: Vec<f64> = stats.iter().map(|s| s.entropy).collect();
        pairwise_sum(&e) / stats.len() as f64
    }

    /// Gradient with respect to the flat posterior blocks for an objective whose
    /// `Phi`-dependence is
    ///
    /// `1/N sum H[q_n] - sum_h prior_coef_h * sum_n softmag_nh - lik_coef/2 * sum_n energy_n`.
    fn posterior_gradient(&self, stats: &[PointStats], prior_coef: &[f64], lik_coef: f64) -> Vec<f64> {
        let h = self.h();
        let inv_n = 1.0 / self.n() as f64;
        let block_len = self.post.block_len();
        let kind = self.post.kind();
        let mut out = vec![0.0; self.post.params().len()];
        out.par_chunks_mut(block_len).enumerate().for_each(|(n, g)| {
            let block = self.post.block(n);
            let nu = &block[..h];
            let rest = &block[h..];
            let st = &stats[n];
            let wtr = self.w.tr_mul(&self.resid.column(n));
            // prior: d softmag/d nu = M'(a) = erf(a/sqrt2), d softmag/d tau = sqrt(2/pi) e^{-a^2/2}
            let mut g_tau = vec![0.0; h];
            for k in 0..h {
                let a = nu[k] / st.tau[k];
                let erf_term = self.backend.erf(a * std::f64::consts::FRAC_1_SQRT_2);
                g[k] = -prior_coef[k] * erf_term - lik_coef * wtr[k];
                g_tau[k] = -prior_coef[k] * SQRT_2_OVER_PI * (-0.5 * a * a).exp();
            }
            let g_rest = &mut g[h..];
            match kind {
                PosteriorKind::Diagonal => {
                    for k in 0..h {
                        let t = st.tau[k];
                        g_rest[k] = inv_n + t * g_tau[k] - lik_coef * self.gram[(k, k)] * t * t;
                    }
                }
                PosteriorKind::Full => {
                    let l = unpack_chol(rest, h);
                    let gt = self.cov_gradient(&g_tau, &st.tau, lik_coef);
                    let gl = 2.0 * gt * &l;
                    for i in 0..h {
                        for j in 0..i {
                            g_rest[tri_index(i, j)] = gl[(i, j)];
                        }
                        g_rest[tri_index(i, i)] = gl[(i, i)] * l[(i, i)] + inv_n;
                    }
                }
                PosteriorKind::LowRank { rank } => {
                    let t = st.cov.as_ref().expect("covariance cached for low-rank");
                    let mut gt = self.cov_gradient(&g_tau, &st.tau, lik_coef);
                    let t_inv = t.clone().cholesky().expect("positive definite").inverse();
                    gt += t_inv * (0.5 * inv_n);
                    let v = DMatrix::from_fn(h, rank, |i, k| rest[i * rank + k]);
                    let gv = 2.0 * &gt * v;
                    for i in 0..h {
                        for k in 0..rank {
                            g_rest[i * rank + k] = gv[(i, k)];
                        }
                        let s2 = (2.0 * rest[h * rank + i]).exp();
                        g_rest[h * rank + i] = gt[(i, i)] * 2.0 * s2;
                    }
                }
            }
        });
        out
    }

    /// Gradient with respect to the (symmetric) covariance, excluding the entropy term.
    fn cov_gradient(&self, g_tau: &[f64], tau: &[f64], lik_coef: f64) -> DMatrix<f64> {
        let mut gt = &self.gram * (-0.5 * lik_coef);
        for k in 0..self.h() {
            gt[(k, k)] += g_tau[k] / (2.0 * tau[k]);
        }
        gt
    }

    /// `-lik_coef * (W~ sum_n T_n + sum_n r_n nu_n^T)`.
    fn w_gradient(&self, stats: &[PointStats], lik_coef: f64) -> DMatrix<f64> {
        let h = self.h();
        let sum_t = match self.post.kind() {
            PosteriorKind::Diagonal => {
                let vals: Vec<Vec<f64>> = stats.iter().map(|s| s.tau.iter().map(|t| t * t).collect()).collect();
                DMatrix::from_diagonal(&DVector::from_vec(pairwise_sum_vecs(&vals, h)))
            }
            _ => {
                let vals: Vec<Vec<f64>> = stats
                    .iter()
                    .map(|s| s.cov.as_ref().expect("dense covariance").as_slice().to_vec())
                    .collect();
                DMatrix::from_vec(h, h, pairwise_sum_vecs(&vals, h * h))
            }
        };
        let nu = self.post.nu_matrix();
        (self.w * sum_t + &self.resid * nu.transpose()) * (-lik_coef)
    }
}

fn check_shapes(post: &PosteriorSet, w: &DMatrix<f64>, xcols: &DMatrix<f64>) -> Result<()> {
    if post.h() != w.ncols() {
        return Err(Error::Shape(format!("posteriors have H={} but dictionary has {} columns", post.h(), w.ncols())));
    }
    if xcols.nrows() != w.nrows() {
        return Err(Error::Shape(format!("data has D={} but dictionary has {} rows", xcols.nrows(), w.nrows())));
    }
    if xcols.ncols() != post.n() {
        return Err(Error::Shape(format!("data has N={} but there are {} posteriors", xcols.ncols(), post.n())));
    }
    Ok(())
}

pub(crate) fn unpack_chol(rest: &[f64], h: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(h, h);
    for i in 0..h {
        for j in 0..i {
            l[(i, j)] = rest[tri_index(i, j)];
        }
        l[(i, i)] = rest[tri_index(i, i)].exp();
    }
    l
}

pub(crate) fn low_rank_cov(rest: &[f64], h: usize, rank: usize) -> DMatrix<f64> {
    let v = DMatrix::from_fn(h, rank, |i, k| rest[i * rank + k]);
    let mut t = &v * v.transpose();
    for i in 0..h {
        t[(i, i)] += (2.0 * rest[h * rank + i]).exp();
    }
    t
}

/// Projects an ambient dictionary gradient onto the preimage through `u = v / ||v||`.
pub fn preimage_gradient(preimage: &DictionaryPreimage, w_grad: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(preimage.d(), preimage.h());
    for (h, v) in preimage.v.column_iter().enumerate() {
        let norm = v.norm();
        let u = v / norm;
        let g = w_grad.column(h);
        let proj = &g - &u * u.dot(&g);
        out.column_mut(h).copy_from(&(proj / norm));
    }
    out
}

/// Optimal Laplace scales `lambda_h = 1/N sum_n tau_nh M(nu_nh / tau_nh)`.
pub fn lambda_opt(posteriors: &PosteriorSet) -> DVector<f64> {
    let h = posteriors.h();
    let n = posteriors.n();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let e = posteriors.entry(i);
            let t = e.covariance_of();
            let nu = e.nu();
            (0..h)
                .map(|k| {
                    let tau = t[(k, k)].sqrt();
                    tau * m_function_with(nu[k] / tau, ErfBackend::Libm)
                })
                .collect()
        })
        .collect();
    let sums = pairwise_sum_vecs(&cols, h);
    DVector::from_iterator(h, sums.into_iter().map(|s| s / n as f64))
}

/// Optimal noise variance for posteriors, dictionary and data.
pub fn sigma2_opt(posteriors: &PosteriorSet, w_tilde: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    let xcols = data.columns();
    let p = Problem::new(posteriors, w_tilde, &xcols, ErfBackend::Libm)?;
    let stats = p.all_stats();
    Ok(p.mean_energy(&stats) / p.d() as f64)
}

pub(crate) fn breakdown_from(
    q_entropy_avg: f64,
    lambdas: Vec<f64>,
    sigma2: f64,
    d: usize,
    weights: AnnealingWeights,
) -> ElboBreakdown {
    let prior_entropy: f64 = lambdas.iter().map(|l| (2.0 * l).ln() + 1.0).sum();
    let likelihood_entropy = 0.5 * d as f64 * (LOG_2PIE + sigma2.ln());
    let total = q_entropy_avg - weights.gamma * prior_entropy - weights.delta * likelihood_entropy;
    ElboBreakdown { q_entropy_avg, prior_entropy, likelihood_entropy, lambda_opt: lambdas, sigma2_opt: sigma2, total }
}

/// Entropy objective on data given as columns, with a chosen erf backend.
pub(crate) fn entropy_elbo_cols(
    post: &PosteriorSet,
    w: &DMatrix<f64>,
    xcols: &DMatrix<f64>,
    weights: AnnealingWeights,
    backend: ErfBackend,
) -> Result<ElboBreakdown> {
    let p = Problem::new(post, w, xcols, backend)?;
    let stats = p.all_stats();
    Ok(breakdown_of(&p, &stats, weights))
}

fn breakdown_of(p: &Problem<'_>, stats: &[PointStats], weights: AnnealingWeights) -> ElboBreakdown {
    let q = p.mean_entropy(stats);
    let lambdas = p.mean_softmag(stats);
    let sigma2 = p.mean_energy(stats) / p.d() as f64;
    breakdown_from(q, lambdas, sigma2, p.d(), weights)
}

/// Value and gradients of the entropy objective on data given as columns.
pub(crate) fn entropy_elbo_and_gradients_cols(
    post: &PosteriorSet,
    preimage: &DictionaryPreimage,
    w: &DMatrix<f64>,
    xcols: &DMatrix<f64>,
    weights: AnnealingWeights,
    backend: ErfBackend,
) -> Result<(ElboBreakdown, ElboGradients)> {
    let p = Problem::new(post, w, xcols, backend)?;
    let stats = p.all_stats();
    let bd = breakdown_of(&p, &stats, weights);
    let n = p.n() as f64;
    let prior_coef: Vec<f64> = bd.lambda_opt.iter().map(|l| weights.gamma / (n * l)).collect();
    let lik_coef = weights.delta / (n * bd.sigma2_opt);
    let posterior = p.posterior_gradient(&stats, &prior_coef, lik_coef);
    let w_tilde = p.w_gradient(&stats, lik_coef);
    let preimage = preimage_gradient(preimage, &w_tilde);
    Ok((bd, ElboGradients { posterior, preimage, w_tilde }))
}

/// Value and posterior-only gradient (dictionary fixed), used by E-steps.
pub(crate) fn entropy_elbo_posterior_gradient_cols(
    post: &PosteriorSet,
    w: &DMatrix<f64>,
    xcols: &DMatrix<f64>,
    weights: AnnealingWeights,
    backend: ErfBackend,
) -> Result<(ElboBreakdown, Vec<f64>)> {
    let p = Problem::new(post, w, xcols, backend)?;
    let stats = p.all_stats();
    let bd = breakdown_of(&p, &stats, weights);
    let n = p.n() as f64;
    let prior_coef: Vec<f64> = bd.lambda_opt.iter().map(|l| weights.gamma / (n * l)).collect();
    let lik_coef = weights.delta / (n * bd.sigma2_opt);
    Ok((bd, p.posterior_gradient(&stats, &prior_coef, lik_coef)))
}

/// The annealed entropy objective with `W~` obtained by normalizing the preimage.
pub fn entropy_elbo(
    posteriors: &PosteriorSet,
    preimage: &DictionaryPreimage,
    data: &Dataset,
    weights: AnnealingWeights,
) -> Result<ElboBreakdown> {
    let w = preimage.w_tilde()?;
    entropy_elbo_cols(posteriors, &w, &data.columns(), weights, ErfBackend::Libm)
}

/// Same as [`entropy_elbo`] for an already normalized dictionary.
pub fn entropy_elbo_for_dictionary(
    posteriors: &PosteriorSet,
    w_tilde: &DMatrix<f64>,
    data: &Dataset,
    weights: AnnealingWeights,
) -> Result<ElboBreakdown> {
    entropy_elbo_cols(posteriors, w_tilde, &data.columns(), weights, ErfBackend::Libm)
}

/// Analytic gradients of [`entropy_elbo`]`.total`.
pub fn entropy_elbo_gradients(
    posteriors: &PosteriorSet,
    preimage: &DictionaryPreimage,
    data: &Dataset,
    weights: AnnealingWeights,
) -> Result<ElboGradients> {
    let w = preimage.w_tilde()?;
    entropy_elbo_and_gradients_cols(posteriors, preimage, &w, &data.columns(), weights, ErfBackend::Libm)
        .map(|(_, g)| g)
}

/// Closed-form classical ELBO at arbitrary `(lambda, sigma2)`.
pub fn classical_elbo(posteriors: &PosteriorSet, theta: &ModelParams, data: &Dataset) -> Result<f64> {
    let xcols = data.columns();
    let p = Problem::new(posteriors, &theta.w_tilde, &xcols, ErfBackend::Libm)?;
    let stats = p.all_stats();
    Ok(classical_value(&p, &stats, theta))
}

fn classical_value(p: &Problem<'_>, stats: &[PointStats], theta: &ModelParams) -> f64 {
    let d = p.d() as f64;
    let h = p.h() as f64;
    let s2 = theta.sigma2;
    let energy = p.mean_energy(stats);
    let softmag = p.mean_softmag(stats);
    let likelihood = -0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() - energy / (2.0 * s2);
    let prior = -h * std::f64::consts::LN_2
        - softmag.iter().zip(theta.lambdas.iter()).map(|(s, l)| s / l + l.ln()).sum::<f64>();
    likelihood + prior + p.mean_entropy(stats)
}

/// Analytic gradients of [`classical_elbo`] with respect to posteriors, `W~`, `lambda` and `sigma2`.
pub fn classical_elbo_gradients(
    posteriors: &PosteriorSet,
    theta: &ModelParams,
    data: &Dataset,
) -> Result<ClassicalGradients> {
    let xcols = data.columns();
    let p = Problem::new(posteriors, &theta.w_tilde, &xcols, ErfBackend::Libm)?;
    let stats = p.all_stats();
    let n = p.n() as f64;
    let prior_coef: Vec<f64> = theta.lambdas.iter().map(|l| 1.0 / (n * l)).collect();
    let lik_coef = 1.0 / (n * theta.sigma2);
    let posterior = p.posterior_gradient(&stats, &prior_coef, lik_coef);
    let w_tilde = p.w_gradient(&stats, lik_coef);
    let softmag = p.mean_softmag(&stats);
    let lambdas = DVector::from_iterator(
        p.h(),
        theta.lambdas.iter().zip(&softmag).map(|(l, s)| -1.0 / l + s / (l * l)),
    );
    let energy = p.mean_energy(&stats);
    let s2 = theta.sigma2;
    let sigma2 = -0.5 * p.d() as f64 / s2 + energy / (2.0 * s2 * s2);
    Ok(ClassicalGradients { posterior, w_tilde, lambdas, sigma2 })
}

/// Local objective relating the entropy ELBO to l1 sparse coding (to be minimized):
/// `D/2 log sigma2_opt + gamma * sum_h log lambda_opt_h`. Diagonal posteriors only.
///
/// With `gamma = 1` it equals `-(prior_entropy + likelihood_entropy)` up to the constants
/// `D/2 log(2 pi e) + H log(2e)`.
pub fn l1_local_objective(
    posteriors: &PosteriorSet,
    preimage: &DictionaryPreimage,
    data: &Dataset,
    gamma: f64,
) -> Result<f64> {
    if posteriors.kind() != PosteriorKind::Diagonal {
        return Err(Error::Domain("l1_local_objective requires diagonal posteriors".into()));
    }
    let bd = entropy_elbo(posteriors, preimage, data, AnnealingWeights::UNANNEALED)?;
    let d = data.d() as f64;
    Ok(0.5 * d * bd.sigma2_opt.ln() + gamma * bd.lambda_opt.iter().map(|l| l.ln()).sum::<f64>())
}

/// `Theta_opt(Phi, W~) = (lambda_opt, W~, sigma2_opt)`.
pub fn theta_opt(posteriors: &PosteriorSet, w_tilde: &DMatrix<f64>, data: &Dataset) -> Result<ModelParams> {
    let bd = entropy_elbo_for_dictionary(posteriors, w_tilde, data, AnnealingWeights::UNANNEALED)?;
    Ok(ModelParams {
        w_tilde: w_tilde.clone(),
        lambdas: DVector::from_vec(bd.lambda_opt),
        sigma2: bd.sigma2_opt,
    })
}
