//! The reparameterized sparse coding model and its Gaussian variational posteriors.
//!
//! Generative model, with unit-norm dictionary columns and per-latent Laplace scales:
//!
//! ```text
//! p(z)     = prod_h 1/(2 lambda_h) exp(-|z_h| / lambda_h)
//! p(x | z) = N(x | W~ z, sigma2 I)
//! ```
//!
//! Posteriors are stored as flat parameter blocks, one block per datapoint, so that
//! optimizers can treat them as an unconstrained vector. Positivity is obtained by
//! log-parameterization: `log_tau` for diagonal posteriors, the log of the Cholesky
//! diagonal for full posteriors, and `log_s` for the diagonal part of low-rank posteriors.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::rng;

/// Tolerance on `||w_h|| = 1` accepted by [`ModelParams::new`].
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// `Theta = (W~, lambda, sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_tilde: DMatrix<f64>,
    pub lambdas: DVector<f64>,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(w_tilde: DMatrix<f64>, lambdas: DVector<f64>, sigma2: f64) -> Result<Self> {
        if w_tilde.ncols() != lambdas.len() {
            return Err(Error::Shape(format!(
                "dictionary has {} columns but {} scales were given",
                w_tilde.ncols(),
                lambdas.len()
            )));
        }
        for (h, col) in w_tilde.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Domain(format!("column {h} has norm {norm}, expected 1")));
            }
        }
        if let Some(h) = lambdas.iter().position(|l| !(*l > 0.0)) {
            return Err(Error::Domain(format!("scale {h} must be positive")));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self { w_tilde, lambdas, sigma2 })
    }

    pub fn d(&self) -> usize {
        self.w_tilde.nrows()
    }

    pub fn h(&self) -> usize {
        self.w_tilde.ncols()
    }
}

/// Unconstrained dictionary parameterization; `W~` is its column normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryPreimage {
    pub v: DMatrix<f64>,
}

impl DictionaryPreimage {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if let Some(index) = zero_column(&v) {
            return Err(Error::ZeroColumn { index });
        }
        Ok(Self { v })
    }

    /// i.i.d. standard normal entries.
    pub fn random(d: usize, h: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let v = DMatrix::from_fn(d, h, |_, _| StandardNormal.sample(&mut r));
        Self { v }
    }

    pub fn d(&self) -> usize {
        self.v.nrows()
    }

    pub fn h(&self) -> usize {
        self.v.ncols()
    }

    pub fn w_tilde(&self) -> Result<DMatrix<f64>> {
        normalize_columns(self)
    }

    /// Rescales every column to unit norm in place. `W~` is unchanged.
    pub fn renormalize(&mut self) {
        for mut col in self.v.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
    }
}

fn zero_column(v: &DMatrix<f64>) -> Option<usize> {
    v.column_iter().position(|c| c.iter().all(|x| *x == 0.0))
}

/// Divides each column by its Euclidean norm.
pub fn normalize_columns(preimage: &DictionaryPreimage) -> Result<DMatrix<f64>> {
    let mut w = preimage.v.clone();
    for (index, mut col) in w.column_iter_mut().enumerate() {
        let n = col.norm();
        if n == 0.0 {
            return Err(Error::ZeroColumn { index });
        }
        col /= n;
    }
    Ok(w)
}

/// Posterior family, with the number of flat parameters per datapoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PosteriorKind {
    Full,
    Diagonal,
    LowRank { rank: usize },
}

impl PosteriorKind {
    /// Length of one datapoint's parameter block.
    pub fn block_len(self, h: usize) -> usize {
        match self {
            PosteriorKind::Full => h + h * (h + 1) / 2,
            PosteriorKind::Diagonal => 2 * h,
            PosteriorKind::LowRank { rank } => h + h * rank + h,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PosteriorKind::Full => "full",
            PosteriorKind::Diagonal => "diag",
            PosteriorKind::LowRank { .. } => "lowrank",
        }
    }
}

/// Index of `L[i][j]` (`j <= i`) inside the packed lower triangle.
#[inline]
pub(crate) fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// `q(z) = N(z | nu, T)` in one of three parameterizations.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorParams {
    /// `T = chol chol^T`, `chol` lower triangular with positive diagonal.
    Full { nu: DVector<f64>, chol: DMatrix<f64> },
    /// `T = diag(exp(2 log_tau))`.
    Diagonal { nu: DVector<f64>, log_tau: DVector<f64> },
    /// `T = V V^T + diag(exp(2 log_s))`.
    LowRank { nu: DVector<f64>, v_factor: DMatrix<f64>, log_s: DVector<f64> },
}

impl PosteriorParams {
    /// Standard normal posterior `N(0, I)` in the requested parameterization.
    pub fn standard(kind: PosteriorKind, h: usize) -> Self {
        let nu = DVector::zeros(h);
        match kind {
            PosteriorKind::Full => PosteriorParams::Full { nu, chol: DMatrix::identity(h, h) },
            PosteriorKind::Diagonal => PosteriorParams::Diagonal { nu, log_tau: DVector::zeros(h) },
            PosteriorKind::LowRank { rank } => PosteriorParams::LowRank {
                nu,
                v_factor: DMatrix::zeros(h, rank),
                log_s: DVector::zeros(h),
            },
        }
    }

    pub fn kind(&self) -> PosteriorKind {
        match self {
            PosteriorParams::Full { .. } => PosteriorKind::Full,
            PosteriorParams::Diagonal { .. } => PosteriorKind::Diagonal,
            PosteriorParams::LowRank { v_factor, .. } => PosteriorKind::LowRank { rank: v_factor.ncols() },
        }
    }

    pub fn nu(&self) -> &DVector<f64> {
        match self {
            PosteriorParams::Full { nu, .. }
            | PosteriorParams::Diagonal { nu, .. }
            | PosteriorParams::LowRank { nu, .. } => nu,
        }
    }

    pub fn h(&self) -> usize {
        self.nu().len()
    }

    /// Checks shapes, the Cholesky diagonal sign and finiteness.
    pub fn validate(&self) -> Result<()> {
        let h = self.h();
        let finite = |it: &mut dyn Iterator<Item = &f64>| {
            for x in it {
                if !x.is_finite() {
                    return false;
                }
            }
            true
        };
        match self {
            PosteriorParams::Full { nu, chol } => {
                if chol.shape() != (h, h) {
                    return Err(Error::Shape(format!("chol must be {h}x{h}")));
                }
                for i in 0..h {
                    if !(chol[(i, i)] > 0.0) {
                        return Err(Error::Domain(format!("chol diagonal {i} must be positive")));
                    }
                    for j in i + 1..h {
                        if chol[(i, j)] != 0.0 {
                            return Err(Error::Domain("chol must be lower triangular".into()));
                        }
                    }
                }
                if !finite(&mut nu.iter().chain(chol.iter())) {
                    return Err(Error::Domain("non-finite posterior parameter".into()));
                }
            }
            PosteriorParams::Diagonal { nu, log_tau } => {
                if log_tau.len() != h {
                    return Err(Error::Shape("log_tau length differs from nu".into()));
                }
                if !finite(&mut nu.iter().chain(log_tau.iter())) {
                    return Err(Error::Domain("non-finite posterior parameter".into()));
                }
            }
            PosteriorParams::LowRank { nu, v_factor, log_s } => {
                if v_factor.nrows() != h || log_s.len() != h || v_factor.ncols() == 0 {
                    return Err(Error::Shape("low-rank factor shapes inconsistent".into()));
                }
                if !finite(&mut nu.iter().chain(v_factor.iter()).chain(log_s.iter())) {
                    return Err(Error::Domain("non-finite posterior parameter".into()));
                }
            }
        }
        Ok(())
    }

    /// Dense covariance `T`.
    pub fn covariance_of(&self) -> DMatrix<f64> {
        match self {
            PosteriorParams::Full { chol, .. } => chol * chol.transpose(),
            PosteriorParams::Diagonal { log_tau, .. } => {
                DMatrix::from_diagonal(&log_tau.map(|l| (2.0 * l).exp()))
            }
            PosteriorParams::LowRank { v_factor, log_s, .. } => {
                let mut t = v_factor * v_factor.transpose();
                for (i, l) in log_s.iter().enumerate() {
                    t[(i, i)] += (2.0 * l).exp();
                }
                t
            }
        }
    }

    /// Writes the flat block into `out` (length `kind().block_len(h)`).
    pub fn write_flat(&self, out: &mut [f64]) {
        let h = self.h();
        out[..h].copy_from_slice(self.nu().as_slice());
        let rest = &mut out[h..];
        match self {
            PosteriorParams::Full { chol, .. } => {
                for i in 0..h {
                    for j in 0..i {
                        rest[tri_index(i, j)] = chol[(i, j)];
                    }
                    rest[tri_index(i, i)] = chol[(i, i)].ln();
                }
            }
            PosteriorParams::Diagonal { log_tau, .. } => rest.copy_from_slice(log_tau.as_slice()),
            PosteriorParams::LowRank { v_factor, log_s, .. } => {
                let r = v_factor.ncols();
                for i in 0..h {
                    for k in 0..r {
                        rest[i * r + k] = v_factor[(i, k)];
                    }
                }
                rest[h * r..].copy_from_slice(log_s.as_slice());
            }
        }
    }

    pub fn from_flat(kind: PosteriorKind, h: usize, block: &[f64]) -> Self {
        let nu = DVector::from_column_slice(&block[..h]);
        let rest = &block[h..];
        match kind {
            PosteriorKind::Full => {
                let mut chol = DMatrix::zeros(h, h);
                for i in 0..h {
                    for j in 0..i {
                        chol[(i, j)] = rest[tri_index(i, j)];
                    }
                    chol[(i, i)] = rest[tri_index(i, i)].exp();
                }
                PosteriorParams::Full { nu, chol }
            }
            PosteriorKind::Diagonal => {
                PosteriorParams::Diagonal { nu, log_tau: DVector::from_column_slice(&rest[..h]) }
            }
            PosteriorKind::LowRank { rank } => {
                let v_factor = DMatrix::from_fn(h, rank, |i, k| rest[i * rank + k]);
                let log_s = DVector::from_column_slice(&rest[h * rank..h * rank + h]);
                PosteriorParams::LowRank { nu, v_factor, log_s }
            }
        }
    }
}

/// Variational parameters for `n` datapoints, all of one family, stored as contiguous
/// flat blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    kind: PosteriorKind,
    h: usize,
    n: usize,
    params: Vec<f64>,
}

impl PosteriorSet {
    /// `n` copies of the standard normal posterior.
    pub fn standard(kind: PosteriorKind, h: usize, n: usize) -> Self {
        let block = kind.block_len(h);
        let mut params = vec![0.0; block * n];
        let proto = PosteriorParams::standard(kind, h);
        let mut buf = vec![0.0; block];
        proto.write_flat(&mut buf);
        for chunk in params.chunks_mut(block) {
            chunk.copy_from_slice(&buf);
        }
        Self { kind, h, n, params }
    }

    pub fn from_entries(entries: &[PosteriorParams]) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::Shape("posterior set must be non-empty".into()))?;
        let kind = first.kind();
        let h = first.h();
        let block = kind.block_len(h);
        let mut params = vec![0.0; block * entries.len()];
        for (i, e) in entries.iter().enumerate() {
            if e.kind() != kind || e.h() != h {
                return Err(Error::Shape(format!("entry {i} differs in family or latent dimension")));
            }
            e.validate()?;
            e.write_flat(&mut params[i * block..(i + 1) * block]);
        }
        Ok(Self { kind, h, n: entries.len(), params })
    }

    pub fn from_flat(kind: PosteriorKind, h: usize, params: Vec<f64>) -> Result<Self> {
        let block = kind.block_len(h);
        if block == 0 || params.is_empty() || !params.len().is_multiple_of(block) {
            return Err(Error::Shape(format!(
                "flat posterior length {} is not a positive multiple of block length {block}",
                params.len()
            )));
        }
        if let PosteriorKind::LowRank { rank: 0 } = kind {
            return Err(Error::Shape("low-rank posteriors need rank >= 1".into()));
        }
        let n = params.len() / block;
        Ok(Self { kind, h, n, params })
    }

    pub fn kind(&self) -> PosteriorKind {
        self.kind
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_len(&self) -> usize {
        self.kind.block_len(self.h)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn block(&self, n: usize) -> &[f64] {
        let b = self.block_len();
        &self.params[n * b..(n + 1) * b]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [f64] {
        let b = self.block_len();
        &mut self.params[n * b..(n + 1) * b]
    }

    pub fn entry(&self, n: usize) -> PosteriorParams {
        PosteriorParams::from_flat(self.kind, self.h, self.block(n))
    }

    pub fn entries(&self) -> Vec<PosteriorParams> {
        (0..self.n).map(|i| self.entry(i)).collect()
    }

    /// Posterior means as an `H x N` matrix.
    pub fn nu_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.h, self.n);
        for i in 0..self.n {
            m.column_mut(i).copy_from_slice(&self.block(i)[..self.h]);
        }
        m
    }

    /// New set holding copies of the listed datapoints, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let b = self.block_len();
        let mut params = Vec::with_capacity(b * indices.len());
        for &i in indices {
            params.extend_from_slice(self.block(i));
        }
        Self { kind: self.kind, h: self.h, n: indices.len(), params }
    }

    /// Writes the blocks of `subset` back to the listed positions.
    pub fn scatter(&mut self, indices: &[usize], subset: &PosteriorSet) {
        assert_eq!(indices.len(), subset.n);
        for (k, &i) in indices.iter().enumerate() {
            self.block_mut(i).copy_from_slice(subset.block(k));
        }
    }
}

/// Provenance tag of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Bars,
    Patches,
    Imported,
    Sampled,
}

/// `N x D` observation matrix, one datapoint per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub source: DataSource,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, source: DataSource, seed: Option<u64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data(format!("dataset must be non-empty, got {}x{}", x.nrows(), x.ncols())));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self { x, source, seed })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Datapoints as columns (`D x N`).
    pub fn columns(&self) -> DMatrix<f64> {
        self.x.transpose()
    }

    /// Rows listed in `indices`.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select_rows(indices);
        Dataset { x, source: self.source, seed: self.seed }
    }
}

/// One Laplace draw with scale `lambda` via the inverse CDF.
pub fn sample_laplace<R: rand::Rng>(r: &mut R, lambda: f64) -> f64 {
    loop {
        let u: f64 = r.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -lambda * u.signum() * tail.ln();
        }
    }
}

/// Draws `x = W z + eps` with Laplace latents and isotropic Gaussian noise for an
/// arbitrary (not necessarily normalized) dictionary.
pub fn sample_linear_laplace(
    w: &DMatrix<f64>,
    lambdas: &DVector<f64>,
    sigma2: f64,
    n: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, h) = w.shape();
    let mut r = rng(seed);
    let sigma = sigma2.max(0.0).sqrt();
    let mut z = DMatrix::zeros(n, h);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..h {
            z[(i, k)] = sample_laplace(&mut r, lambdas[k]);
        }
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..h {
                acc += w[(j, k)] * z[(i, k)];
            }
            let eps: f64 = StandardNormal.sample(&mut r);
            x[(i, j)] = acc + sigma * eps;
        }
    }
    (x, z)
}

/// Samples `n` datapoints from the model.
pub fn sample_generative(theta: &ModelParams, n: usize, seed: u64) -> Dataset {
    let (x, _) = sample_linear_laplace(&theta.w_tilde, &theta.lambdas, theta.sigma2, n, seed);
    Dataset { x, source: DataSource::Sampled, seed: Some(seed) }
}
