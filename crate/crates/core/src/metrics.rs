//! Sparsity and dictionary diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PosteriorSet;
use crate::numeric::pairwise_sum;

/// Default correlation threshold for counting a bar as recovered.
pub const BAR_RECOVERY_THRESHOLD: f64 = 0.9;

/// Hurley-Rickard Gini index of `|code|`, in `[0, 1 - 1/H]`.
///
/// With `c` sorted ascending, `1 - 2 sum_k (c_k / ||c||_1) (H - k + 1/2) / H` for 1-based `k`.
/// An all-zero code has no defined sparsity and is reported as 0.
pub fn gini(code: &[f64]) -> f64 {
    let mut c: Vec<f64> = code.iter().map(|v| v.abs()).collect();
    let l1: f64 = c.iter().sum();
    if !(l1 > 0.0) {
        log::debug!("gini of an all-zero code is defined as 0");
        return 0.0;
    }
    c.sort_by(f64::total_cmp);
    let h = c.len() as f64;
    let weighted: f64 = c
        .iter()
        .enumerate()
        .map(|(k, ck)| ck / l1 * (h - (k + 1) as f64 + 0.5) / h)
        .sum();
    1.0 - 2.0 * weighted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniReport {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub per_sample: Vec<f64>,
    /// Number of posterior means that were exactly zero.
    pub all_zero: usize,
}

/// Gini index of every posterior mean, with mean and population SD.
pub fn gini_report(posteriors: &PosteriorSet) -> Result<GiniReport> {
    let n = posteriors.n();
    if n < 2 {
        return Err(Error::Domain(format!("gini_report needs at least 2 posteriors, got {n}")));
    }
    let h = posteriors.h();
    let mut all_zero = 0;
    let per_sample: Vec<f64> = (0..n)
        .map(|i| {
            let nu = &posteriors.block(i)[..h];
            if nu.iter().all(|v| *v == 0.0) {
                all_zero += 1;
            }
            gini(nu)
        })
        .collect();
    if all_zero > 0 {
        log::warn!("{all_zero} of {n} posterior means are all-zero; their Gini index is reported as 0");
    }
    let mean = pairwise_sum(&per_sample) / n as f64;
    let dev: Vec<f64> = per_sample.iter().map(|g| (g - mean) * (g - mean)).collect();
    let sd = (pairwise_sum(&dev) / n as f64).sqrt();
    Ok(GiniReport { mean, sd, per_sample, all_zero })
}

/// Largest absolute inner product between two distinct columns of a unit-norm dictionary.
pub fn dictionary_coherence(w: &DMatrix<f64>) -> f64 {
    let gram = w.transpose() * w;
    let mut best: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..i {
            best = best.max(gram[(i, j)].abs());
        }
    }
    best.min(1.0)
}

/// Pearson correlation; zero when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarRecovery {
    /// For each learned column: index of the best-matching ground-truth column.
    pub best_match: Vec<usize>,
    /// The corresponding absolute correlation.
    pub correlation: Vec<f64>,
    /// Ground-truth columns that are some learned column's distinct best match above threshold.
    pub recovered: usize,
    /// Every ground-truth column is recovered.
    pub all_recovered: bool,
}

/// Matches learned columns to ground-truth columns by absolute Pearson correlation.
///
/// A ground-truth column counts as recovered when it is the best match of exactly one
/// learned column and that correlation exceeds `threshold`.
pub fn bar_recovery(learned: &DMatrix<f64>, truth: &DMatrix<f64>, threshold: f64) -> Result<BarRecovery> {
    if learned.nrows() != truth.nrows() {
        return Err(Error::Shape(format!(
            "learned dictionary has D={}, ground truth D={}",
            learned.nrows(),
            truth.nrows()
        )));
    }
    let mut best_match = Vec::with_capacity(learned.ncols());
    let mut correlation = Vec::with_capacity(learned.ncols());
    for lc in learned.column_iter() {
        let (idx, corr) = truth
            .column_iter()
            .map(|tc| pearson(lc.as_slice(), tc.as_slice()).abs())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, c)| if c > acc.1 { (i, c) } else { acc });
        best_match.push(idx);
        correlation.push(corr);
    }
    let recovered = (0..truth.ncols())
        .filter(|&t| {
            let hits: Vec<usize> = (0..best_match.len()).filter(|&j| best_match[j] == t).collect();
            hits.len() == 1 && correlation[hits[0]] > threshold
        })
        .count();
    Ok(BarRecovery { best_match, correlation, recovered, all_recovered: recovered == truth.ncols() })
}
