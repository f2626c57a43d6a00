use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_linear_laplace, DataSource, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarsSpec {
    /// Side length of the square image; `D = grid^2`.
    pub grid: usize,
    /// Number of bars `H`: horizontal bars first, then vertical ones.
    pub n_fields: usize,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for BarsSpec {
    fn default() -> Self {
        Self { grid: 5, n_fields: 10, lambda: 1.0, noise_sigma: 0.1, n: 1000, seed: 0 }
    }
}

impl BarsSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.grid < 2 {
            errs.push(format!("grid must be >= 2, got {}", self.grid));
        }
        if self.n_fields == 0 || self.n_fields > 2 * self.grid {
            errs.push(format!("n_fields must be in 1..={}, got {}", 2 * self.grid, self.n_fields));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            errs.push(format!("lambda must be finite and > 0, got {}", self.lambda));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            errs.push(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.n == 0 {
            errs.push("n must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// One-hot bar images as columns (`grid^2 x n_fields`), pixels in row-major order.
pub fn bars_dictionary(grid: usize, n_fields: usize) -> DMatrix<f64> {
    DMatrix::from_fn(grid * grid, n_fields, |pix, f| {
        let (row, col) = (pix / grid, pix % grid);
        let on = if f < grid { row == f } else { col == f - grid };
        if on {
            1.0
        } else {
            0.0
        }
    })
}

/// Bars data `x = W z + eps` with the unnormalized bar dictionary, Laplace `z` and Gaussian
/// noise. Returns the dataset and the ground-truth dictionary.
pub fn generate_bars(spec: &BarsSpec) -> Result<(Dataset, DMatrix<f64>)> {
    spec.validate()?;
    let w = bars_dictionary(spec.grid, spec.n_fields);
    let lambdas = DVector::from_element(spec.n_fields, spec.lambda);
    let (x, _) = sample_linear_laplace(&w, &lambdas, spec.noise_sigma * spec.noise_sigma, spec.n, spec.seed);
    let data = Dataset::new(x, DataSource::Bars, Some(spec.seed))?;
    Ok((data, w))
}
