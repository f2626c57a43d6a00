use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataSource, Dataset};
use crate::numeric::{derive_seed, rng};

/// Eigenvalue floor added before inverting the covariance square root.
pub const ZCA_EPSILON: f64 = 1e-5;
/// Smallest unregularized eigenvalue below which the covariance is flagged as ill-conditioned.
pub const ZCA_ILL_CONDITIONED: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Whitening {
    None,
    #[default]
    Zca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSpec {
    pub patch_side: usize,
    pub n_patches: usize,
    pub whitening: Whitening,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { patch_side: 16, n_patches: 10_000, whitening: Whitening::Zca, seed: 0 }
    }
}

/// Whitened data with the transform that produced it.
#[derive(Debug, Clone)]
pub struct Zca {
    pub data: Dataset,
    /// Symmetric `D x D` matrix `(C + eps I)^{-1/2}`; output rows are `(x - mean) * transform`.
    pub transform: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub min_eigenvalue: f64,
    pub ill_conditioned: bool,
}

/// Random `patch_side x patch_side` crops at uniform image and position, flattened row-major,
/// each with its own mean removed, then optionally ZCA-whitened.
pub fn extract_patches(images: &[DMatrix<f64>], spec: &PatchSpec) -> Result<Dataset> {
    let side = spec.patch_side;
    if side < 2 {
        return Err(Error::Domain(format!("patch_side must be >= 2, got {side}")));
    }
    if images.is_empty() || spec.n_patches == 0 {
        return Err(Error::Data("need at least one image and one patch".into()));
    }
    if let Some(i) = images.iter().position(|im| im.nrows() < side || im.ncols() < side) {
        let (r, c) = images[i].shape();
        return Err(Error::Data(format!("image {i} is {r}x{c}, smaller than the {side}x{side} patch size")));
    }
    let d = side * side;
    let rows: Vec<Vec<f64>> = (0..spec.n_patches)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(derive_seed(spec.seed, i as u64));
            let im = &images[r.random_range(0..images.len())];
            let top = r.random_range(0..=im.nrows() - side);
            let left = r.random_range(0..=im.ncols() - side);
            let mut p: Vec<f64> = (0..d).map(|k| im[(top + k / side, left + k % side)]).collect();
            let mean = p.iter().sum::<f64>() / d as f64;
            p.iter_mut().for_each(|v| *v -= mean);
            p
        })
        .collect();
    let x = DMatrix::from_fn(spec.n_patches, d, |i, j| rows[i][j]);
    let data = Dataset::new(x, DataSource::Patches, Some(spec.seed))?;
    match spec.whitening {
        Whitening::None => Ok(data),
        Whitening::Zca => {
            let z = zca_whiten(&data, ZCA_EPSILON)?;
            Ok(Dataset { source: DataSource::Patches, seed: Some(spec.seed), ..z.data })
        }
    }
}

/// ZCA whitening `(X - mean) (C + eps I)^{-1/2}` with `C` the empirical covariance.
///
/// Mean-removed patches always have a zero eigenvalue, so ill-conditioning is reported
/// through [`Zca::ill_conditioned`] and a warning rather than an error.
pub fn zca_whiten(data: &Dataset, epsilon: f64) -> Result<Zca> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("zca epsilon must be > 0, got {epsilon}")));
    }
    let (n, d) = (data.n(), data.d());
    if n <= d {
        log::warn!("zca_whiten with N={n} <= D={d}: covariance is rank deficient");
    }
    let mean = DVector::from_iterator(d, data.x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = data.x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let min_eigenvalue = eig.eigenvalues.min();
    let ill_conditioned = min_eigenvalue < ZCA_ILL_CONDITIONED;
    if ill_conditioned {
        log::warn!("covariance is ill-conditioned (smallest eigenvalue {min_eigenvalue:e}); relying on epsilon {epsilon:e}");
    }
    let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + epsilon).sqrt());
    let u = &eig.eigenvectors;
    let transform = u * DMatrix::from_diagonal(&scale) * u.transpose();
    let transform = (&transform + transform.transpose()) * 0.5;
    let x = centered * &transform;
    let out = Dataset::new(x, data.source, data.seed)?;
    Ok(Zca { data: out, transform, mean, min_eigenvalue, ill_conditioned })
}

/// Smallest disk radius of [`dead_leaves_image`] in pixels.
pub const DEAD_LEAVES_MIN_RADIUS: f64 = 4.0;

/// Synthetic natural-like grayscale image in `[0, 1]`: occluding disks with power-law radii
/// (dead-leaves model) and a light blur. There is no pixel noise, which whitening would
/// otherwise amplify to dominate the high frequencies.
pub fn dead_leaves_image(side: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut img = DMatrix::from_element(side, side, 0.5);
    let (rmin, rmax) = (DEAD_LEAVES_MIN_RADIUS, (side as f64 / 4.0).max(DEAD_LEAVES_MIN_RADIUS));
    let (a, b) = (rmin.powi(-2), rmax.powi(-2));
    let n_disks = (12.0 * (side * side) as f64 / (16.0 * rmin * rmin)) as usize;
    for _ in 0..n_disks {
        let u: f64 = r.random();
        let rad = (a - u * (a - b)).powf(-0.5);
        let cy: f64 = r.random_range(-rad..side as f64 + rad);
        let cx: f64 = r.random_range(-rad..side as f64 + rad);
        let val: f64 = r.random();
        let (y0, y1) = (((cy - rad).floor().max(0.0)) as usize, ((cy + rad).ceil().min(side as f64)) as usize);
        let (x0, x1) = (((cx - rad).floor().max(0.0)) as usize, ((cx + rad).ceil().min(side as f64)) as usize);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= rad * rad {
                    img[(y, x)] = val;
                }
            }
        }
    }
    let k = [0.25, 0.5, 0.25];
    let blur = |m: &DMatrix<f64>, horizontal: bool| {
        DMatrix::from_fn(side, side, |y, x| {
            (0..3)
                .map(|t| {
                    let off = t as isize - 1;
                    let (yy, xx) = if horizontal { (y as isize, x as isize + off) } else { (y as isize + off, x as isize) };
                    let yy = yy.clamp(0, side as isize - 1) as usize;
                    let xx = xx.clamp(0, side as isize - 1) as usize;
                    k[t] * m[(yy, xx)]
                })
                .sum()
        })
    };
    blur(&blur(&img, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_image_gives_zero_patches() {
        let img = DMatrix::from_element(10, 12, 0.7);
        let spec = PatchSpec { patch_side: 4, n_patches: 5, whitening: Whitening::None, seed: 1 };
        let data = extract_patches(&[img], &spec).unwrap();
        assert_eq!(data.d(), 16);
        assert!(data.x.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn exact_size_image_is_returned_mean_removed() {
        let img = DMatrix::from_fn(3, 3, |i, j| (3 * i + j) as f64);
        let spec = PatchSpec { patch_side: 3, n_patches: 1, whitening: Whitening::None, seed: 9 };
        let data = extract_patches(&[img], &spec).unwrap();
        let expected: Vec<f64> = (0..9).map(|k| k as f64 - 4.0).collect();
        assert_eq!(data.x.row(0).iter().copied().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn patches_are_seeded_and_reject_small_images() {
        let img = dead_leaves_image(32, 2);
        let spec = PatchSpec { patch_side: 8, n_patches: 30, whitening: Whitening::None, seed: 5 };
        assert_eq!(extract_patches(std::slice::from_ref(&img), &spec).unwrap(), extract_patches(std::slice::from_ref(&img), &spec).unwrap());
        let small = DMatrix::zeros(7, 40);
        assert!(extract_patches(&[img, small], &spec).is_err());
    }

    fn gaussian_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let mix = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 } else { 0.3 * ((i + j) % 3) as f64 });
        let z = DMatrix::from_fn(n, d, |_, _| {
            let v: f64 = StandardNormal.sample(&mut r);
            v
        });
        Dataset::new(z * mix, DataSource::Imported, None).unwrap()
    }

    #[test]
    fn zca_output_is_white() {
        let d = 8;
        let data = gaussian_data(10 * d, d, 3);
        let z = zca_whiten(&data, 1e-5).unwrap();
        let x = &z.data.x;
        let cov = x.transpose() * x / x.nrows() as f64;
        let err = (cov - DMatrix::identity(d, d)).norm() / d as f64;
        assert!(err < 0.05, "{err}");
        assert!(!z.ill_conditioned);
        assert_eq!(z.transform, z.transform.transpose());
    }

    #[test]
    fn zca_limits() {
        let d = 4;
        let data = gaussian_data(400, d, 8);
        let white = zca_whiten(&data, 1e-5).unwrap().data;
        let again = zca_whiten(&white, 1e-5).unwrap();
        assert!((&again.data.x - &white.x).amax() < 1e-3);
        let eps = 1e12;
        let big = zca_whiten(&data, eps).unwrap();
        let scaled = DMatrix::identity(d, d) / eps.sqrt();
        assert!((&big.transform - scaled).amax() < 1e-9 / eps.sqrt());
        assert!(zca_whiten(&data, 0.0).is_err());
    }

    #[test]
    fn mean_removed_patches_are_flagged_ill_conditioned() {
        let img = dead_leaves_image(64, 1);
        let spec = PatchSpec { patch_side: 4, n_patches: 500, whitening: Whitening::None, seed: 2 };
        let data = extract_patches(&[img], &spec).unwrap();
        assert!(zca_whiten(&data, ZCA_EPSILON).unwrap().ill_conditioned);
    }

    #[test]
    fn dead_leaves_range_and_determinism() {
        let a = dead_leaves_image(48, 4);
        assert_eq!(a, dead_leaves_image(48, 4));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.max() - a.min() > 0.5);
    }
}
