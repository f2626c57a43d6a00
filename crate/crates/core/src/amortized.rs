//! Amortized encoder mapping a data vector to Gaussian posterior parameters.
//!
//! ```text
//! h0 = tanh(P x + b)
//! h1 = h0 + tanh(A1 h0 + c1)
//! h2 = h1 + tanh(A2 h1 + c2)
//! out = Q h2 + q
//! ```
//!
//! `out` is the flat posterior block of the chosen family: `[nu, log_tau]` for diagonal
//! posteriors and `[nu, V (row-major H x r), log_s]` for low-rank ones. The head `Q` is a
//! stack of independent linear maps, one per output group.
//!
//! All parameters live in one flat vector so optimizers can update them directly.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PosteriorKind, PosteriorParams, PosteriorSet};
use crate::numeric::rng;

/// Hidden width used when none is given: `HIDDEN_FACTOR * D`.
pub const HIDDEN_FACTOR: usize = 4;
/// Default rank of low-rank encoders.
pub const DEFAULT_RANK: usize = 5;
/// Scale of the initial low-rank factor head; a zero factor would receive zero gradient.
pub const LOW_RANK_HEAD_INIT: f64 = 0.01;

const N_BLOCKS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub kind: PosteriorKind,
    pub d: usize,
    pub hidden: usize,
    pub h: usize,
    pub params: Vec<f64>,
}

/// Offsets of each tensor inside the flat parameter vector. Matrices are column-major.
#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    b: usize,
    blocks: [(usize, usize); N_BLOCKS],
    q: usize,
    qb: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, hidden: usize, out: usize) -> Self {
        let p = 0;
        let b = p + hidden * d;
        let mut off = b + hidden;
        let mut blocks = [(0, 0); N_BLOCKS];
        for blk in blocks.iter_mut() {
            *blk = (off, off + hidden * hidden);
            off += hidden * hidden + hidden;
        }
        let q = off;
        let qb = q + out * hidden;
        Self { p, b, blocks, q, qb, len: qb + out }
    }
}

/// Intermediate activations kept for the backward pass, one column per datapoint.
struct Forward {
    h: Vec<DMatrix<f64>>,
    u: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

impl EncoderParams {
    /// Scaled-uniform trunk and mean head (`+-1/sqrt(fan_in)`), zero biases, zero covariance heads
    /// (small random for a low-rank factor), so the initial posterior is close to `N(0, I)`.
    pub fn new(kind: PosteriorKind, d: usize, h: usize, hidden: Option<usize>, seed: u64) -> Result<Self> {
        if kind == PosteriorKind::Full {
            return Err(Error::Domain("amortized encoders support diagonal and low-rank posteriors".into()));
        }
        if let PosteriorKind::LowRank { rank } = kind {
            if rank == 0 {
                return Err(Error::Domain("low-rank encoder needs rank >= 1".into()));
            }
        }
        if d == 0 || h == 0 {
            return Err(Error::Domain("encoder dimensions must be positive".into()));
        }
        let hidden = hidden.unwrap_or(HIDDEN_FACTOR * d);
        let out = kind.block_len(h);
        let lay = Layout::new(d, hidden, out);
        let mut params = vec![0.0; lay.len];
        let mut r = rng(seed);
        let mut fill = |slice: &mut [f64], bound: f64| {
            for v in slice {
                *v = r.random_range(-bound..bound);
            }
        };
        fill(&mut params[lay.p..lay.b], 1.0 / (d as f64).sqrt());
        for (w, c) in lay.blocks {
            fill(&mut params[w..c], 1.0 / (hidden as f64).sqrt());
        }
        // head rows: nu rows get the scaled init, covariance rows stay zero
        let bound = 1.0 / (hidden as f64).sqrt();
        let v_rows = match kind {
            PosteriorKind::LowRank { rank } => h..h + h * rank,
            _ => 0..0,
        };
        for col in 0..hidden {
            for row in 0..out {
                let idx = lay.q + col * out + row;
                if row < h {
                    params[idx] = r.random_range(-bound..bound);
                } else if v_rows.contains(&row) {
                    params[idx] = r.random_range(-LOW_RANK_HEAD_INIT..LOW_RANK_HEAD_INIT);
                }
            }
        }
        Ok(Self { kind, d, hidden, h, params })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.d, self.hidden, self.out_len())
    }

    pub fn out_len(&self) -> usize {
        self.kind.block_len(self.h)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Checks that the flat vector matches the declared shapes and is finite.
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.layout().len {
            return Err(Error::Shape(format!(
                "encoder expects {} parameters, found {}",
                self.layout().len,
                self.params.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[off..off + rows * cols], rows, cols)
    }

    fn vec(&self, off: usize, len: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.params[off..off + len])
    }

    fn forward(&self, xcols: &DMatrix<f64>) -> Forward {
        let lay = self.layout();
        let (hd, out) = (self.hidden, self.out_len());
        let add_bias = |m: &mut DMatrix<f64>, b: &DVector<f64>| {
            for mut col in m.column_iter_mut() {
                col += b;
            }
        };
        let mut a0 = self.mat(lay.p, hd, self.d) * xcols;
        add_bias(&mut a0, &self.vec(lay.b, hd));
        let mut hs = vec![a0.map(f64::tanh)];
        let mut us = Vec::with_capacity(N_BLOCKS);
        for (w, c) in lay.blocks {
            let prev = hs.last().expect("trunk input");
            let mut a = self.mat(w, hd, hd) * prev;
            add_bias(&mut a, &self.vec(c, hd));
            let u = a.map(f64::tanh);
            hs.push(prev + &u);
            us.push(u);
        }
        let mut o = self.mat(lay.q, out, hd) * hs.last().expect("trunk output");
        add_bias(&mut o, &self.vec(lay.qb, out));
        Forward { h: hs, u: us, out: o }
    }

    /// Posterior parameters for a single data vector.
    pub fn encode(&self, x: &DVector<f64>) -> PosteriorParams {
        let out = self.forward(&DMatrix::from_column_slice(self.d, 1, x.as_slice())).out;
        PosteriorParams::from_flat(self.kind, self.h, out.as_slice())
    }

    /// Encodes every column of `xcols` (`D x N`).
    pub fn encode_batch(&self, xcols: &DMatrix<f64>) -> Result<PosteriorSet> {
        if xcols.nrows() != self.d {
            return Err(Error::Shape(format!("encoder expects D={}, data has {}", self.d, xcols.nrows())));
        }
        let out = self.forward(xcols).out;
        PosteriorSet::from_flat(self.kind, self.h, out.as_slice().to_vec())
    }

    /// Reverse-mode gradient of `sum_n <upstream_n, encode(x_n)>` with respect to the
    /// flat encoder parameters. `upstream` uses the [`PosteriorSet`] flat layout.
    pub fn encode_backward(&self, xcols: &DMatrix<f64>, upstream: &[f64]) -> Result<Vec<f64>> {
        let out_len = self.out_len();
        if xcols.nrows() != self.d || upstream.len() != out_len * xcols.ncols() {
            return Err(Error::Shape("encode_backward input shapes do not match the encoder".into()));
        }
        let lay = self.layout();
        let hd = self.hidden;
        let fwd = self.forward(xcols);
        let g_out = DMatrix::from_column_slice(out_len, xcols.ncols(), upstream);
        let mut grad = vec![0.0; lay.len];

        let h2 = fwd.h.last().expect("trunk output");
        write_mat(&mut grad, lay.q, out_len, hd, &(&g_out * h2.transpose()));
        write_rowsum(&mut grad, lay.qb, &g_out);
        let mut dh = self.mat(lay.q, out_len, hd).transpose() * &g_out;

        for k in (0..N_BLOCKS).rev() {
            let (w, c) = lay.blocks[k];
            let u = &fwd.u[k];
            let h_in = &fwd.h[k];
            let dpre = dh.zip_map(u, |g, u| g * (1.0 - u * u));
            write_mat(&mut grad, w, hd, hd, &(&dpre * h_in.transpose()));
            write_rowsum(&mut grad, c, &dpre);
            dh += self.mat(w, hd, hd).transpose() * &dpre;
        }

        let dpre0 = dh.zip_map(&fwd.h[0], |g, h| g * (1.0 - h * h));
        write_mat(&mut grad, lay.p, hd, self.d, &(&dpre0 * xcols.transpose()));
        write_rowsum(&mut grad, lay.b, &dpre0);
        Ok(grad)
    }

    /// Zeroes the residual block weights and biases, turning each block into the identity map.
    pub fn zero_blocks(&mut self) {
        let lay = self.layout();
        let hd = self.hidden;
        for (w, c) in lay.blocks {
            self.params[w..c + hd].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Trunk output `h2` for the given columns, exposed for tests of the residual structure.
    pub fn trunk(&self, xcols: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let fwd = self.forward(xcols);
        (fwd.h[0].clone(), fwd.h.last().expect("trunk output").clone())
    }
}

fn write_mat(grad: &mut [f64], off: usize, rows: usize, cols: usize, m: &DMatrix<f64>) {
    let mut view = DMatrixViewMut::from_slice(&mut grad[off..off + rows * cols], rows, cols);
    view += m;
}

fn write_rowsum(grad: &mut [f64], off: usize, m: &DMatrix<f64>) {
    for (i, row) in m.row_iter().enumerate() {
        grad[off + i] += row.sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff;

    fn random_encoder(kind: PosteriorKind, seed: u64) -> EncoderParams {
        let mut e = EncoderParams::new(kind, 6, 3, Some(8), seed).unwrap();
        let mut r = rng(seed + 1);
        for v in &mut e.params {
            *v += r.random_range(-0.3..0.3);
        }
        e
    }

    #[test]
    fn zero_parameters_give_standard_posterior() {
        for kind in [PosteriorKind::Diagonal, PosteriorKind::LowRank { rank: 2 }] {
            let mut e = EncoderParams::new(kind, 4, 3, None, 1).unwrap();
            e.params.iter_mut().for_each(|v| *v = 0.0);
            let p = e.encode(&DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]));
            assert_eq!(p.nu(), &DVector::zeros(3));
            assert_eq!(p.covariance_of(), DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn initial_encoder_outputs_unit_scale() {
        let e = EncoderParams::new(PosteriorKind::Diagonal, 5, 2, None, 3).unwrap();
        let p = e.encode(&DVector::from_element(5, 0.7));
        assert_eq!(p.covariance_of(), DMatrix::identity(2, 2));
        assert!(EncoderParams::new(PosteriorKind::Full, 5, 2, None, 3).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in [PosteriorKind::Diagonal, PosteriorKind::LowRank { rank: 2 }] {
            let enc = random_encoder(kind, 9);
            let mut r = rng(4);
            let xcols = DMatrix::from_fn(6, 4, |_, _| r.random_range(-1.0..1.0));
            let upstream: Vec<f64> = (0..enc.out_len() * 4).map(|_| r.random_range(-1.0..1.0)).collect();
            let g = enc.encode_backward(&xcols, &upstream).unwrap();
            let fd = finite_diff(
                |p| {
                    let e = EncoderParams { params: p.to_vec(), ..enc.clone() };
                    let out = e.encode_batch(&xcols).unwrap();
                    out.params().iter().zip(&upstream).map(|(a, b)| a * b).sum()
                },
                &enc.params,
                1e-6,
            );
            for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{kind:?} param {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let enc = random_encoder(PosteriorKind::Diagonal, 2);
        let xcols = DMatrix::from_element(6, 2, 0.3);
        let up: Vec<f64> = (0..enc.out_len() * 2).map(|i| i as f64 * 0.1 - 0.5).collect();
        let g1 = enc.encode_backward(&xcols, &up).unwrap();
        let up2: Vec<f64> = up.iter().map(|v| 2.0 * v).collect();
        let g2 = enc.encode_backward(&xcols, &up2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        let zero = enc.encode_backward(&xcols, &vec![0.0; up.len()]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_blocks_are_identity() {
        let mut enc = random_encoder(PosteriorKind::LowRank { rank: 1 }, 5);
        enc.zero_blocks();
        let xcols = DMatrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.2);
        let (h0, h2) = enc.trunk(&xcols);
        assert_eq!(h0, h2);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let enc = random_encoder(PosteriorKind::Diagonal, 8);
        let x = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        assert_eq!(enc.encode(&x), enc.encode(&x));
        let p = enc.encode(&x);
        assert!(p.validate().is_ok());
    }
}
