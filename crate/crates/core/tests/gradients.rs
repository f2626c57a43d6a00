use entropy_sc::model::{DataSource, Dataset, DictionaryPreimage, ModelParams, PosteriorKind, PosteriorSet};
use entropy_sc::numeric::rng;
use entropy_sc::objectives::{
    classical_elbo, classical_elbo_gradients, entropy_elbo, entropy_elbo_gradients, theta_opt, AnnealingWeights,
};
use entropy_sc::oracle::{finite_diff, DEFAULT_FD_STEP};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

const KINDS: [PosteriorKind; 3] = [PosteriorKind::Full, PosteriorKind::Diagonal, PosteriorKind::LowRank { rank: 2 }];

fn normal(r: &mut entropy_sc::numeric::Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            scale * z
        })
        .collect()
}

fn instance(kind: PosteriorKind, seed: u64) -> (PosteriorSet, DictionaryPreimage, Dataset) {
    let (d, h, n) = (6, 4, 5);
    let mut r = rng(seed);
    let post = PosteriorSet::from_flat(kind, h, normal(&mut r, kind.block_len(h) * n, 0.4)).unwrap();
    let pre = DictionaryPreimage::new(DMatrix::from_vec(d, h, normal(&mut r, d * h, 1.0))).unwrap();
    let data = Dataset::new(DMatrix::from_vec(n, d, normal(&mut r, n * d, 1.0)), DataSource::Imported, None).unwrap();
    (post, pre, data)
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    let scale = numeric.iter().fold(1e-3_f64, |m, v| m.max(v.abs()));
    for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - b).abs() / scale;
        assert!(err < tol, "{what}[{i}]: analytic {a} vs numeric {b} (rel {err:e})");
    }
}

#[test]
fn entropy_posterior_gradients_match_finite_differences() {
    for (s, kind) in KINDS.into_iter().enumerate() {
        for weights in [AnnealingWeights::UNANNEALED, AnnealingWeights::new(3.0, 0.4).unwrap()] {
            let (post, pre, data) = instance(kind, 40 + s as u64);
            let g = entropy_elbo_gradients(&post, &pre, &data, weights).unwrap();
            let fd = finite_diff(
                |p| {
                    let set = PosteriorSet::from_flat(kind, post.h(), p.to_vec()).unwrap();
                    entropy_elbo(&set, &pre, &data, weights).unwrap().total
                },
                post.params(),
                DEFAULT_FD_STEP,
            );
            assert_close(&g.posterior, &fd, 1e-5, &format!("{kind:?} posterior"));
        }
    }
}

#[test]
fn entropy_preimage_gradients_match_finite_differences() {
    for (s, kind) in KINDS.into_iter().enumerate() {
        let weights = AnnealingWeights::new(2.0, 0.5).unwrap();
        let (post, pre, data) = instance(kind, 70 + s as u64);
        let g = entropy_elbo_gradients(&post, &pre, &data, weights).unwrap();
        let (d, h) = (pre.d(), pre.h());
        let fd = finite_diff(
            |v| {
                let p = DictionaryPreimage::new(DMatrix::from_column_slice(d, h, v)).unwrap();
                entropy_elbo(&post, &p, &data, weights).unwrap().total
            },
            pre.v.as_slice(),
            DEFAULT_FD_STEP,
        );
        assert_close(g.preimage.as_slice(), &fd, 1e-5, &format!("{kind:?} preimage"));
    }
}

#[test]
fn classical_gradients_match_finite_differences() {
    for (s, kind) in KINDS.into_iter().enumerate() {
        let (post, pre, data) = instance(kind, 90 + s as u64);
        let mut theta = theta_opt(&post, &pre.w_tilde().unwrap(), &data).unwrap();
        theta.sigma2 *= 1.7;
        theta.lambdas[1] *= 0.6;
        let g = classical_elbo_gradients(&post, &theta, &data).unwrap();

        let fd = finite_diff(
            |p| {
                let set = PosteriorSet::from_flat(kind, post.h(), p.to_vec()).unwrap();
                classical_elbo(&set, &theta, &data).unwrap()
            },
            post.params(),
            DEFAULT_FD_STEP,
        );
        assert_close(&g.posterior, &fd, 1e-5, "classical posterior");

        let (d, h) = (theta.d(), theta.h());
        let fd_w = finite_diff(
            |w| {
                let t = ModelParams {
                    w_tilde: DMatrix::from_column_slice(d, h, w),
                    lambdas: theta.lambdas.clone(),
                    sigma2: theta.sigma2,
                };
                classical_elbo(&post, &t, &data).unwrap()
            },
            theta.w_tilde.as_slice(),
            DEFAULT_FD_STEP,
        );
        assert_close(g.w_tilde.as_slice(), &fd_w, 1e-5, "classical W");

        let mut point: Vec<f64> = theta.lambdas.iter().copied().collect();
        point.push(theta.sigma2);
        let fd_scale = finite_diff(
            |p| {
                let t = ModelParams {
                    w_tilde: theta.w_tilde.clone(),
                    lambdas: DVector::from_column_slice(&p[..h]),
                    sigma2: p[h],
                };
                classical_elbo(&post, &t, &data).unwrap()
            },
            &point,
            DEFAULT_FD_STEP,
        );
        let mut analytic: Vec<f64> = g.lambdas.iter().copied().collect();
        analytic.push(g.sigma2);
        assert_close(&analytic, &fd_scale, 1e-5, "classical scales");
    }
}

#[test]
fn classical_gradients_vanish_in_scale_at_optimum() {
    let (post, pre, data) = instance(PosteriorKind::Full, 5);
    let theta = theta_opt(&post, &pre.w_tilde().unwrap(), &data).unwrap();
    let g = classical_elbo_gradients(&post, &theta, &data).unwrap();
    assert!(g.lambdas.amax() < 1e-10);
    assert!(g.sigma2.abs() < 1e-10);
}

#[test]
fn posterior_gradients_agree_at_optimum() {
    // At (lambda_opt, sigma2_opt) the classical and entropy objectives have equal
    // posterior gradients, because the scale gradients vanish there.
    for (s, kind) in KINDS.into_iter().enumerate() {
        let (post, pre, data) = instance(kind, 120 + s as u64);
        let theta = theta_opt(&post, &pre.w_tilde().unwrap(), &data).unwrap();
        let gc = classical_elbo_gradients(&post, &theta, &data).unwrap();
        let ge = entropy_elbo_gradients(&post, &pre, &data, AnnealingWeights::UNANNEALED).unwrap();
        for (a, b) in gc.posterior.iter().zip(&ge.posterior) {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
        let diff = (&gc.w_tilde - &ge.w_tilde).amax();
        assert!(diff < 1e-10 * ge.w_tilde.amax().max(1.0));
    }
}
