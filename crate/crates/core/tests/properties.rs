use entropy_sc::metrics::gini;
use entropy_sc::model::{DictionaryPreimage, PosteriorKind, PosteriorSet};
use entropy_sc::objectives::{classical_elbo, entropy_elbo, lambda_opt, theta_opt, AnnealingWeights};
use entropy_sc::optim::{adam_step, lbfgs_minimize, AdamState, LbfgsStatus};
use entropy_sc::oracle::quad_abs_moment;
use entropy_sc::special::{m_function, softened_magnitude, SQRT_2_OVER_PI};
use entropy_sc::verify::{random_instance, POSTERIOR_KINDS};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = PosteriorKind> {
    (0usize..3).prop_map(|i| POSTERIOR_KINDS[i])
}

fn code_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..20).prop_filter("non-zero", |c| c.iter().any(|v| v.abs() > 1e-6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gini_is_bounded(c in code_strategy()) {
        let g = gini(&c);
        let h = c.len() as f64;
        prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / h + 1e-12, "gini {g}");
    }

    #[test]
    fn gini_ignores_order_sign_and_scale(c in code_strategy(), scale in 1e-3f64..1e3, shift in 0usize..20) {
        let g = gini(&c);
        let mut other: Vec<f64> = c.iter().enumerate().map(|(i, v)| if i % 2 == 0 { -v * scale } else { v * scale }).collect();
        let k = shift % other.len();
        other.rotate_left(k);
        prop_assert!((gini(&other) - g).abs() < 1e-12);
    }

    #[test]
    fn gini_decreases_when_mass_moves_to_a_smaller_entry(c in code_strategy(), frac in 0.01f64..0.49) {
        // a Robin Hood transfer from the largest to the smallest magnitude
        let mut a: Vec<f64> = c.iter().map(|v| v.abs()).collect();
        let (imax, imin) = {
            let imax = (0..a.len()).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
            let imin = (0..a.len()).min_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
            (imax, imin)
        };
        prop_assume!(a[imax] - a[imin] > 1e-3);
        let before = gini(&a);
        let t = frac * (a[imax] - a[imin]);
        a[imax] -= t;
        a[imin] += t;
        prop_assert!(gini(&a) < before + 1e-12);
    }

    #[test]
    fn softened_magnitude_bounds(nu in -20.0f64..20.0, tau in 1e-3f64..10.0) {
        let s = softened_magnitude(nu, tau).unwrap();
        prop_assert!(s >= nu.abs());
        prop_assert!(s >= tau * SQRT_2_OVER_PI * (1.0 - 1e-15));
        prop_assert!(softened_magnitude(nu, tau * 1.1).unwrap() >= s);
        prop_assert!(m_function(nu) >= nu.abs());
    }

    #[test]
    fn quadrature_agrees_with_softened_magnitude(nu in -6.0f64..6.0, tau in 0.05f64..4.0) {
        let q = quad_abs_moment(nu, tau, 1e-11).unwrap();
        prop_assert!(q >= nu.abs() - 1e-10);
        prop_assert!((q - softened_magnitude(nu, tau).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn entropy_form_equals_classical_elbo(kind in kind_strategy(), d in 2usize..9, h in 1usize..6, n in 1usize..17, seed in any::<u64>()) {
        let inst = random_instance(kind, d, h, n, seed);
        let w = inst.preimage.w_tilde().unwrap();
        let theta = theta_opt(&inst.posteriors, &w, &inst.data).unwrap();
        let c = classical_elbo(&inst.posteriors, &theta, &inst.data).unwrap();
        let e = entropy_elbo(&inst.posteriors, &inst.preimage, &inst.data, AnnealingWeights::UNANNEALED).unwrap();
        prop_assert!((c - e.total).abs() < 1e-9, "{c} vs {}", e.total);
    }

    #[test]
    fn objective_is_invariant_to_flipping_data_and_means(kind in kind_strategy(), seed in any::<u64>()) {
        let inst = random_instance(kind, 5, 3, 6, seed);
        let base = entropy_elbo(&inst.posteriors, &inst.preimage, &inst.data, AnnealingWeights::UNANNEALED).unwrap();
        let mut post = inst.posteriors.clone();
        for i in 0..post.n() {
            for v in &mut post.block_mut(i)[..3] {
                *v = -*v;
            }
        }
        let mut data = inst.data.clone();
        data.x = -data.x;
        let flipped = entropy_elbo(&post, &inst.preimage, &data, AnnealingWeights::UNANNEALED).unwrap();
        prop_assert!((flipped.total - base.total).abs() < 1e-10 * base.total.abs().max(1.0));
    }

    #[test]
    fn objective_ignores_preimage_column_scale(kind in kind_strategy(), seed in any::<u64>(), scales in prop::collection::vec(0.01f64..100.0, 4)) {
        let inst = random_instance(kind, 6, 4, 5, seed);
        let base = entropy_elbo(&inst.posteriors, &inst.preimage, &inst.data, AnnealingWeights::UNANNEALED).unwrap();
        let mut v = inst.preimage.v.clone();
        for (j, s) in scales.iter().enumerate() {
            v.column_mut(j).scale_mut(*s);
        }
        let scaled = entropy_elbo(&inst.posteriors, &DictionaryPreimage::new(v).unwrap(), &inst.data, AnnealingWeights::UNANNEALED).unwrap();
        prop_assert!((scaled.total - base.total).abs() < 1e-9 * base.total.abs().max(1.0));
    }

    #[test]
    fn diagonal_matches_full_with_diagonal_cholesky(seed in any::<u64>()) {
        let inst = random_instance(PosteriorKind::Diagonal, 5, 4, 6, seed);
        let h = 4;
        let mut full = PosteriorSet::standard(PosteriorKind::Full, h, inst.posteriors.n());
        let mut lowrank = PosteriorSet::standard(PosteriorKind::LowRank { rank: 2 }, h, inst.posteriors.n());
        for i in 0..inst.posteriors.n() {
            let src = inst.posteriors.block(i).to_vec();
            let f = full.block_mut(i);
            f[..h].copy_from_slice(&src[..h]);
            for k in 0..h {
                f[h + k * (k + 1) / 2 + k] = src[h + k];
            }
            let l = lowrank.block_mut(i);
            l[..h].copy_from_slice(&src[..h]);
            l[h + 2 * h..].copy_from_slice(&src[h..]);
        }
        let weights = AnnealingWeights::new(2.0, 0.7).unwrap();
        let d = entropy_elbo(&inst.posteriors, &inst.preimage, &inst.data, weights).unwrap().total;
        let f = entropy_elbo(&full, &inst.preimage, &inst.data, weights).unwrap().total;
        let l = entropy_elbo(&lowrank, &inst.preimage, &inst.data, weights).unwrap().total;
        prop_assert!((d - f).abs() < 1e-10 * d.abs().max(1.0));
        prop_assert!((d - l).abs() < 1e-10 * d.abs().max(1.0));
    }

    #[test]
    fn lambda_opt_is_homogeneous_in_mean_and_scale(seed in any::<u64>(), c in 0.1f64..10.0) {
        let inst = random_instance(PosteriorKind::Diagonal, 4, 3, 5, seed);
        let lam = lambda_opt(&inst.posteriors);
        let mut scaled = inst.posteriors.clone();
        for i in 0..scaled.n() {
            let b = scaled.block_mut(i);
            b[..3].iter_mut().for_each(|v| *v *= c);
            b[3..].iter_mut().for_each(|v| *v += c.ln());
        }
        for (a, b) in lam.iter().zip(lambda_opt(&scaled).iter()) {
            prop_assert!(*a > 0.0);
            prop_assert!((b - c * a).abs() < 1e-12 * (c * a).max(1.0));
        }
    }

    #[test]
    fn lbfgs_solves_random_convex_quadratics(diag in prop::collection::vec(0.5f64..20.0, 10), b in prop::collection::vec(-5.0f64..5.0, 10)) {
        let res = lbfgs_minimize(
            |x| {
                let f = x.iter().zip(&diag).zip(&b).map(|((x, a), b)| 0.5 * a * x * x - b * x).sum();
                let g = x.iter().zip(&diag).zip(&b).map(|((x, a), b)| a * x - b).collect();
                (f, g)
            },
            &[0.0; 10],
            200,
            10,
            1e-10,
        );
        prop_assert_eq!(res.status, LbfgsStatus::Converged);
        for ((x, a), b) in res.x.iter().zip(&diag).zip(&b) {
            prop_assert!((x - b / a).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_is_deterministic(start in prop::collection::vec(-3.0f64..3.0, 5), lr in 1e-4f64..0.1) {
        let run = || {
            let mut x = start.clone();
            let mut state = AdamState::new(5, lr);
            for _ in 0..50 {
                let g: Vec<f64> = x.iter().map(|v| -2.0 * (v - 1.0)).collect();
                adam_step(&mut state, &mut x, &g).unwrap();
            }
            x
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn random_instances_are_reproducible() {
    let a = random_instance(PosteriorKind::Full, 4, 3, 5, 9);
    let b = random_instance(PosteriorKind::Full, 4, 3, 5, 9);
    assert_eq!(a.posteriors, b.posteriors);
    assert_eq!(a.preimage.v, b.preimage.v);
    assert_eq!(a.data.x, DMatrix::from_column_slice(5, 4, b.data.x.as_slice()));
}
