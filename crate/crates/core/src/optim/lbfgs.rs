use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Sufficient-decrease constant of the Armijo condition.
pub const ARMIJO_C: f64 = 1e-4;
pub const BACKTRACK_SHRINK: f64 = 0.5;
pub const MAX_BACKTRACKS: usize = 40;
/// Relative change in the objective below which the approximate Wolfe test is used instead.
pub const FLAT_RELATIVE: f64 = 1e-10;
/// Curvature constant of the approximate Wolfe test.
pub const WOLFE_SIGMA: f64 = 0.9;

/// Why [`lbfgs_minimize`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// No acceptable step was found; the best point so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

/// Curvature pairs `(s, y)` with `s^T y > 0`, newest last.
#[derive(Debug, Clone, Default)]
pub struct LbfgsState {
    pub history: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub capacity: usize,
}

impl LbfgsState {
    pub fn new(capacity: usize) -> Self {
        Self { history: VecDeque::with_capacity(capacity), capacity }
    }

    /// Stores the pair unless it violates the curvature condition. Returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm(&s) * norm(&y)) || self.capacity == 0 {
            return false;
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back((s, y));
        true
    }

    /// Two-loop recursion: returns `-H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y) in self.history.iter().rev() {
            let rho = 1.0 / dot(s, y);
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push((a, rho));
        }
        let gamma = match self.history.back() {
            Some((s, y)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), (a, rho)) in self.history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimizes `objective`, which returns the value and gradient at a point.
///
/// Non-finite values are treated as `+inf`, so the line search backs away from them.
pub fn lbfgs_minimize(
    mut objective: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    max_iters: usize,
    m: usize,
    tolerance: f64,
) -> LbfgsResult {
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x);
    let mut evaluations = 1;
    let mut state = LbfgsState::new(m);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;
    if !f.is_finite() {
        f = f64::INFINITY;
    }
    while iterations < max_iters {
        if norm(&g) < tolerance {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut d = state.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            state.history.clear();
            d = state.direction(&g);
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial);
            evaluations += 1;
            if ft.is_finite() && (ft <= f + ARMIJO_C * step * slope || approx_wolfe(f, ft, slope, dot(&gt, &d))) {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= BACKTRACK_SHRINK;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push(s, y);
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if status == LbfgsStatus::MaxIterations && norm(&g) < tolerance {
        status = LbfgsStatus::Converged;
    }
    LbfgsResult { gradient_norm: norm(&g), x, value: f, iterations, evaluations, status }
}

/// Near convergence the Armijo decrease drowns in rounding of `f`; then a step is accepted
/// when `f` is flat to relative precision and the directional derivative satisfies
/// `sigma * slope <= slope_t <= (1 - 2 c) |slope|`.
fn approx_wolfe(f: f64, ft: f64, slope: f64, slope_t: f64) -> bool {
    ft <= f + FLAT_RELATIVE * f.abs() && slope_t >= WOLFE_SIGMA * slope && slope_t <= (2.0 * ARMIJO_C - 1.0) * slope
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn convex_quadratic_converges_quickly() {
        let diag: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let target: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
        let f = |x: &[f64]| {
            let mut v = 0.0;
            let mut g = vec![0.0; 10];
            for i in 0..10 {
                let r = x[i] - target[i];
                v += 0.5 * diag[i] * r * r;
                g[i] = diag[i] * r;
            }
            (v, g)
        };
        let res = lbfgs_minimize(f, &[0.0; 10], 30, 10, 1e-8);
        assert_eq!(res.status, LbfgsStatus::Converged);
        assert!(res.iterations <= 30 && res.gradient_norm < 1e-8);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let res = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], 500, 10, 1e-12);
        assert!(res.value < 1e-8, "{res:?}");
    }

    #[test]
    fn optimal_start_does_not_move() {
        let res = lbfgs_minimize(rosenbrock, &[1.0, 1.0], 100, 10, 1e-10);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.x, vec![1.0, 1.0]);
    }

    #[test]
    fn accepted_values_never_increase() {
        let mut values = Vec::new();
        let mut last_accepted = f64::INFINITY;
        let res = lbfgs_minimize(
            |x| {
                let r = rosenbrock(x);
                values.push(r.0);
                r
            },
            &[-1.2, 1.0],
            60,
            5,
            1e-12,
        );
        assert!(res.value <= values[0]);
        // the returned value is the minimum over accepted points
        for v in values.iter().filter(|v| **v <= res.value) {
            last_accepted = last_accepted.min(*v);
        }
        assert_eq!(last_accepted, res.value);
    }

    #[test]
    fn curvature_violations_are_skipped() {
        let mut st = LbfgsState::new(3);
        assert!(!st.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(st.push(vec![1.0, 0.0], vec![2.0, 0.0]));
        for _ in 0..5 {
            st.push(vec![1.0, 1.0], vec![1.0, 1.0]);
        }
        assert_eq!(st.history.len(), 3);
    }
}
