//! Quasi-Newton minimization with analytic gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS on the inverse Hessian with a backtracking Armijo line search.
/// `f` returns (value, gradient). Convergence is ‖gradient‖∞ < `grad_tol`.
pub(crate) fn bfgs<F>(f: F, x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let p = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = DMatrix::<f64>::identity(p, p);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(p, p);
            d = -g.clone();
            slope = -g.norm_squared();
        }

        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + &d * step;
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                next = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = next else {
            // no decrease along any tested step: restart from steepest descent once
            if h != DMatrix::identity(p, p) {
                h = DMatrix::identity(p, p);
                continue;
            }
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let gradient_norm = g.amax();
    BfgsResult {
        x,
        value: fx,
        gradient_norm,
        iterations,
        converged: gradient_norm < opts.grad_tol,
    }
}
