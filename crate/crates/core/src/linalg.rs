//! Least-squares and logistic-regression kernel shared by every estimator.
//!
//! All solves go through a rank-revealing factorization (thin QR followed by an
//! SVD of the triangular factor) so rank-deficient designs yield the
//! minimum-Euclidean-norm solution instead of an error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used to decide numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A factorized design matrix that can be reused for several responses.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    nrows: usize,
    ncols: usize,
    /// Left singular vectors restricted to the numerical range (n × rank).
    u: DMatrix<f64>,
    /// Right singular vectors restricted to the numerical range (p × rank).
    v: DMatrix<f64>,
    inv_singular: DVector<f64>,
    rank: usize,
}

impl LeastSquares {
    pub fn new(design: &DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(design, DEFAULT_RANK_TOL)
    }

    pub fn with_tolerance(design: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let (n, p) = design.shape();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch(format!(
                "design must be non-empty, got {n}x{p}"
            )));
        }
        if design.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite values".into()));
        }

        let (left, singular, right) = if n >= p {
            let qr = design.clone().qr();
            let q = qr.q();
            let r = qr.r();
            let svd = r.svd(true, true);
            let u_r = svd.u.expect("requested U");
            let v_t = svd.v_t.expect("requested V^T");
            (q * u_r, svd.singular_values, v_t.transpose())
        } else {
            let svd = design.clone().svd(true, true);
            let u = svd.u.expect("requested U");
            let v_t = svd.v_t.expect("requested V^T");
            (u, svd.singular_values, v_t.transpose())
        };

        let s_max = singular.iter().cloned().fold(0.0_f64, f64::max);
        let keep: Vec<usize> = (0..singular.len())
            .filter(|&i| s_max > 0.0 && singular[i] > rank_tol * s_max)
            .collect();
        let rank = keep.len();
        let u = DMatrix::from_fn(n, rank, |i, k| left[(i, keep[k])]);
        let v = DMatrix::from_fn(p, rank, |i, k| right[(i, keep[k])]);
        let inv_singular = DVector::from_fn(rank, |k, _| 1.0 / singular[keep[k]]);

        Ok(Self {
            nrows: n,
            ncols: p,
            u,
            v,
            inv_singular,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Minimum-norm least-squares coefficients for one response vector.
    pub fn solve(&self, response: &DVector<f64>) -> Result<DVector<f64>> {
        if response.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, design has {} rows",
                response.len(),
                self.nrows
            )));
        }
        let proj = self.u.tr_mul(response).component_mul(&self.inv_singular);
        Ok(&self.v * proj)
    }

    /// Solves for every column of `responses` at once (p × k result).
    pub fn solve_many(&self, responses: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if responses.nrows() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "responses have {} rows, design has {}",
                responses.nrows(),
                self.nrows
            )));
        }
        let mut proj = self.u.tr_mul(responses);
        for (k, mut row) in proj.row_iter_mut().enumerate() {
            row *= self.inv_singular[k];
        }
        Ok(&self.v * proj)
    }

    /// Moore–Penrose inverse of XᵀX.
    pub fn gram_pinv(&self) -> DMatrix<f64> {
        let mut scaled = self.v.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.inv_singular[k] * self.inv_singular[k];
        }
        &scaled * self.v.transpose()
    }
}

/// Result of a (weighted) least-squares fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub fitted_values: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rank: usize,
    /// Weighted residual sum of squares over `n - rank`.
    pub sigma2_hat: f64,
    /// `sigma2_hat * (XᵀWX)⁺`; a covariance only when `unique` is true.
    pub cov_coefficients: DMatrix<f64>,
    /// False when the design is rank deficient and the coefficients are the
    /// minimum-norm member of a solution set.
    pub unique: bool,
}

impl LinearFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.cov_coefficients.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

fn check_weights(weights: &DVector<f64>, n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "weights have length {}, expected {n}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.sum() <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(())
}

/// Minimum-norm (weighted) least squares.
pub fn ols(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: Option<&DVector<f64>>,
) -> Result<LinearFit> {
    ols_with_tolerance(design, response, weights, DEFAULT_RANK_TOL)
}

pub fn ols_with_tolerance(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    rank_tol: f64,
) -> Result<LinearFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {n} rows",
            response.len()
        )));
    }
    if response.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("response contains non-finite values".into()));
    }

    let (ls, coefficients) = match weights {
        None => {
            let ls = LeastSquares::with_tolerance(design, rank_tol)?;
            let coef = ls.solve(response)?;
            (ls, coef)
        }
        Some(w) => {
            check_weights(w, n)?;
            let sw = w.map(f64::sqrt);
            let mut scaled = design.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= sw[i];
            }
            let ls = LeastSquares::with_tolerance(&scaled, rank_tol)?;
            let coef = ls.solve(&response.component_mul(&sw))?;
            (ls, coef)
        }
    };

    let fitted_values = design * &coefficients;
    let residuals = response - &fitted_values;
    let rank = ls.rank();
    let weighted_rss = match weights {
        None => residuals.norm_squared(),
        Some(w) => residuals
            .iter()
            .zip(w.iter())
            .map(|(r, wi)| wi * r * r)
            .sum(),
    };
    let sigma2_hat = if n > rank {
        weighted_rss / (n - rank) as f64
    } else {
        0.0
    };
    let cov_coefficients = ls.gram_pinv() * sigma2_hat;

    Ok(LinearFit {
        coefficients,
        fitted_values,
        residuals,
        rank,
        sigma2_hat,
        cov_coefficients,
        unique: rank == p,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub log_likelihood: f64,
    /// Set when the coefficient norm exceeds 1e4 or the fitted probabilities
    /// reproduce the response exactly, the signatures of separated data.
    pub separation: bool,
    /// Inverse observed information at the final coefficients.
    pub cov_coefficients: DMatrix<f64>,
    /// Log-likelihood after each accepted iteration, starting from the zero vector.
    pub log_likelihood_trace: Vec<f64>,
}

impl LogisticFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.cov_coefficients.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn predict(&self, design: &DMatrix<f64>) -> DVector<f64> {
        (design * &self.coefficients).map(sigmoid)
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn bernoulli_loglik(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y.iter())
        .map(|(e, yi)| yi * e - softplus(*e))
        .sum()
}

const SEPARATION_NORM: f64 = 1e4;

/// Logistic regression by iteratively reweighted least squares with step halving.
pub fn logistic_irls(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    options: LogisticOptions,
) -> Result<LogisticFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {n} rows",
            response.len()
        )));
    }
    if response.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::NonBinary("response".into()));
    }
    let ones = response.iter().filter(|y| **y == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClassResponse);
    }

    let mut beta = DVector::zeros(p);
    let mut loglik = bernoulli_loglik(design, response, &beta);
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut iterations = 0;
    let mut info_pinv = DMatrix::zeros(p, p);

    for iter in 1..=options.max_iter {
        iterations = iter;
        let prob = (design * &beta).map(sigmoid);
        let score = design.tr_mul(&(response - &prob));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= (prob[i] * (1.0 - prob[i])).sqrt();
        }
        let ls = LeastSquares::new(&weighted)?;
        info_pinv = ls.gram_pinv();
        let step = &info_pinv * &score;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &beta + &step * scale;
            let ll = bernoulli_loglik(design, response, &candidate);
            if ll.is_finite() && ll >= loglik {
                accepted = Some((candidate, ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, ll)) = accepted else {
            // no ascent direction left: we are at the optimum up to rounding
            converged = true;
            break;
        };

        let change = (&next - &beta)
            .iter()
            .zip(next.iter())
            .map(|(d, b)| d.abs() / (1.0 + b.abs()))
            .fold(0.0_f64, f64::max);
        beta = next;
        loglik = ll;
        trace.push(ll);
        if change < options.tol {
            converged = true;
            break;
        }
        if beta.norm() > SEPARATION_NORM {
            break;
        }
    }

    // refresh the information at the final estimate
    let prob = (design * &beta).map(sigmoid);
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= (prob[i] * (1.0 - prob[i])).sqrt();
    }
    if let Ok(ls) = LeastSquares::new(&weighted) {
        info_pinv = ls.gram_pinv();
    }

    // A perfect fit means the likelihood has no maximizer: the coefficients
    // would diverge given enough iterations.
    let perfect_fit = response
        .iter()
        .zip(prob.iter())
        .all(|(y, p)| (y - p).abs() < 1e-8);
    let separation = beta.norm() > SEPARATION_NORM || perfect_fit;
    Ok(LogisticFit {
        coefficients: beta,
        converged: converged && !separation,
        n_iterations: iterations,
        log_likelihood: loglik,
        separation,
        cov_coefficients: info_pinv,
        log_likelihood_trace: trace,
    })
}

/// Appends a leading intercept column.
pub fn with_intercept(design: &DMatrix<f64>) -> DMatrix<f64> {
    design.clone().insert_column(0, 1.0)
}

/// Builds an n × k matrix from column slices.
pub fn columns_to_matrix(n: usize, columns: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}
