//! Outcome confounding bridges.
//!
//! A bridge h(a, x, w) solves E(Y | a, z, x) = Σ_w h(a, x, w) P(w | a, z, x) for
//! every z. Discrete laws are solved exactly; the probit-linked parametric
//! bridge has a closed-form mean under a Gaussian W law.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{completeness_rank_check, DiscreteJointLaw};
use crate::dgp::std_normal_cdf;
use crate::error::{Error, Result};
use crate::linalg::LeastSquares;
use crate::rng::seeded;

/// Minimum |P(W=1|a,z=1,x) − P(W=1|a,z=0,x)| accepted by the binary solver.
pub const WEAK_PROXY_TOL: f64 = 1e-10;
/// Maximum bridge-system residual for a solution to count as exact.
pub const SYSTEM_TOL: f64 = 1e-8;

/// A bridge table h(a, x, ·) for one (a, x) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBridge {
    pub a: usize,
    pub x: Option<usize>,
    /// h indexed by the level of W.
    pub h: Vec<f64>,
    /// More than one solution exists; `h` is the minimum-norm one.
    pub rank_deficient: bool,
    /// max_z |E(Y|a,z,x) − Σ_w h_w P(w|a,z,x)|.
    pub residual: f64,
}

/// max_z |E(Y | a, z, x) − Σ_w h_w P(w | a, z, x)|.
pub fn bridge_residual(law: &DiscreteJointLaw, a: usize, x: Option<usize>, h: &[f64]) -> Result<f64> {
    let m = law.w_given_z(a, x)?;
    let b = law.y_given_z(a, x)?;
    if h.len() != m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "bridge has {} entries, W has {} levels",
            h.len(),
            m.nrows()
        )));
    }
    let fitted = m.tr_mul(&DVector::from_column_slice(h));
    Ok((fitted - b).amax())
}

fn binary_parts(law: &DiscreteJointLaw, a: usize, x: Option<usize>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    if law.levels("W") != Some(2) || law.levels("Z") != Some(2) {
        return Err(Error::InvalidLaw("the binary solver needs binary W and Z".into()));
    }
    let m = law.w_given_z(a, x)?;
    let ey = law.y_given_z(a, x)?;
    let pw1 = DVector::from_iterator(2, (0..2).map(|z| m[(1, z)]));
    let delta = pw1[1] - pw1[0];
    if delta.abs() < WEAK_PROXY_TOL {
        return Err(Error::WeakProxy { association: delta });
    }
    let g = (ey[1] - ey[0]) / delta;
    Ok((ey, pw1, g))
}

/// Closed-form bridge for binary W and Z built from the `z` slice:
/// h(a, x, w) = E(Y|a,z,x) + g(a,x)·[w − P(W=1|a,z,x)], with g the ratio of the
/// Y and W differences across z. Both slices give the same table.
pub fn binary_bridge_from_slice(
    law: &DiscreteJointLaw,
    a: usize,
    x: Option<usize>,
    z: usize,
) -> Result<DiscreteBridge> {
    let (ey, pw1, g) = binary_parts(law, a, x)?;
    if z > 1 {
        return Err(Error::InvalidArgument(format!("z must be 0 or 1, got {z}")));
    }
    let h: Vec<f64> = (0..2).map(|w| ey[z] + g * (w as f64 - pw1[z])).collect();
    let residual = bridge_residual(law, a, x, &h)?;
    Ok(DiscreteBridge {
        a,
        x,
        h,
        rank_deficient: false,
        residual,
    })
}

pub fn solve_binary_bridge(law: &DiscreteJointLaw, a: usize, x: Option<usize>) -> Result<DiscreteBridge> {
    binary_bridge_from_slice(law, a, x, 0)
}

/// Minimum-norm least-squares solution of the d_z × d_w system
/// Σ_w h_w P(w | a, z, x) = E(Y | a, z, x).
pub fn solve_categorical_bridge(
    law: &DiscreteJointLaw,
    a: usize,
    x: Option<usize>,
) -> Result<DiscreteBridge> {
    let system = law.w_given_z(a, x)?.transpose();
    let rhs = law.y_given_z(a, x)?;
    let ls = LeastSquares::new(&system)?;
    let mut h = ls.solve(&rhs)?;
    // one refinement step; near-weak proxies make the system ill-conditioned
    h += ls.solve(&(&rhs - &system * &h))?;
    let residual = (&system * &h - &rhs).amax();
    if residual > SYSTEM_TOL {
        return Err(Error::NoSolution { residual });
    }
    Ok(DiscreteBridge {
        a,
        x,
        h: h.iter().copied().collect(),
        rank_deficient: ls.rank() < system.ncols(),
        residual,
    })
}

/// h(a, x, w) = E(Y | a, x, w): the bridge when Z is empty and (X, W) suffice
/// for exchangeability.
pub fn g_formula_bridge(law: &DiscreteJointLaw, a: usize, x: Option<usize>) -> Result<DiscreteBridge> {
    let h: Vec<f64> = law.y_given_w(a, x)?.iter().copied().collect();
    let residual = bridge_residual(law, a, x, &h)?;
    Ok(DiscreteBridge {
        a,
        x,
        h,
        rank_deficient: false,
        residual,
    })
}

/// β(a) = Σ_{x,w} h(a, x, w) P(W = w, X = x), given one bridge per X level
/// (a single bridge with `x = None` when the law has no X).
pub fn apply_proximal_g_formula(law: &DiscreteJointLaw, bridges: &[DiscreteBridge]) -> Result<f64> {
    let kw = law.require("W")?;
    let kx = law.index_of("X");
    let dx = kx.map_or(1, |k| law.variables()[k].levels);
    if bridges.len() != dx {
        return Err(Error::DimensionMismatch(format!(
            "{} bridges for {dx} X levels",
            bridges.len()
        )));
    }
    let mut beta = 0.0;
    for bridge in bridges {
        for (w, h) in bridge.h.iter().enumerate() {
            let mut c = vec![(kw, w)];
            if let (Some(k), Some(x)) = (kx, bridge.x) {
                c.push((k, x));
            }
            beta += h * law.mass(&c);
        }
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteSolver {
    Binary,
    Categorical,
}

/// Solves the bridge in every X cell and applies the proximal g-formula.
pub fn proximal_g_formula(law: &DiscreteJointLaw, a: usize, solver: DiscreteSolver) -> Result<f64> {
    let bridges = bridges_for(law, a, solver)?;
    apply_proximal_g_formula(law, &bridges)
}

pub fn bridges_for(law: &DiscreteJointLaw, a: usize, solver: DiscreteSolver) -> Result<Vec<DiscreteBridge>> {
    let xs: Vec<Option<usize>> = match law.levels("X") {
        Some(d) => (0..d).map(Some).collect(),
        None => vec![None],
    };
    xs.into_iter()
        .map(|x| match solver {
            DiscreteSolver::Binary => solve_binary_bridge(law, a, x),
            DiscreteSolver::Categorical => {
                completeness_rank_check(law, a, x)?;
                solve_categorical_bridge(law, a, x)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeForm {
    Linear,
    ProbitLinked,
}

/// Parametric bridge h(w, a, x; η) with η laid out as
/// `[intercept, η_a, η_w (d_w), η_x (d_x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeFunction {
    pub form: BridgeForm,
    pub eta: DVector<f64>,
    pub d_w: usize,
    pub d_x: usize,
    /// Residual covariance of the first-stage W model (probit-linked only).
    pub w_cov: Option<DMatrix<f64>>,
}

impl BridgeFunction {
    pub fn new(form: BridgeForm, eta: DVector<f64>, d_w: usize, d_x: usize) -> Result<Self> {
        if eta.len() != 2 + d_w + d_x {
            return Err(Error::DimensionMismatch(format!(
                "eta has {} entries, expected {}",
                eta.len(),
                2 + d_w + d_x
            )));
        }
        Ok(Self {
            form,
            eta,
            d_w,
            d_x,
            w_cov: None,
        })
    }

    pub fn with_w_cov(mut self, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (self.d_w, self.d_w) {
            return Err(Error::DimensionMismatch("W covariance must be d_w x d_w".into()));
        }
        self.w_cov = Some(cov);
        Ok(self)
    }

    pub fn intercept(&self) -> f64 {
        self.eta[0]
    }

    pub fn eta_a(&self) -> f64 {
        self.eta[1]
    }

    pub fn eta_w(&self) -> DVector<f64> {
        self.eta.rows(2, self.d_w).into_owned()
    }

    pub fn eta_x(&self) -> DVector<f64> {
        self.eta.rows(2 + self.d_w, self.d_x).into_owned()
    }

    /// (1, a, w, x)·η.
    pub fn linear_predictor(&self, w: &[f64], a: f64, x: &[f64]) -> f64 {
        let mut t = self.eta[0] + self.eta[1] * a;
        for (k, v) in w.iter().enumerate() {
            t += self.eta[2 + k] * v;
        }
        for (k, v) in x.iter().enumerate() {
            t += self.eta[2 + self.d_w + k] * v;
        }
        t
    }

    pub fn evaluate(&self, w: &[f64], a: f64, x: &[f64]) -> f64 {
        let t = self.linear_predictor(w, a, x);
        match self.form {
            BridgeForm::Linear => t,
            BridgeForm::ProbitLinked => std_normal_cdf(t),
        }
    }

    /// φ = (1 + η_wᵀ Σ η_w)^(−1/2); 1 without a covariance.
    pub fn phi(&self) -> f64 {
        match &self.w_cov {
            Some(cov) => probit_attenuation(&self.eta_w(), cov),
            None => 1.0,
        }
    }
}

pub fn probit_attenuation(eta_w: &DVector<f64>, w_cov: &DMatrix<f64>) -> f64 {
    let q = (eta_w.transpose() * w_cov * eta_w)[(0, 0)];
    1.0 / (1.0 + q.max(0.0)).sqrt()
}

/// Linear first-stage W model: W = (1, z, a, x)·Θ + ε, ε ~ N(0, Σ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    /// (1 + d_z + 1 + d_x) × d_w.
    pub coefficients: DMatrix<f64>,
    pub residual_cov: DMatrix<f64>,
}

impl FirstStage {
    pub fn mean(&self, z: &[f64], a: f64, x: &[f64]) -> Result<DVector<f64>> {
        let p = 2 + z.len() + x.len();
        if p != self.coefficients.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "first stage expects {} regressors, got {p}",
                self.coefficients.nrows()
            )));
        }
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend_from_slice(z);
        row.push(a);
        row.extend_from_slice(x);
        Ok(self.coefficients.tr_mul(&DVector::from_vec(row)))
    }
}

/// E{Φ((1, W, a, x)·η) | z, a, x} under the Gaussian first stage:
/// Φ((1, E(W|z,a,x), a, x)·η · φ).
pub fn probit_bridge_mean(
    bridge: &BridgeFunction,
    first_stage: &FirstStage,
    z: &[f64],
    a: f64,
    x: &[f64],
) -> Result<f64> {
    if bridge.form != BridgeForm::ProbitLinked {
        return Err(Error::InvalidArgument("probit_bridge_mean needs a probit-linked bridge".into()));
    }
    let mean = first_stage.mean(z, a, x)?;
    let phi = probit_attenuation(&bridge.eta_w(), &first_stage.residual_cov);
    Ok(std_normal_cdf(
        bridge.linear_predictor(mean.as_slice(), a, x) * phi,
    ))
}

/// Monte-Carlo E{h(W, a, x)} for W ~ N(mean, cov): returns (estimate, standard error).
pub fn mc_bridge_mean(
    bridge: &BridgeFunction,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: f64,
    x: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = mean.len();
    let chol = cov_factor(cov)?;
    let mut rng = seeded(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut eps = DVector::zeros(d);
    for _ in 0..draws {
        for k in 0..d {
            eps[k] = StandardNormal.sample(&mut rng);
        }
        let w = mean + &chol * &eps;
        let v = bridge.evaluate(w.as_slice(), a, x);
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let m = sum / n;
    let var = (sum_sq / n - m * m).max(0.0) * n / (n - 1.0);
    Ok((m, (var / n).sqrt()))
}

/// Lower-triangular L with L Lᵀ = cov; tolerates a singular (e.g. zero) covariance.
pub(crate) fn cov_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    // positive semidefinite fallback through the symmetric eigendecomposition
    let eig = cov.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}
