//! Point-treatment estimators: OLS and g-formula baselines, proximal two-stage
//! least squares (P2SLS) and parametric proximal g-computation.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::bridge::{BridgeForm, BridgeFunction, FirstStage};
use crate::data::{Dataset, PointView};
use crate::dgp::{std_normal_cdf, std_normal_pdf};
use crate::error::{Error, Result};
use crate::estimate::{
    normal_ci, BetaPoint, Coefficient, ConfoundingTest, Contrast, Diagnostics, EffectEstimate,
    FirstStageSummary, Method, OptimizerReport, Warning,
};
use crate::linalg::{LeastSquares, DEFAULT_RANK_TOL};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng::substream;

/// First-stage Z-block F below this value raises a weak-instrument warning.
pub const WEAK_FIRST_STAGE_F: f64 = 10.0;

/// Treatment values at which β(a) is reported. The contrast compares the last
/// value with the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOptions {
    pub grid: Vec<f64>,
}

impl Default for PointOptions {
    fn default() -> Self {
        Self {
            grid: vec![0.0, 1.0],
        }
    }
}

/// Which covariate buckets enter an outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustSet {
    pub x: bool,
    pub w: bool,
    pub z: bool,
}

impl AdjustSet {
    pub const X: AdjustSet = AdjustSet {
        x: true,
        w: false,
        z: false,
    };
    pub const ALL: AdjustSet = AdjustSet {
        x: true,
        w: true,
        z: true,
    };
}

impl Default for AdjustSet {
    fn default() -> Self {
        Self::X
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GFormulaConfig {
    pub adjust: AdjustSet,
    /// Adds treatment × covariate terms to the outcome model.
    pub interactions: bool,
}

impl Default for GFormulaConfig {
    fn default() -> Self {
        Self {
            adjust: AdjustSet::ALL,
            interactions: false,
        }
    }
}

pub(crate) fn hcat(n: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut col = 0;
    for b in blocks {
        out.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    out
}

pub(crate) fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub(crate) fn ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

fn check_grid(opts: &PointOptions) -> Result<()> {
    if opts.grid.is_empty() || opts.grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("treatment grid must be nonempty and finite".into()));
    }
    Ok(())
}

fn named(names: &[String], values: &DVector<f64>, cov: Option<&DMatrix<f64>>, offset: usize) -> Vec<Coefficient> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| Coefficient {
            name: name.clone(),
            estimate: values[offset + k],
            se: cov.map(|c| c[(offset + k, offset + k)].max(0.0).sqrt()),
        })
        .collect()
}

/// Linear outcome model Y ~ (1, A, L[, A·L]) standardized over the empirical
/// law of L: β̂(a) = Eₙ{Ê(Y | a, L)}.
fn linear_standardization(
    v: &PointView,
    adjust: AdjustSet,
    interactions: bool,
    method: Method,
    opts: &PointOptions,
) -> Result<EffectEstimate> {
    check_grid(opts)?;
    let n = v.n();
    let mut blocks: Vec<&DMatrix<f64>> = Vec::new();
    let mut l_names: Vec<String> = Vec::new();
    if adjust.x {
        blocks.push(&v.x);
        l_names.extend(v.x_names.iter().cloned());
    }
    if adjust.w {
        blocks.push(&v.w);
        l_names.extend(v.w_names.iter().cloned());
    }
    if adjust.z {
        blocks.push(&v.z);
        l_names.extend(v.z_names.iter().cloned());
    }
    let l = hcat(n, &blocks);
    let a = column(&v.a);
    let design_at = |a: &DMatrix<f64>| -> DMatrix<f64> {
        let mut parts = vec![ones(n), a.clone(), l.clone()];
        if interactions {
            let mut al = l.clone();
            for (i, mut row) in al.row_iter_mut().enumerate() {
                row *= a[(i, 0)];
            }
            parts.push(al);
        }
        let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
        hcat(n, &refs)
    };
    let design = design_at(&a);
    let fit = crate::linalg::ols(&design, &v.y, None)?;

    let mut names = vec!["(intercept)".to_string(), v.treatment_name.clone()];
    names.extend(l_names.iter().cloned());
    if interactions {
        names.extend(l_names.iter().map(|c| format!("{}:{c}", v.treatment_name)));
    }

    // β̂(a) = m(a)·b with m(a) the column means of the design at A ≡ a
    let mean_row = |value: f64| -> DVector<f64> {
        let d = design_at(&DMatrix::from_element(n, 1, value));
        DVector::from_vec(column_means(&d))
    };
    let cov = fit.unique.then_some(&fit.cov_coefficients);
    let beta = opts
        .grid
        .iter()
        .map(|&value| {
            let m = mean_row(value);
            BetaPoint {
                treatment: vec![value],
                estimate: m.dot(&fit.coefficients),
                se: cov.map(|c| (m.transpose() * c * &m)[(0, 0)].max(0.0).sqrt()),
            }
        })
        .collect::<Vec<_>>();
    let contrast = contrast_of(&beta, |lo, hi| {
        let g = mean_row(hi) - mean_row(lo);
        cov.map(|c| (g.transpose() * c * &g)[(0, 0)].max(0.0).sqrt())
    });

    let mut diagnostics = Diagnostics::default();
    if !fit.unique {
        diagnostics.warnings.push(Warning::RankDeficientStage2 {
            rank: fit.rank,
            columns: design.ncols(),
        });
    }
    let coefficients = named(&names, &fit.coefficients, cov, 0);
    Ok(EffectEstimate {
        method,
        n,
        beta,
        contrast,
        slope: Some(coefficients[1].clone()),
        eta_w: Vec::new(),
        coefficients,
        diagnostics,
    })
}

fn contrast_of(beta: &[BetaPoint], se: impl Fn(f64, f64) -> Option<f64>) -> Option<Contrast> {
    if beta.len() < 2 {
        return None;
    }
    let (lo, hi) = (&beta[0], &beta[beta.len() - 1]);
    let estimate = hi.estimate - lo.estimate;
    let se = se(lo.treatment[0], hi.treatment[0]);
    Some(Contrast {
        low: lo.treatment.clone(),
        high: hi.treatment.clone(),
        estimate,
        se,
        ci: se.map(|s| normal_ci(estimate, s)),
    })
}

/// Least squares of Y on (1, A, selected covariates); the reported slope is
/// the A coefficient with its classical standard error.
pub fn fit_ols_baseline(data: &Dataset, adjust: AdjustSet, opts: &PointOptions) -> Result<EffectEstimate> {
    linear_standardization(&data.point_view()?, adjust, false, Method::Ols, opts)
}

/// Standard g-formula with a linear outcome regression.
pub fn fit_standard_g_formula(
    data: &Dataset,
    config: GFormulaConfig,
    opts: &PointOptions,
) -> Result<EffectEstimate> {
    linear_standardization(
        &data.point_view()?,
        config.adjust,
        config.interactions,
        Method::GFormula,
        opts,
    )
}

/// Everything computed by P2SLS.
#[derive(Debug, Clone)]
pub struct P2slsFit {
    pub estimate: EffectEstimate,
    /// Stage-1 projection of W on (1, Z, A, X); None when Z is empty.
    pub first_stage: Option<FirstStage>,
    /// Stage-2 coefficients over (1, A, Ŵ, X).
    pub eta: DVector<f64>,
    /// Asymptotic 2SLS covariance of `eta`.
    pub cov: DMatrix<f64>,
    pub w_hat: DMatrix<f64>,
}

struct StageOne {
    w_hat: DMatrix<f64>,
    first_stage: Option<FirstStage>,
    summaries: Vec<FirstStageSummary>,
    warnings: Vec<Warning>,
}

/// Per-column OLS of W on (1, Z, A, X), with the F statistic of the Z block.
fn stage_one(v: &PointView) -> Result<StageOne> {
    let n = v.n();
    let a = column(&v.a);
    if v.z.ncols() == 0 {
        let summaries = v
            .w_names
            .iter()
            .map(|c| FirstStageSummary {
                column: c.clone(),
                f_statistic: None,
                df1: 0,
                df2: 0,
                r_squared: 1.0,
            })
            .collect();
        return Ok(StageOne {
            w_hat: v.w.clone(),
            first_stage: None,
            summaries,
            warnings: vec![Warning::NoTreatmentProxies],
        });
    }
    let full = hcat(n, &[&ones(n), &v.z, &a, &v.x]);
    let restricted = hcat(n, &[&ones(n), &a, &v.x]);
    let ls_full = LeastSquares::new(&full)?;
    let ls_restricted = LeastSquares::new(&restricted)?;
    let theta = ls_full.solve_many(&v.w)?;
    let w_hat = &full * &theta;
    let resid = &v.w - &w_hat;
    let resid_r = &v.w - &restricted * ls_restricted.solve_many(&v.w)?;
    let q = ls_full.rank().saturating_sub(ls_restricted.rank());
    let df2 = n.saturating_sub(ls_full.rank());

    let mut summaries = Vec::new();
    let mut warnings = Vec::new();
    for (k, name) in v.w_names.iter().enumerate() {
        let rss_f = resid.column(k).norm_squared();
        let rss_r = resid_r.column(k).norm_squared();
        let f = if q == 0 || df2 == 0 {
            0.0
        } else if rss_f <= 0.0 {
            f64::INFINITY
        } else {
            ((rss_r - rss_f) / q as f64) / (rss_f / df2 as f64)
        };
        let wk = v.w.column(k);
        let mean = wk.mean();
        let tss: f64 = wk.iter().map(|x| (x - mean).powi(2)).sum();
        if f < WEAK_FIRST_STAGE_F {
            warnings.push(Warning::WeakFirstStage {
                column: name.clone(),
                f_statistic: f,
            });
        }
        summaries.push(FirstStageSummary {
            column: name.clone(),
            f_statistic: Some(f),
            df1: q,
            df2,
            r_squared: if tss > 0.0 { 1.0 - rss_f / tss } else { 1.0 },
        });
    }
    let residual_cov = resid.tr_mul(&resid) / n as f64;
    Ok(StageOne {
        w_hat,
        first_stage: Some(FirstStage {
            coefficients: theta,
            residual_cov,
        }),
        summaries,
        warnings,
    })
}

fn require_w(v: &PointView) -> Result<()> {
    if v.w.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "proximal estimators need at least one outcome-inducing proxy (proxy_w)".into(),
        ));
    }
    Ok(())
}

/// Wald statistic for η_w = 0 given its covariance block.
pub fn wald_test(eta_w: &DVector<f64>, cov: &DMatrix<f64>, source: &str) -> ConfoundingTest {
    let ls = LeastSquares::with_tolerance(cov, DEFAULT_RANK_TOL);
    let (statistic, df) = match ls {
        Ok(ls) if ls.rank() > 0 => {
            let pinv_eta = ls.solve(eta_w).expect("matching dimensions");
            (eta_w.dot(&pinv_eta), ls.rank())
        }
        _ => (0.0, 0),
    };
    let p_value = if df == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).expect("positive df");
        (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0)
    };
    ConfoundingTest {
        statistic,
        df,
        p_value,
        covariance: source.to_string(),
    }
}

/// Proximal two-stage least squares.
pub fn fit_p2sls(data: &Dataset, opts: &PointOptions) -> Result<EffectEstimate> {
    Ok(p2sls_detailed(&data.point_view()?, opts)?.estimate)
}

pub fn p2sls_detailed(v: &PointView, opts: &PointOptions) -> Result<P2slsFit> {
    check_grid(opts)?;
    require_w(v)?;
    let n = v.n();
    let (dw, dx) = (v.w.ncols(), v.x.ncols());
    let s1 = stage_one(v)?;
    let a = column(&v.a);

    let d2 = hcat(n, &[&ones(n), &a, &s1.w_hat, &v.x]);
    let ls2 = LeastSquares::new(&d2)?;
    let eta = ls2.solve(&v.y)?;
    let structural = hcat(n, &[&ones(n), &a, &v.w, &v.x]);
    let resid = &v.y - &structural * &eta;
    let rank = ls2.rank();
    let sigma2 = if n > rank {
        resid.norm_squared() / (n - rank) as f64
    } else {
        0.0
    };
    let cov = ls2.gram_pinv() * sigma2;
    let unique = rank == d2.ncols();

    let w_mean = column_means(&v.w);
    let x_mean = column_means(&v.x);
    let mean_row = |value: f64| {
        let mut r = vec![1.0, value];
        r.extend_from_slice(&w_mean);
        r.extend_from_slice(&x_mean);
        DVector::from_vec(r)
    };
    let beta: Vec<BetaPoint> = opts
        .grid
        .iter()
        .map(|&value| {
            let m = mean_row(value);
            BetaPoint {
                treatment: vec![value],
                estimate: m.dot(&eta),
                se: Some((m.transpose() * &cov * &m)[(0, 0)].max(0.0).sqrt()),
            }
        })
        .collect();
    let se_a = cov[(1, 1)].max(0.0).sqrt();
    let contrast = contrast_of(&beta, |lo, hi| Some((hi - lo).abs() * se_a));

    let mut names = vec!["(intercept)".to_string(), v.treatment_name.clone()];
    names.extend(v.w_names.iter().cloned());
    names.extend(v.x_names.iter().cloned());
    let coefficients = named(&names, &eta, Some(&cov), 0);
    let eta_w = coefficients[2..2 + dw].to_vec();

    let mut diagnostics = Diagnostics {
        first_stage: s1.summaries,
        warnings: s1.warnings,
        ..Diagnostics::default()
    };
    if !unique {
        diagnostics.warnings.push(Warning::RankDeficientStage2 {
            rank,
            columns: d2.ncols(),
        });
    }
    let eta_w_vec = eta.rows(2, dw).into_owned();
    let cov_ww = cov.view((2, 2), (dw, dw)).into_owned();
    diagnostics.confounding_test = Some(wald_test(&eta_w_vec, &cov_ww, "asymptotic"));
    debug_assert_eq!(eta.len(), 2 + dw + dx);

    Ok(P2slsFit {
        estimate: EffectEstimate {
            method: Method::P2sls,
            n,
            beta,
            contrast,
            slope: Some(coefficients[1].clone()),
            eta_w,
            coefficients,
            diagnostics,
        },
        first_stage: s1.first_stage,
        eta,
        cov,
        w_hat: s1.w_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSource {
    Asymptotic,
    Bootstrap { replicates: usize, seed: u64 },
}

/// Wald test of η_w = 0 in the P2SLS outcome bridge.
pub fn test_confounding(data: &Dataset, source: CovarianceSource) -> Result<ConfoundingTest> {
    let fit = p2sls_detailed(&data.point_view()?, &PointOptions::default())?;
    let dw = fit.estimate.eta_w.len();
    let eta_w = fit.eta.rows(2, dw).into_owned();
    match source {
        CovarianceSource::Asymptotic => Ok(wald_test(
            &eta_w,
            &fit.cov.view((2, 2), (dw, dw)).into_owned(),
            "asymptotic",
        )),
        CovarianceSource::Bootstrap { replicates, seed } => {
            let boot = crate::inference::bootstrap(
                |d: &Dataset| {
                    let f = p2sls_detailed(&d.point_view()?, &PointOptions::default())?;
                    Ok(f.eta.rows(2, dw).iter().copied().collect())
                },
                data,
                &crate::inference::BootstrapConfig {
                    replicates,
                    seed,
                    ..Default::default()
                },
            )?;
            Ok(wald_test(&eta_w, &boot.covariance(), "bootstrap"))
        }
    }
}

/// How μ(A; η) = E{h(W, A, X; η) | Z, A, X} is computed for the probit-linked bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integration {
    ClosedForm,
    /// Average over a fixed set of seeded Gaussian draws shared by all units.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgcompConfig {
    pub bridge: BridgeForm,
    /// Drops W from the bridge (η_w ≡ 0).
    pub eta_w_zero: bool,
    pub integration: Integration,
    /// Random restarts besides the zero start.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for PgcompConfig {
    fn default() -> Self {
        Self {
            bridge: BridgeForm::Linear,
            eta_w_zero: false,
            integration: Integration::ClosedForm,
            restarts: 3,
            seed: 0,
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PgcompFit {
    pub estimate: EffectEstimate,
    pub bridge: BridgeFunction,
    pub first_stage: Option<FirstStage>,
}

/// Parametric proximal g-computation with a linear-Gaussian W model.
pub fn fit_proximal_g_computation(
    data: &Dataset,
    config: &PgcompConfig,
    opts: &PointOptions,
) -> Result<EffectEstimate> {
    Ok(pgcomp_detailed(&data.point_view()?, config, opts)?.estimate)
}

pub fn pgcomp_detailed(v: &PointView, config: &PgcompConfig, opts: &PointOptions) -> Result<PgcompFit> {
    check_grid(opts)?;
    require_w(v)?;
    let n = v.n();
    let (dw, dx) = (v.w.ncols(), v.x.ncols());
    let s1 = stage_one(v)?;
    let w_cov = match &s1.first_stage {
        Some(fs) => fs.residual_cov.clone(),
        None => DMatrix::zeros(dw, dw),
    };
    let a = column(&v.a);
    let mut warnings = s1.warnings.clone();

    // regressors (1, A, Ŵ, X) for μ and (1, a, W, X) for evaluating h
    let fitted = hcat(n, &[&ones(n), &a, &s1.w_hat, &v.x]);
    let (eta, report) = match config.bridge {
        BridgeForm::Linear => {
            let design = if config.eta_w_zero {
                hcat(n, &[&ones(n), &a, &v.x])
            } else {
                fitted.clone()
            };
            let ls = LeastSquares::new(&design)?;
            if ls.rank() < design.ncols() {
                warnings.push(Warning::RankDeficientStage2 {
                    rank: ls.rank(),
                    columns: design.ncols(),
                });
            }
            let coef = ls.solve(&v.y)?;
            (expand_eta(&coef, config.eta_w_zero, dw, dx), None)
        }
        BridgeForm::ProbitLinked => {
            let binary = v.y.iter().all(|y| *y == 0.0 || *y == 1.0);
            let problem = ProbitProblem::new(v, &fitted, &w_cov, config, binary)?;
            let (coef, report) = problem.solve(config)?;
            (expand_eta(&coef, config.eta_w_zero, dw, dx), Some(report))
        }
    };

    let bridge = BridgeFunction::new(config.bridge, eta.clone(), dw, dx)?.with_w_cov(w_cov)?;
    let beta: Vec<BetaPoint> = opts
        .grid
        .iter()
        .map(|&value| {
            let total: f64 = (0..n)
                .map(|i| {
                    let w: Vec<f64> = v.w.row(i).iter().copied().collect();
                    let x: Vec<f64> = v.x.row(i).iter().copied().collect();
                    bridge.evaluate(&w, value, &x)
                })
                .sum();
            BetaPoint {
                treatment: vec![value],
                estimate: total / n as f64,
                se: None,
            }
        })
        .collect();
    let contrast = contrast_of(&beta, |_, _| None);

    let mut names = vec!["(intercept)".to_string(), v.treatment_name.clone()];
    names.extend(v.w_names.iter().cloned());
    names.extend(v.x_names.iter().cloned());
    let coefficients = named(&names, &eta, None, 0);
    let eta_w = coefficients[2..2 + dw].to_vec();

    Ok(PgcompFit {
        estimate: EffectEstimate {
            method: Method::ProximalGComputation,
            n,
            beta,
            contrast,
            slope: Some(coefficients[1].clone()),
            eta_w,
            coefficients,
            diagnostics: Diagnostics {
                first_stage: s1.summaries,
                confounding_test: None,
                warnings,
                optimizer: report,
            },
        },
        bridge,
        first_stage: s1.first_stage,
    })
}

/// Re-inserts zeros for η_w when it was constrained out.
fn expand_eta(coef: &DVector<f64>, eta_w_zero: bool, dw: usize, dx: usize) -> DVector<f64> {
    if !eta_w_zero {
        return coef.clone();
    }
    let mut full = DVector::zeros(2 + dw + dx);
    full[0] = coef[0];
    full[1] = coef[1];
    for k in 0..dx {
        full[2 + dw + k] = coef[2 + k];
    }
    full
}

/// log Φ(s), accurate in the lower tail.
fn log_norm_cdf(s: f64) -> f64 {
    if s > -30.0 {
        (0.5 * erfc(-s / std::f64::consts::SQRT_2)).ln()
    } else {
        -0.5 * s * s - (-s).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// φ(s)/Φ(s).
fn inverse_mills(s: f64) -> f64 {
    if s > -30.0 {
        std_normal_pdf(s) / (0.5 * erfc(-s / std::f64::consts::SQRT_2))
    } else {
        -s
    }
}

/// Objective for the probit-linked bridge. Free parameters are η without the
/// W block when `eta_w_zero` is set.
struct ProbitProblem<'a> {
    y: &'a DVector<f64>,
    /// (1, A, Ŵ, X), or (1, A, X) when η_w is constrained.
    design: DMatrix<f64>,
    w_cov: &'a DMatrix<f64>,
    dw: usize,
    eta_w_zero: bool,
    binary: bool,
    /// Gaussian perturbations L·ε_k added to Ŵ under Monte-Carlo integration.
    mc_shifts: Option<DMatrix<f64>>,
}

impl<'a> ProbitProblem<'a> {
    fn new(
        v: &'a PointView,
        fitted: &DMatrix<f64>,
        w_cov: &'a DMatrix<f64>,
        config: &PgcompConfig,
        binary: bool,
    ) -> Result<Self> {
        let n = v.n();
        let dw = v.w.ncols();
        let design = if config.eta_w_zero {
            hcat(n, &[&ones(n), &column(&v.a), &v.x])
        } else {
            fitted.clone()
        };
        let mc_shifts = match config.integration {
            Integration::ClosedForm => None,
            Integration::MonteCarlo { draws, seed } => {
                if draws == 0 {
                    return Err(Error::InvalidArgument("Monte-Carlo integration needs draws > 0".into()));
                }
                let l = crate::bridge::cov_factor(w_cov)?;
                let mut rng = substream(seed, 0);
                let eps = DMatrix::from_fn(dw, draws, |_, _| StandardNormal.sample(&mut rng));
                Some((l * eps).transpose())
            }
        };
        Ok(Self {
            y: &v.y,
            design,
            w_cov,
            dw,
            eta_w_zero: config.eta_w_zero,
            binary,
            mc_shifts,
        })
    }

    fn n_params(&self) -> usize {
        self.design.ncols()
    }

    /// Mean negative log-likelihood (binary Y) or mean squared error, with gradient.
    fn objective(&self, eta: &DVector<f64>) -> (f64, DVector<f64>) {
        match &self.mc_shifts {
            None => self.closed_form_objective(eta),
            Some(shifts) => self.mc_objective(eta, shifts),
        }
    }

    fn closed_form_objective(&self, eta: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.y.len();
        let p = self.n_params();
        let t = &self.design * eta;
        let (phi, dphi) = if self.eta_w_zero || self.dw == 0 {
            (1.0, DVector::zeros(p))
        } else {
            let ew = eta.rows(2, self.dw).into_owned();
            let phi = crate::bridge::probit_attenuation(&ew, self.w_cov);
            let sew = self.w_cov * &ew * (-phi.powi(3));
            let mut d = DVector::zeros(p);
            d.rows_mut(2, self.dw).copy_from(&sew);
            (phi, d)
        };
        let mut value = 0.0;
        let mut grad = DVector::zeros(p);
        for i in 0..n {
            let s = t[i] * phi;
            let (loss, dloss_ds) = if self.binary {
                if self.y[i] == 1.0 {
                    (-log_norm_cdf(s), -inverse_mills(s))
                } else {
                    (-log_norm_cdf(-s), inverse_mills(-s))
                }
            } else {
                let r = self.y[i] - std_normal_cdf(s);
                (r * r, -2.0 * r * std_normal_pdf(s))
            };
            value += loss;
            // ds/dη = φ·row + t·dφ/dη
            let row = self.design.row(i);
            for k in 0..p {
                grad[k] += dloss_ds * (phi * row[k] + t[i] * dphi[k]);
            }
        }
        (value / n as f64, grad / n as f64)
    }

    fn mc_objective(&self, eta: &DVector<f64>, shifts: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let n = self.y.len();
        let p = self.n_params();
        let draws = shifts.nrows();
        let t = &self.design * eta;
        // the W block of η moves each draw: t_ik = t_i + η_wᵀ(L ε_k)
        let offsets: DVector<f64> = if self.eta_w_zero || self.dw == 0 {
            DVector::zeros(draws)
        } else {
            shifts * eta.rows(2, self.dw)
        };
        let mut value = 0.0;
        let mut grad = DVector::zeros(p);
        let mut dmu = DVector::zeros(p);
        for i in 0..n {
            let row = self.design.row(i);
            let mut mu = 0.0;
            dmu.fill(0.0);
            for k in 0..draws {
                let s = t[i] + offsets[k];
                mu += std_normal_cdf(s);
                let dens = std_normal_pdf(s);
                for j in 0..p {
                    dmu[j] += dens * row[j];
                }
                if !self.eta_w_zero {
                    for j in 0..self.dw {
                        dmu[2 + j] += dens * shifts[(k, j)];
                    }
                }
            }
            mu /= draws as f64;
            dmu /= draws as f64;
            let mu = mu.clamp(1e-300, 1.0 - 1e-16);
            let (loss, dloss_dmu) = if self.binary {
                if self.y[i] == 1.0 {
                    (-mu.ln(), -1.0 / mu)
                } else {
                    (-(1.0 - mu).ln(), 1.0 / (1.0 - mu))
                }
            } else {
                let r = self.y[i] - mu;
                (r * r, -2.0 * r)
            };
            value += loss;
            grad += &dmu * dloss_dmu;
        }
        (value / n as f64, grad / n as f64)
    }

    /// BFGS from zero plus `restarts` seeded random starts; keeps the best
    /// converged solution.
    fn solve(&self, config: &PgcompConfig) -> Result<(DVector<f64>, OptimizerReport)> {
        let p = self.n_params();
        let opts = BfgsOptions {
            max_iter: config.max_iter,
            grad_tol: config.grad_tol,
        };
        let mut rng = substream(config.seed, 1);
        let jitter = Normal::new(0.0, 0.5).expect("valid normal");
        let mut starts = vec![DVector::zeros(p)];
        for _ in 0..config.restarts {
            starts.push(DVector::from_fn(p, |_, _| jitter.sample(&mut rng)));
        }
        let mut best: Option<crate::optim::BfgsResult> = None;
        let mut smallest_gradient = f64::INFINITY;
        let n_starts = starts.len();
        for x0 in starts {
            let r = bfgs(|eta| self.objective(eta), x0, opts);
            smallest_gradient = smallest_gradient.min(r.gradient_norm);
            if r.converged && best.as_ref().is_none_or(|b| r.value < b.value) {
                best = Some(r);
            }
        }
        let best = best.ok_or(Error::OptimizerNotConverged {
            gradient_norm: smallest_gradient,
        })?;
        let report = OptimizerReport {
            iterations: best.iterations,
            gradient_norm: best.gradient_norm,
            objective: best.value,
            starts: n_starts,
        };
        Ok((best.x, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, ColumnRole, Layout, RawTable};
    use std::collections::BTreeMap;

    fn micro() -> Dataset {
        // Y = 2A exactly and W = Z: no confounding channel
        let a = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let z = vec![0.3, -1.0, 2.0, 0.5, 1.5, -0.7, 0.1, 1.1];
        let raw = RawTable::new()
            .with_column("Y", a.iter().map(|v| 2.0 * v).collect())
            .with_column("A", a)
            .with_column("Z", z.clone())
            .with_column("W", z);
        let roles: BTreeMap<String, ColumnRole> = [
            ("Y", ColumnRole::Outcome),
            ("A", ColumnRole::Treatment),
            ("Z", ColumnRole::ProxyZ),
            ("W", ColumnRole::ProxyW),
        ]
        .iter()
        .map(|(c, r)| (c.to_string(), *r))
        .collect();
        validate_dataset(raw, &roles, Layout::Point).unwrap()
    }

    #[test]
    fn deterministic_micro_dataset() {
        let est = fit_p2sls(&micro(), &PointOptions::default()).unwrap();
        assert!((est.slope.unwrap().estimate - 2.0).abs() < 1e-10);
        assert!(est.eta_w[0].estimate.abs() < 1e-10);
    }

    #[test]
    fn log_cdf_tail_is_finite() {
        assert!(log_norm_cdf(-40.0).is_finite());
        assert!((log_norm_cdf(-29.9) - (0.5 * erfc(29.9 / std::f64::consts::SQRT_2)).ln()).abs() < 1e-12);
        assert!((inverse_mills(0.0) - 2.0 * std_normal_pdf(0.0)).abs() < 1e-15);
    }
}
