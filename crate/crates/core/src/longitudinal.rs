//! Time-varying treatment estimators over J periods: proximal recursive least
//! squares, two-period proximal g-computation, and an IPW marginal structural
//! model baseline.
//!
//! Stage j of the recursion works with the history up to period j. Its
//! treatment features are built from Ā(j) = (A(0), …, A(j)), so the pseudo
//! outcome Ĥ_{j+1}, which has the later treatments fixed at the regime, is
//! regressed on the observed history only. The last stage does not depend on
//! the regime and is fit once; earlier stages are refit per regime.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Panel};
use crate::error::{Error, Result};
use crate::estimate::{
    normal_ci, BetaPoint, Coefficient, Contrast, Diagnostics, EffectEstimate, FirstStageSummary,
    Method, Warning,
};
use crate::linalg::{logistic_irls, LeastSquares, LogisticOptions};
use crate::point::{hcat, ones, WEAK_FIRST_STAGE_F};

/// How a variable's history B(t), t ∈ periods, becomes regressors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Entrywise sum over the periods.
    Cum,
    /// The most recent period only.
    Last,
    /// Every period side by side.
    Concat,
    /// Entrywise products over every nonempty subset of periods: main
    /// effects, then pairs, then triples, … (saturated for binary histories).
    FullWithInteraction,
    /// One entrywise product per term; each term lists absolute periods.
    Custom { terms: Vec<Vec<usize>> },
}

impl FeatureMap {
    /// Feature block for per-period blocks `blocks[t]` (n × d) over `periods`.
    pub fn apply(&self, periods: &[usize], blocks: &[DMatrix<f64>], names: &[String]) -> Result<(DMatrix<f64>, Vec<String>)> {
        let n = blocks.first().map_or(0, |b| b.nrows());
        let d = names.len();
        let terms: Vec<Vec<usize>> = match self {
            _ if periods.is_empty() => Vec::new(),
            FeatureMap::Cum => {
                let mut sum = DMatrix::zeros(n, d);
                for &t in periods {
                    sum += &blocks[t];
                }
                let label = span_label(periods);
                return Ok((sum, names.iter().map(|c| format!("cum({c})[{label}]")).collect()));
            }
            FeatureMap::Last => vec![vec![*periods.last().expect("nonempty")]],
            FeatureMap::Concat => periods.iter().map(|&t| vec![t]).collect(),
            FeatureMap::FullWithInteraction => subsets(periods),
            FeatureMap::Custom { terms } => {
                for term in terms {
                    if term.is_empty() || term.iter().any(|t| !periods.contains(t)) {
                        return Err(Error::InvalidArgument(format!(
                            "custom feature term {term:?} must be a nonempty subset of periods {periods:?}"
                        )));
                    }
                }
                terms.clone()
            }
        };
        let mut out = DMatrix::zeros(n, terms.len() * d);
        let mut labels = Vec::with_capacity(terms.len() * d);
        for (k, term) in terms.iter().enumerate() {
            let mut block = blocks[term[0]].clone();
            for &t in &term[1..] {
                block.component_mul_assign(&blocks[t]);
            }
            out.columns_mut(k * d, d).copy_from(&block);
            for c in names {
                labels.push(
                    term.iter()
                        .map(|t| format!("{c}[{t}]"))
                        .collect::<Vec<_>>()
                        .join("*"),
                );
            }
        }
        Ok((out, labels))
    }
}

fn span_label(periods: &[usize]) -> String {
    match periods {
        [only] => only.to_string(),
        [first, .., last] => format!("{first}-{last}"),
        [] => String::new(),
    }
}

/// Nonempty subsets ordered by size, then lexicographically.
fn subsets(periods: &[usize]) -> Vec<Vec<usize>> {
    let k = periods.len();
    let mut out: Vec<Vec<usize>> = (1u32..(1 << k))
        .map(|mask| (0..k).filter(|b| mask & (1 << b) != 0).map(|b| periods[b]).collect())
        .collect();
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Feature maps for the treatment, proxy and covariate histories of one stage.
/// The covariate map sees X(1..j); X(0) always enters on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMaps {
    pub a: FeatureMap,
    pub w: FeatureMap,
    pub z: FeatureMap,
    pub x: FeatureMap,
}

impl Default for StageMaps {
    fn default() -> Self {
        Self {
            a: FeatureMap::Cum,
            w: FeatureMap::Concat,
            z: FeatureMap::Concat,
            x: FeatureMap::Concat,
        }
    }
}

impl StageMaps {
    pub fn full_with_interaction() -> Self {
        Self {
            a: FeatureMap::FullWithInteraction,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecursiveConfig {
    pub maps: StageMaps,
    /// Per-stage replacements for `maps`, keyed by stage index.
    #[serde(default)]
    pub overrides: BTreeMap<usize, StageMaps>,
    /// Regimes ā to evaluate; every binary regime when absent.
    #[serde(default)]
    pub regimes: Option<Vec<Vec<f64>>>,
}

impl RecursiveConfig {
    pub fn maps_for(&self, stage: usize) -> &StageMaps {
        self.overrides.get(&stage).unwrap_or(&self.maps)
    }
}

/// All 2^J binary regimes, in lexicographic order.
pub fn binary_regimes(periods: usize) -> Vec<Vec<f64>> {
    (0..1usize << periods)
        .map(|m| (0..periods).map(|j| ((m >> (periods - 1 - j)) & 1) as f64).collect())
        .collect()
}

/// Coefficient blocks of one stage. Stage J−1 is shared by all regimes
/// (`regime` is None); earlier stages are fit once per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: usize,
    pub regime: Option<Vec<f64>>,
    /// First-stage projection of c_w on (1, c_z, c_a, c_x, X(0)), one column per c_w entry.
    pub theta: DMatrix<f64>,
    /// Bridge coefficients over (1, c_a, c_w, c_x, X(0)).
    pub eta: DVector<f64>,
    pub eta_names: Vec<String>,
    /// ‖Dᵀ(ĉ_w − c_w)η_w‖∞ / (‖D‖_F ‖(ĉ_w − c_w)η_w‖), D the bridge regressors.
    pub orthogonality_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveFit {
    pub estimate: EffectEstimate,
    pub stages: Vec<StageFit>,
}

impl RecursiveFit {
    pub fn stage(&self, stage: usize, regime: Option<&[f64]>) -> Option<&StageFit> {
        self.stages
            .iter()
            .find(|s| s.stage == stage && s.regime.as_deref() == regime)
    }

    pub fn max_orthogonality_residual(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.orthogonality_residual)
            .fold(0.0, f64::max)
    }
}

/// Regressor blocks for stage j.
struct StageDesign {
    ca: DMatrix<f64>,
    ca_names: Vec<String>,
    cw: DMatrix<f64>,
    cw_names: Vec<String>,
    cz: DMatrix<f64>,
    cx: DMatrix<f64>,
    cx_names: Vec<String>,
    x0: DMatrix<f64>,
}

fn treatment_blocks(a: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
    a.iter()
        .map(|col| DMatrix::from_column_slice(col.len(), 1, col))
        .collect()
}

fn regime_blocks(regime: &[f64], n: usize) -> Vec<DMatrix<f64>> {
    regime.iter().map(|&v| DMatrix::from_element(n, 1, v)).collect()
}

fn stage_design(panel: &Panel, maps: &StageMaps, j: usize) -> Result<StageDesign> {
    let hist: Vec<usize> = (0..=j).collect();
    let later: Vec<usize> = (1..=j).collect();
    let treat = [panel.treatment_name.clone()];
    let (ca, ca_names) = maps.a.apply(&hist, &treatment_blocks(&panel.a), &treat)?;
    let (cw, cw_names) = maps.w.apply(&hist, &panel.w, &panel.w_names)?;
    let (cz, _) = maps.z.apply(&hist, &panel.z, &panel.z_names)?;
    let (cx, cx_names) = maps.x.apply(&later, &panel.x, &panel.x_names)?;
    Ok(StageDesign {
        ca,
        ca_names,
        cw,
        cw_names,
        cz,
        cx,
        cx_names,
        x0: panel.x[0].clone(),
    })
}

fn regime_treatment(panel: &Panel, maps: &StageMaps, j: usize, regime: &[f64]) -> Result<DMatrix<f64>> {
    let n = panel.n_subjects();
    let hist: Vec<usize> = (0..=j).collect();
    Ok(maps
        .a
        .apply(&hist, &regime_blocks(regime, n), std::slice::from_ref(&panel.treatment_name))?
        .0)
}

/// Step 1 of a stage: projection of c_w on (1, c_z, c_a, c_x, X(0)) plus the
/// Z-block F statistic of every projected column.
struct Projection {
    theta: DMatrix<f64>,
    fitted: DMatrix<f64>,
    summaries: Vec<FirstStageSummary>,
    warnings: Vec<Warning>,
}

fn project_proxies(s: &StageDesign, stage: usize) -> Result<Projection> {
    let n = s.cw.nrows();
    let full = hcat(n, &[&ones(n), &s.cz, &s.ca, &s.cx, &s.x0]);
    let ls = LeastSquares::new(&full)?;
    let theta = ls.solve_many(&s.cw)?;
    let fitted = &full * &theta;

    let restricted = hcat(n, &[&ones(n), &s.ca, &s.cx, &s.x0]);
    let ls_r = LeastSquares::new(&restricted)?;
    let resid_r = &s.cw - &restricted * ls_r.solve_many(&s.cw)?;
    let resid = &s.cw - &fitted;
    let q = ls.rank().saturating_sub(ls_r.rank());
    let df2 = n.saturating_sub(ls.rank());
    let mut summaries = Vec::new();
    let mut warnings = Vec::new();
    for (k, name) in s.cw_names.iter().enumerate() {
        let rss_f = resid.column(k).norm_squared();
        let rss_r = resid_r.column(k).norm_squared();
        let f = if q == 0 || df2 == 0 {
            0.0
        } else if rss_f <= 0.0 {
            f64::INFINITY
        } else {
            ((rss_r - rss_f) / q as f64) / (rss_f / df2 as f64)
        };
        let col = s.cw.column(k);
        let mean = col.mean();
        let tss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        if f < WEAK_FIRST_STAGE_F {
            warnings.push(Warning::PerPeriodWeakProxy {
                stage,
                column: name.clone(),
                f_statistic: f,
            });
        }
        summaries.push(FirstStageSummary {
            column: format!("stage {stage}: {name}"),
            f_statistic: Some(f),
            df1: q,
            df2,
            r_squared: if tss > 0.0 { 1.0 - rss_f / tss } else { 1.0 },
        });
    }
    Ok(Projection {
        theta,
        fitted,
        summaries,
        warnings,
    })
}

/// Step 2 of a stage: regression of `response` on (1, c_a, ĉ_w, c_x, X(0)).
fn bridge_regression(s: &StageDesign, p: &Projection, response: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = s.cw.nrows();
    let design = hcat(n, &[&ones(n), &s.ca, &p.fitted, &s.cx, &s.x0]);
    let eta = LeastSquares::new(&design)?.solve(response)?;
    let off = 1 + s.ca.ncols();
    let eta_w = eta.rows(off, s.cw.ncols());
    let v = (&p.fitted - &s.cw) * eta_w;
    let scale = design.norm() * v.norm();
    let ortho = if scale > 0.0 {
        (design.tr_mul(&v)).amax() / scale
    } else {
        0.0
    };
    Ok((eta, ortho))
}

/// Ĥ_j(ā) = (1, c_a(ā), c_w, c_x, X(0))·η evaluated at the observed proxies.
fn evaluate_h(s: &StageDesign, ca_regime: &DMatrix<f64>, eta: &DVector<f64>) -> DVector<f64> {
    let n = s.cw.nrows();
    hcat(n, &[&ones(n), ca_regime, &s.cw, &s.cx, &s.x0]) * eta
}

fn eta_names(s: &StageDesign, panel: &Panel) -> Vec<String> {
    let mut names = vec!["(intercept)".to_string()];
    names.extend(s.ca_names.iter().cloned());
    names.extend(s.cw_names.iter().cloned());
    names.extend(s.cx_names.iter().cloned());
    names.extend(panel.x_names.iter().map(|c| format!("{c}[0]")));
    names
}

fn check_panel(panel: &Panel) -> Result<()> {
    if panel.w_names.is_empty() || panel.z_names.is_empty() {
        return Err(Error::InvalidArgument(
            "recursive least squares needs proxy_z and proxy_w columns at every period".into(),
        ));
    }
    Ok(())
}

fn resolve_regimes(config: &RecursiveConfig, periods: usize) -> Result<Vec<Vec<f64>>> {
    let regimes = config.regimes.clone().unwrap_or_else(|| binary_regimes(periods));
    if regimes.is_empty() {
        return Err(Error::InvalidArgument("no regimes to evaluate".into()));
    }
    for r in &regimes {
        if r.len() != periods || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regime {r:?} must have {periods} finite entries"
            )));
        }
    }
    Ok(regimes)
}

/// Mean of the regime-evaluated stage-0 regressors times η̂₀, that is
/// (1, c_a(ā), Eₙ W(0), Eₙ X(0))·η̂₀.
fn beta_from_stage0(s: &StageDesign, ca_regime: &DMatrix<f64>, eta: &DVector<f64>) -> f64 {
    let n = s.cw.nrows();
    let d = hcat(n, &[&ones(n), ca_regime, &s.cw, &s.cx, &s.x0]);
    let means = DVector::from_iterator(d.ncols(), d.column_iter().map(|c| c.sum() / n as f64));
    means.dot(eta)
}

fn regime_contrast(beta: &[BetaPoint]) -> Option<Contrast> {
    let (lo, hi) = (beta.first()?, beta.last()?);
    (beta.len() >= 2).then(|| Contrast {
        low: lo.treatment.clone(),
        high: hi.treatment.clone(),
        estimate: hi.estimate - lo.estimate,
        se: None,
        ci: None,
    })
}

fn assemble(
    panel: &Panel,
    last: &StageFit,
    beta: Vec<BetaPoint>,
    stages: Vec<StageFit>,
    diagnostics: Diagnostics,
    last_design: &StageDesign,
) -> RecursiveFit {
    let coefficients: Vec<Coefficient> = last
        .eta_names
        .iter()
        .zip(last.eta.iter())
        .map(|(name, v)| Coefficient {
            name: name.clone(),
            estimate: *v,
            se: None,
        })
        .collect();
    let off = 1 + last_design.ca.ncols();
    let eta_w = coefficients[off..off + last_design.cw.ncols()].to_vec();
    RecursiveFit {
        estimate: EffectEstimate {
            method: Method::RecursiveLs,
            n: panel.n_subjects(),
            contrast: regime_contrast(&beta),
            beta,
            slope: None,
            eta_w,
            coefficients,
            diagnostics,
        },
        stages,
    }
}

/// Proximal recursive least squares for J ≥ 2 periods.
pub fn fit_recursive_ls(data: &Dataset, config: &RecursiveConfig) -> Result<RecursiveFit> {
    let panel = data.panel()?;
    check_panel(&panel)?;
    let periods = panel.periods;
    let regimes = resolve_regimes(config, periods)?;
    let y = DVector::from_column_slice(&panel.y);

    let designs: Vec<StageDesign> = (0..periods)
        .map(|j| stage_design(&panel, config.maps_for(j), j))
        .collect::<Result<_>>()?;
    let projections: Vec<Projection> = designs
        .iter()
        .enumerate()
        .map(|(j, s)| project_proxies(s, j))
        .collect::<Result<_>>()?;

    let mut diagnostics = Diagnostics::default();
    for p in projections.iter().rev() {
        diagnostics.first_stage.extend(p.summaries.iter().cloned());
        diagnostics.warnings.extend(p.warnings.iter().cloned());
    }

    let top = periods - 1;
    let (eta_top, ortho_top) = bridge_regression(&designs[top], &projections[top], &y)?;
    let last = StageFit {
        stage: top,
        regime: None,
        theta: projections[top].theta.clone(),
        eta: eta_top,
        eta_names: eta_names(&designs[top], &panel),
        orthogonality_residual: ortho_top,
    };

    let mut stages = vec![last.clone()];
    let mut beta = Vec::with_capacity(regimes.len());
    for regime in &regimes {
        let ca_top = regime_treatment(&panel, config.maps_for(top), top, regime)?;
        let mut h = evaluate_h(&designs[top], &ca_top, &last.eta);
        let mut estimate = f64::NAN;
        for j in (0..top).rev() {
            let (eta, ortho) = bridge_regression(&designs[j], &projections[j], &h)?;
            let ca = regime_treatment(&panel, config.maps_for(j), j, regime)?;
            if j == 0 {
                estimate = beta_from_stage0(&designs[0], &ca, &eta);
            } else {
                h = evaluate_h(&designs[j], &ca, &eta);
            }
            stages.push(StageFit {
                stage: j,
                regime: Some(regime.clone()),
                theta: projections[j].theta.clone(),
                eta,
                eta_names: eta_names(&designs[j], &panel),
                orthogonality_residual: ortho,
            });
        }
        beta.push(BetaPoint {
            treatment: regime.clone(),
            estimate,
            se: None,
        });
    }
    Ok(assemble(&panel, &last, beta, stages, diagnostics, &designs[top]))
}

/// The two-period algorithm written out step by step. Produces the same
/// numbers as [`fit_recursive_ls`] at J = 2.
pub fn fit_recursive_ls_two_period(data: &Dataset, config: &RecursiveConfig) -> Result<RecursiveFit> {
    let panel = data.panel()?;
    check_panel(&panel)?;
    if panel.periods != 2 {
        return Err(Error::InvalidArgument(format!(
            "the two-period algorithm needs J = 2, got {}",
            panel.periods
        )));
    }
    let regimes = resolve_regimes(config, 2)?;
    let y = DVector::from_column_slice(&panel.y);

    // Step 1: project c_w(W̄) on (1, c_z(Z̄), c_a(Ā), c_x(X̄), X(0))
    let s1 = stage_design(&panel, config.maps_for(1), 1)?;
    let p1 = project_proxies(&s1, 1)?;
    // Step 3, first half: project W(0) on (1, Z(0), c_a(A(0)), X(0))
    let s0 = stage_design(&panel, config.maps_for(0), 0)?;
    let p0 = project_proxies(&s0, 0)?;

    let mut diagnostics = Diagnostics::default();
    for p in [&p1, &p0] {
        diagnostics.first_stage.extend(p.summaries.iter().cloned());
        diagnostics.warnings.extend(p.warnings.iter().cloned());
    }

    // Step 2: Y on (1, c_a(Ā), ĉ_w, c_x(X̄), X(0))
    let (eta1, ortho1) = bridge_regression(&s1, &p1, &y)?;
    let last = StageFit {
        stage: 1,
        regime: None,
        theta: p1.theta.clone(),
        eta: eta1,
        eta_names: eta_names(&s1, &panel),
        orthogonality_residual: ortho1,
    };
    let mut stages = vec![last.clone()];
    let mut beta = Vec::new();
    for regime in &regimes {
        // Ĥ₁(ā) at the observed W̄
        let ca1 = regime_treatment(&panel, config.maps_for(1), 1, regime)?;
        let h1 = evaluate_h(&s1, &ca1, &last.eta);
        // Step 3, second half: Ĥ₁ on (1, c_a(A(0)), Ŵ(0), X(0))
        let (eta0, ortho0) = bridge_regression(&s0, &p0, &h1)?;
        // Step 4
        let ca0 = regime_treatment(&panel, config.maps_for(0), 0, regime)?;
        beta.push(BetaPoint {
            treatment: regime.clone(),
            estimate: beta_from_stage0(&s0, &ca0, &eta0),
            se: None,
        });
        stages.push(StageFit {
            stage: 0,
            regime: Some(regime.clone()),
            theta: p0.theta.clone(),
            eta: eta0,
            eta_names: eta_names(&s0, &panel),
            orthogonality_residual: ortho0,
        });
    }
    Ok(assemble(&panel, &last, beta, stages, diagnostics, &s1))
}

/// Two-period parametric proximal g-computation with linear bridges and
/// linear-Gaussian W laws.
///
/// The W laws are fit by maximum likelihood: per-entry OLS for the means and
/// the residual covariance. Each bridge is then fit by least squares of the
/// response on μ̂(η), the bridge integrated against the fitted W law, which is
/// the bridge evaluated at the fitted W mean when h is linear in W.
pub fn fit_longitudinal_g_computation(data: &Dataset, config: &RecursiveConfig) -> Result<LongitudinalGcompFit> {
    let panel = data.panel()?;
    check_panel(&panel)?;
    if panel.periods != 2 {
        return Err(Error::Unsupported(format!(
            "longitudinal g-computation is implemented for J = 2 only, got J = {}",
            panel.periods
        )));
    }
    let regimes = resolve_regimes(config, 2)?;
    let n = panel.n_subjects();
    let y = DVector::from_column_slice(&panel.y);

    let mut laws = Vec::with_capacity(2);
    let mut bridges: Vec<(usize, Option<Vec<f64>>, DVector<f64>)> = Vec::new();
    let s1 = stage_design(&panel, config.maps_for(1), 1)?;
    let s0 = stage_design(&panel, config.maps_for(0), 0)?;
    let law1 = GaussianLaw::fit(&s1.cw, &hcat(n, &[&ones(n), &s1.cz, &s1.ca, &s1.cx, &s1.x0]))?;
    let law0 = GaussianLaw::fit(&s0.cw, &hcat(n, &[&ones(n), &s0.cz, &s0.ca, &s0.x0]))?;

    // μ̂₁(η₁) = (1, c_a, E(c_w | ·; θ̂), c_x, X(0))·η₁
    let mu1 = hcat(n, &[&ones(n), &s1.ca, &law1.mean, &s1.cx, &s1.x0]);
    let eta1 = crate::linalg::ols(&mu1, &y, None)?.coefficients;
    bridges.push((1, None, eta1.clone()));

    let mu0 = hcat(n, &[&ones(n), &s0.ca, &law0.mean, &s0.x0]);
    let mut beta = Vec::new();
    for regime in &regimes {
        let ca1 = regime_treatment(&panel, config.maps_for(1), 1, regime)?;
        let h1 = hcat(n, &[&ones(n), &ca1, &s1.cw, &s1.cx, &s1.x0]) * &eta1;
        let eta0 = crate::linalg::ols(&mu0, &h1, None)?.coefficients;
        // β̂(ā) = Eₙ h₀(W(0), ā, X(0); η̂₀)
        let ca0 = regime_treatment(&panel, config.maps_for(0), 0, regime)?;
        let h0 = hcat(n, &[&ones(n), &ca0, &s0.cw, &s0.x0]) * &eta0;
        beta.push(BetaPoint {
            treatment: regime.clone(),
            estimate: h0.mean(),
            se: None,
        });
        bridges.push((0, Some(regime.clone()), eta0));
    }
    laws.push(law1);
    laws.push(law0);

    let names1 = eta_names(&s1, &panel);
    let coefficients: Vec<Coefficient> = names1
        .iter()
        .zip(eta1.iter())
        .map(|(name, v)| Coefficient {
            name: name.clone(),
            estimate: *v,
            se: None,
        })
        .collect();
    let off = 1 + s1.ca.ncols();
    let eta_w = coefficients[off..off + s1.cw.ncols()].to_vec();
    Ok(LongitudinalGcompFit {
        estimate: EffectEstimate {
            method: Method::LongitudinalGComputation,
            n,
            contrast: regime_contrast(&beta),
            beta,
            slope: None,
            eta_w,
            coefficients,
            diagnostics: Diagnostics::default(),
        },
        w_laws: laws,
        bridges: bridges
            .into_iter()
            .map(|(stage, regime, eta)| BridgeCoefficients { stage, regime, eta })
            .collect(),
    })
}

/// Fitted linear-Gaussian law for a block of W features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub coefficients: DMatrix<f64>,
    /// Maximum-likelihood residual covariance (divisor n).
    pub covariance: DMatrix<f64>,
    #[serde(skip)]
    pub mean: DMatrix<f64>,
}

impl GaussianLaw {
    fn fit(targets: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<Self> {
        let ls = LeastSquares::new(design)?;
        let coefficients = ls.solve_many(targets)?;
        let mean = design * &coefficients;
        let resid = targets - &mean;
        let covariance = resid.tr_mul(&resid) / targets.nrows() as f64;
        Ok(Self {
            coefficients,
            covariance,
            mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeCoefficients {
    pub stage: usize,
    pub regime: Option<Vec<f64>>,
    pub eta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalGcompFit {
    pub estimate: EffectEstimate,
    /// Period-1 law of c_w(W̄), then the period-0 law of W(0).
    pub w_laws: Vec<GaussianLaw>,
    pub bridges: Vec<BridgeCoefficients>,
}

/// Maximum stabilized weight above which a warning is attached.
pub const EXTREME_WEIGHT: f64 = 50.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IpwConfig {
    /// Cap on stabilized weights; None leaves them untruncated.
    pub truncate_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwFit {
    pub estimate: EffectEstimate,
    pub weights: Vec<f64>,
}

/// Marginal structural model E(Y_ā) = β₀ + β_a·cum(ā) by stabilized
/// inverse-probability-weighted least squares. Each period's propensity is a
/// logistic regression of A(j) on (1, Ā(j−1), X̄(j), Z̄(j), W̄(j)); the
/// stabilizing numerator uses (1, Ā(j−1)).
pub fn fit_ipw_msm(data: &Dataset, config: &IpwConfig, regimes: Option<&[Vec<f64>]>) -> Result<IpwFit> {
    let panel = data.panel()?;
    let periods = panel.periods;
    let n = panel.n_subjects();
    for (j, a) in panel.a.iter().enumerate() {
        if a.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::NonBinary(format!("{}[{j}]", panel.treatment_name)));
        }
    }
    let a_blocks = treatment_blocks(&panel.a);
    let mut weights = vec![1.0; n];
    let mut warnings = Vec::new();
    for j in 0..periods {
        let past: Vec<&DMatrix<f64>> = a_blocks[..j].iter().collect();
        let mut num_parts = vec![ones(n)];
        num_parts.extend(past.iter().map(|b| (*b).clone()));
        let mut den_parts = num_parts.clone();
        for t in 0..=j {
            den_parts.push(panel.x[t].clone());
            den_parts.push(panel.z[t].clone());
            den_parts.push(panel.w[t].clone());
        }
        let num = hcat(n, &num_parts.iter().collect::<Vec<_>>());
        let den = hcat(n, &den_parts.iter().collect::<Vec<_>>());
        let target = DVector::from_column_slice(&panel.a[j]);
        let mut probs = Vec::with_capacity(2);
        for (label, design) in [("numerator", &num), ("propensity", &den)] {
            let fit = logistic_irls(design, &target, LogisticOptions::default())?;
            let model = format!("{label} period {j}");
            if fit.separation {
                warnings.push(Warning::Separation { model: model.clone() });
            }
            if !fit.converged {
                warnings.push(Warning::LogisticNotConverged { model });
            }
            probs.push(fit.predict(design));
        }
        for i in 0..n {
            let pick = |p: f64| if target[i] == 1.0 { p } else { 1.0 - p };
            weights[i] *= pick(probs[0][i]) / pick(probs[1][i]);
        }
    }
    if let Some(cap) = config.truncate_at {
        weights.iter_mut().for_each(|w| *w = w.min(cap));
    }
    let max_weight = weights.iter().copied().fold(0.0, f64::max);
    if max_weight > EXTREME_WEIGHT {
        warnings.push(Warning::ExtremeWeights { max_weight });
    }

    let cum: Vec<f64> = (0..n).map(|i| (0..periods).map(|j| panel.a[j][i]).sum()).collect();
    let design = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { cum[i] });
    let y = DVector::from_column_slice(&panel.y);
    let w = DVector::from_column_slice(&weights);
    let fit = crate::linalg::ols(&design, &y, Some(&w))?;
    let cov = sandwich(&design, &fit.residuals, &w)?;
    let se = |k: usize| cov[(k, k)].max(0.0).sqrt();

    let regimes = regimes.map_or_else(|| binary_regimes(periods), <[Vec<f64>]>::to_vec);
    let beta: Vec<BetaPoint> = regimes
        .iter()
        .map(|r| {
            let row = DVector::from_vec(vec![1.0, r.iter().sum()]);
            BetaPoint {
                treatment: r.clone(),
                estimate: row.dot(&fit.coefficients),
                se: Some((row.transpose() * &cov * &row)[(0, 0)].max(0.0).sqrt()),
            }
        })
        .collect();
    let contrast = regime_contrast(&beta).map(|mut c| {
        let d: f64 = c.high.iter().sum::<f64>() - c.low.iter().sum::<f64>();
        let s = d.abs() * se(1);
        c.se = Some(s);
        c.ci = Some(normal_ci(c.estimate, s));
        c
    });
    let names = ["(intercept)".to_string(), format!("cum({})", panel.treatment_name)];
    let coefficients: Vec<Coefficient> = (0..2)
        .map(|k| Coefficient {
            name: names[k].clone(),
            estimate: fit.coefficients[k],
            se: Some(se(k)),
        })
        .collect();
    Ok(IpwFit {
        estimate: EffectEstimate {
            method: Method::IpwMsm,
            n,
            beta,
            contrast,
            slope: Some(coefficients[1].clone()),
            eta_w: Vec::new(),
            coefficients,
            diagnostics: Diagnostics {
                warnings,
                ..Diagnostics::default()
            },
        },
        weights,
    })
}

/// Weighted-least-squares sandwich covariance (DᵀWD)⁻¹ Dᵀ W² diag(r²) D (DᵀWD)⁻¹.
fn sandwich(design: &DMatrix<f64>, residuals: &DVector<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut weighted = design.clone();
    let mut meat_rows = design.clone();
    for i in 0..design.nrows() {
        weighted.row_mut(i).scale_mut(w[i].sqrt());
        meat_rows.row_mut(i).scale_mut(w[i] * residuals[i]);
    }
    let bread = LeastSquares::new(&weighted)?.gram_pinv();
    let meat = meat_rows.tr_mul(&meat_rows);
    Ok(&bread * meat * &bread)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_with_interaction_at_two_periods() {
        let blocks = vec![
            DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 1.0]),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]),
        ];
        let (m, names) = FeatureMap::FullWithInteraction
            .apply(&[0, 1], &blocks, &["A".to_string()])
            .unwrap();
        assert_eq!(names, vec!["A[0]", "A[1]", "A[0]*A[1]"]);
        assert_eq!(m.column(2).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cum_sums_entrywise() {
        let blocks = vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 2, &[10.0, 20.0, 30.0, 40.0]),
        ];
        let names = ["W1".to_string(), "W2".to_string()];
        let (m, _) = FeatureMap::Cum.apply(&[0, 1], &blocks, &names).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[11.0, 22.0, 33.0, 44.0]));
        let (empty, _) = FeatureMap::Cum.apply(&[], &blocks, &names).unwrap();
        assert_eq!(empty.ncols(), 0);
    }

    #[test]
    fn custom_terms_must_lie_in_history() {
        let blocks = vec![DMatrix::zeros(2, 1); 2];
        let map = FeatureMap::Custom { terms: vec![vec![1]] };
        assert!(map.apply(&[0], &blocks, &["A".to_string()]).is_err());
    }

    #[test]
    fn regimes_enumerate_lexicographically() {
        assert_eq!(
            binary_regimes(2),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
    }
}
