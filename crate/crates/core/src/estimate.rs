//! Result types shared by every estimator.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    GFormula,
    P2sls,
    ProximalGComputation,
    RecursiveLs,
    LongitudinalGComputation,
    IpwMsm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::GFormula => "g_formula",
            Method::P2sls => "p2sls",
            Method::ProximalGComputation => "proximal_g_computation",
            Method::RecursiveLs => "recursive_ls",
            Method::LongitudinalGComputation => "longitudinal_g_computation",
            Method::IpwMsm => "ipw_msm",
        }
    }
}

/// Estimated counterfactual mean at one treatment value (point) or regime
/// (longitudinal, one entry per period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub treatment: Vec<f64>,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

/// β(high) − β(low) with optional uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// "asymptotic" or "bootstrap".
    pub covariance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageSummary {
    pub column: String,
    /// F statistic of the Z block; None when no Z enters.
    pub f_statistic: Option<f64>,
    pub df1: usize,
    pub df2: usize,
    pub r_squared: f64,
}

/// Non-fatal conditions worth reporting next to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    WeakFirstStage { column: String, f_statistic: f64 },
    RankDeficientStage2 { rank: usize, columns: usize },
    /// Z is empty; W serves as its own instrument.
    NoTreatmentProxies,
    PerPeriodWeakProxy { stage: usize, column: String, f_statistic: f64 },
    ExtremeWeights { max_weight: f64 },
    Separation { model: String },
    LogisticNotConverged { model: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub first_stage: Vec<FirstStageSummary>,
    pub confounding_test: Option<ConfoundingTest>,
    pub warnings: Vec<Warning>,
    pub optimizer: Option<OptimizerReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
    pub starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub n: usize,
    pub beta: Vec<BetaPoint>,
    pub contrast: Option<Contrast>,
    /// Coefficient on treatment in the final regression, when the model has one.
    pub slope: Option<Coefficient>,
    pub eta_w: Vec<Coefficient>,
    /// Every coefficient of the final regression, named.
    pub coefficients: Vec<Coefficient>,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    pub fn beta_at(&self, treatment: &[f64]) -> Option<f64> {
        self.beta
            .iter()
            .find(|b| b.treatment == treatment)
            .map(|b| b.estimate)
    }

    /// Flat parameter vector used by the bootstrap: β at each grid point, then
    /// the contrast (if any), then η_w.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.beta.iter().map(|b| b.estimate).collect();
        if let Some(c) = &self.contrast {
            out.push(c.estimate);
        }
        out.extend(self.eta_w.iter().map(|c| c.estimate));
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let fmt = |t: &[f64]| {
            t.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out: Vec<String> = self
            .beta
            .iter()
            .map(|b| format!("beta({})", fmt(&b.treatment)))
            .collect();
        if let Some(c) = &self.contrast {
            out.push(format!("contrast({} vs {})", fmt(&c.high), fmt(&c.low)));
        }
        out.extend(self.eta_w.iter().map(|c| format!("eta_w[{}]", c.name)));
        out
    }
}

pub(crate) const Z_975: f64 = 1.959_963_984_540_054;

pub(crate) fn normal_ci(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - Z_975 * se, estimate + Z_975 * se)
}
