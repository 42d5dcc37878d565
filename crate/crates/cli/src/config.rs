//! Resolved run configurations. Everything a command needs is recorded here so
//! a manifest can replay it.

use std::collections::BTreeMap;

use proximal_core::allocation::{Strength, TiePolicy};
use proximal_core::bridge::{BridgeForm, DiscreteSolver};
use proximal_core::dgp::{BinaryLawParams, CategoricalLawParams, LongitudinalDgpSpec, PointDgpSpec};
use proximal_core::longitudinal::StageMaps;
use proximal_core::point::{CovarianceSource, Integration};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Allocate(AllocateConfig),
    Fit(FitConfig),
    Bootstrap(BootstrapRun),
    Replicate(ReplicateConfig),
    Bridge(BridgeRun),
    Report(ReportConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Allocate(_) => "allocate",
            RunConfig::Fit(_) => "fit",
            RunConfig::Bootstrap(_) => "bootstrap",
            RunConfig::Replicate(_) => "replicate",
            RunConfig::Bridge(_) => "bridge",
            RunConfig::Report(_) => "report",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Simulate(c) => Some(c.seed),
            RunConfig::Allocate(c) => match c.tie_policy {
                TiePolicy::Randomize { seed } => Some(seed),
                _ => None,
            },
            RunConfig::Fit(c) => c.seed,
            RunConfig::Bootstrap(c) => Some(c.seed),
            RunConfig::Replicate(c) => Some(c.seed),
            RunConfig::Bridge(_) | RunConfig::Report(_) => None,
        }
    }

    /// The primary artifact; the manifest sits next to it.
    pub fn output(&self) -> &str {
        match self {
            RunConfig::Simulate(c) => &c.out,
            RunConfig::Allocate(c) => &c.out,
            RunConfig::Fit(c) => c.out.as_deref().unwrap_or("fit.json"),
            RunConfig::Bootstrap(c) => &c.out,
            RunConfig::Replicate(c) => &c.out,
            RunConfig::Bridge(c) => &c.out,
            RunConfig::Report(c) => &c.out,
        }
    }
}

/// A structural model for `simulate` and `replicate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimSpec {
    Point(PointDgpSpec),
    Longitudinal(LongitudinalDgpSpec),
}

impl SimSpec {
    pub fn with_seed(&self, seed: u64) -> SimSpec {
        match self {
            SimSpec::Point(s) => SimSpec::Point(PointDgpSpec { seed, ..s.clone() }),
            SimSpec::Longitudinal(s) => SimSpec::Longitudinal(LongitudinalDgpSpec { seed, ..s.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub spec: SimSpec,
    pub n: usize,
    pub seed: u64,
    /// CSV path; `<stem>.truth.json` and `<stem>.roles.json` go next to it.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocateConfig {
    pub data: String,
    pub roles: String,
    pub candidates: Vec<String>,
    pub tie_policy: TiePolicy,
    #[serde(default)]
    pub strength: Strength,
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ols,
    Gformula,
    P2sls,
    Pgcomp,
    Recursive,
    Lgcomp,
    Ipw,
}

impl FitMethod {
    pub fn is_longitudinal(self) -> bool {
        matches!(self, FitMethod::Recursive | FitMethod::Lgcomp | FitMethod::Ipw)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Ols => "ols",
            FitMethod::Gformula => "gformula",
            FitMethod::P2sls => "p2sls",
            FitMethod::Pgcomp => "pgcomp",
            FitMethod::Recursive => "recursive",
            FitMethod::Lgcomp => "lgcomp",
            FitMethod::Ipw => "ipw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ols" => FitMethod::Ols,
            "gformula" => FitMethod::Gformula,
            "p2sls" => FitMethod::P2sls,
            "pgcomp" => FitMethod::Pgcomp,
            "recursive" => FitMethod::Recursive,
            "lgcomp" => FitMethod::Lgcomp,
            "ipw" => FitMethod::Ipw,
            _ => return None,
        })
    }
}

/// Estimator options shared by `fit`, `bootstrap` and `replicate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOptions {
    /// Treatment grid for point estimators.
    pub grid: Vec<f64>,
    /// Adjustment set for `ols` and `gformula`: any of "x", "w", "z".
    /// Defaults to X for `ols` and all three for `gformula`.
    pub adjust: Option<Vec<String>>,
    /// Treatment-by-covariate interactions in `gformula`.
    pub interactions: bool,
    pub bridge: BridgeForm,
    pub eta_w_zero: bool,
    pub integration: Integration,
    pub restarts: usize,
    /// Regimes for longitudinal estimators; all binary regimes when absent.
    pub regimes: Option<Vec<Vec<f64>>>,
    pub maps: Option<StageMaps>,
    pub stage_maps: BTreeMap<usize, StageMaps>,
    pub truncate_at: Option<f64>,
    /// Adds a confounding test on η_w to point proximal fits.
    pub confounding_test: Option<CovarianceSource>,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            grid: vec![0.0, 1.0],
            adjust: None,
            interactions: false,
            bridge: BridgeForm::Linear,
            eta_w_zero: false,
            integration: Integration::ClosedForm,
            restarts: 3,
            regimes: None,
            maps: None,
            stage_maps: BTreeMap::new(),
            truncate_at: None,
            confounding_test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    pub data: String,
    pub roles: String,
    /// Allocation result whose Z and W sets become proxy roles.
    #[serde(default)]
    pub allocation: Option<String>,
    #[serde(default)]
    pub options: MethodOptions,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub fit: FitConfig,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub force: bool,
    /// JSON result; a CSV summary table goes next to it.
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub spec: SimSpec,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<FitMethod>,
    #[serde(default)]
    pub options: MethodOptions,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSpec {
    Binary(BinaryLawParams),
    Categorical(CategoricalLawParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRun {
    pub law: LawSpec,
    pub solver: DiscreteSolver,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub study: String,
    /// CSV table of the replication summaries.
    pub out: String,
}
