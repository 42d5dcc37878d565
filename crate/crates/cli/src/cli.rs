//! Command-line flags and their translation into a [`RunConfig`].

use std::collections::BTreeMap;

use clap::{Args, Parser, Subcommand, ValueEnum};
use proximal_core::allocation::{Strength, TiePolicy};
use proximal_core::bridge::{BridgeForm, DiscreteSolver};
use proximal_core::dgp::{LongitudinalDgpSpec, PointDgpSpec};
use proximal_core::inference::MIN_REPLICATES;
use proximal_core::longitudinal::StageMaps;
use proximal_core::point::{CovarianceSource, Integration};
use serde::Deserialize;

use crate::artifacts::{read_json, CliError, CliResult};
use crate::config::*;

#[derive(Debug, Parser)]
#[command(name = "proximal", version, about = "Proximal causal learning estimators")]
pub struct Cli {
    /// Worker threads for bootstrap and replication (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known causal effects.
    Simulate(SimulateArgs),
    /// Split candidate proxies into treatment-side (Z) and outcome-side (W) sets.
    Allocate(AllocateArgs),
    /// Fit one estimator.
    Fit(FitArgs),
    /// Nonparametric bootstrap of a fit.
    Bootstrap(BootstrapArgs),
    /// Monte-Carlo replication study against simulator truth.
    Replicate(ReplicateArgs),
    /// Solve the outcome bridge of a discrete law.
    Bridge(BridgeArgs),
    /// Tabulate a replication study.
    Report(ReportArgs),
    /// Re-execute the run recorded in a manifest.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Design {
    Point,
    PointUnconfounded,
    PointProbit,
    Longitudinal,
    LongitudinalAdditive,
    LongitudinalUnconfounded,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Structural model as JSON (`{"kind": "point", ...}` or `{"kind": "longitudinal", ...}`).
    #[arg(long, conflicts_with = "design")]
    pub spec: Option<String>,
    /// Built-in model, used when no --spec is given.
    #[arg(long, value_enum, default_value = "point")]
    pub design: Design,
    /// Periods for longitudinal designs.
    #[arg(long, default_value_t = 2)]
    pub periods: usize,
}

impl SpecArgs {
    fn resolve(&self) -> CliResult<SimSpec> {
        if let Some(path) = &self.spec {
            return read_json(path);
        }
        Ok(match self.design {
            Design::Point => SimSpec::Point(PointDgpSpec::default()),
            Design::PointUnconfounded => SimSpec::Point(PointDgpSpec::unconfounded()),
            Design::PointProbit => SimSpec::Point(PointDgpSpec::probit()),
            Design::Longitudinal => SimSpec::Longitudinal(LongitudinalDgpSpec::confounded(self.periods)),
            Design::LongitudinalAdditive => SimSpec::Longitudinal(LongitudinalDgpSpec::additive(self.periods)),
            Design::LongitudinalUnconfounded => {
                SimSpec::Longitudinal(LongitudinalDgpSpec::unconfounded(self.periods))
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TieArg {
    PrioritizeW,
    PrioritizeZ,
    Randomize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrengthArg {
    Wald,
    Raw,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub roles: String,
    /// Comma-separated column names without a role.
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<String>,
    #[arg(long, value_enum, default_value = "prioritize-w")]
    pub tie_policy: TieArg,
    #[arg(long, value_enum, default_value = "wald")]
    pub strength: StrengthArg,
    /// Seed for --tie-policy randomize.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BridgeArg {
    Linear,
    Probit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestArg {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// Treatment grid for point estimators; the contrast is last minus first.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Adjustment buckets for ols/gformula, e.g. `x,w`.
    #[arg(long, value_delimiter = ',')]
    pub adjust: Option<Vec<String>>,
    /// Treatment-by-covariate terms in gformula.
    #[arg(long)]
    pub interactions: bool,
    #[arg(long, value_enum)]
    pub bridge: Option<BridgeArg>,
    /// Drop W from the pgcomp bridge.
    #[arg(long)]
    pub eta_w_zero: bool,
    /// Monte-Carlo integration with this many draws instead of the closed form.
    #[arg(long)]
    pub mc_draws: Option<usize>,
    /// Random restarts for the pgcomp optimizer.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Regimes as `0,0;0,1;1,0;1,1`.
    #[arg(long)]
    pub regimes: Option<String>,
    /// `cum`, `interaction`, or a JSON file with stage feature maps.
    #[arg(long)]
    pub maps: Option<String>,
    /// Cap on stabilized IPW weights.
    #[arg(long)]
    pub truncate: Option<f64>,
    #[arg(long, value_enum)]
    pub confounding_test: Option<TestArg>,
    /// Replicates for a bootstrap confounding test.
    #[arg(long, default_value_t = 500)]
    pub test_replicates: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MapsFile {
    PerStage {
        maps: StageMaps,
        #[serde(default)]
        stages: BTreeMap<usize, StageMaps>,
    },
    Single(StageMaps),
}

fn parse_regimes(s: &str) -> CliResult<Vec<Vec<f64>>> {
    s.split(';')
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::config(format!("bad regime value {v:?} in {s:?}")))
                })
                .collect()
        })
        .collect()
}

impl MethodArgs {
    fn resolve(&self, seed: Option<u64>) -> CliResult<MethodOptions> {
        let mut o = MethodOptions::default();
        if let Some(g) = &self.grid {
            o.grid = g.clone();
        }
        o.adjust = self.adjust.clone();
        o.interactions = self.interactions;
        if let Some(b) = self.bridge {
            o.bridge = match b {
                BridgeArg::Linear => BridgeForm::Linear,
                BridgeArg::Probit => BridgeForm::ProbitLinked,
            };
        }
        o.eta_w_zero = self.eta_w_zero;
        if let Some(draws) = self.mc_draws {
            o.integration = Integration::MonteCarlo {
                draws,
                seed: seed.ok_or_else(|| CliError::config("--mc-draws needs --seed"))?,
            };
        }
        if let Some(r) = self.restarts {
            o.restarts = r;
        }
        if let Some(r) = &self.regimes {
            o.regimes = Some(parse_regimes(r)?);
        }
        match self.maps.as_deref() {
            None | Some("cum") => {}
            Some("interaction") => o.maps = Some(StageMaps::full_with_interaction()),
            Some(path) => match read_json::<MapsFile>(path)? {
                MapsFile::PerStage { maps, stages } => {
                    o.maps = Some(maps);
                    o.stage_maps = stages;
                }
                MapsFile::Single(maps) => o.maps = Some(maps),
            },
        }
        o.truncate_at = self.truncate;
        o.confounding_test = match self.confounding_test {
            None => None,
            Some(TestArg::Asymptotic) => Some(CovarianceSource::Asymptotic),
            Some(TestArg::Bootstrap) => Some(CovarianceSource::Bootstrap {
                replicates: self.test_replicates,
                seed: seed.ok_or_else(|| CliError::config("a bootstrap confounding test needs --seed"))?,
            }),
        };
        Ok(o)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ols,
    Gformula,
    P2sls,
    Pgcomp,
    Recursive,
    Lgcomp,
    Ipw,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ols => FitMethod::Ols,
            MethodArg::Gformula => FitMethod::Gformula,
            MethodArg::P2sls => FitMethod::P2sls,
            MethodArg::Pgcomp => FitMethod::Pgcomp,
            MethodArg::Recursive => FitMethod::Recursive,
            MethodArg::Lgcomp => FitMethod::Lgcomp,
            MethodArg::Ipw => FitMethod::Ipw,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// A complete fit configuration as JSON; replaces every other flag except --out.
    #[arg(long, conflicts_with_all = ["method", "data", "roles"])]
    pub config: Option<String>,
    #[arg(long, value_enum, required_unless_present = "config")]
    pub method: Option<MethodArg>,
    #[arg(long, required_unless_present = "config")]
    pub data: Option<String>,
    #[arg(long, required_unless_present = "config")]
    pub roles: Option<String>,
    /// Allocation result from `allocate`.
    #[arg(long)]
    pub allocation: Option<String>,
    #[command(flatten)]
    pub options: MethodArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "fit.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Fit configuration as JSON (same schema as `fit --config`).
    #[arg(long)]
    pub fit_config: String,
    #[arg(long = "B", default_value_t = 500)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Keep going when more than 5% of replicates fail.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub methods: Vec<MethodArg>,
    #[command(flatten)]
    pub options: MethodArgs,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Binary,
    Categorical,
}

#[derive(Debug, Args)]
pub struct BridgeArgs {
    /// Discrete law as JSON (`{"kind": "binary", ...}` or `{"kind": "categorical", ...}`).
    #[arg(long)]
    pub law: String,
    #[arg(long, value_enum, default_value = "categorical")]
    pub solver: SolverArg,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub study: String,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: String,
}

/// What `main` should do after parsing.
pub enum Action {
    Execute(RunConfig),
    Replay(String),
}

pub fn resolve(command: &Command) -> CliResult<Action> {
    let config = match command {
        Command::Simulate(a) => RunConfig::Simulate(SimulateConfig {
            spec: a.spec.resolve()?,
            n: a.n,
            seed: a.seed,
            out: a.out.clone(),
        }),
        Command::Allocate(a) => RunConfig::Allocate(AllocateConfig {
            data: a.data.clone(),
            roles: a.roles.clone(),
            candidates: a.candidates.clone(),
            tie_policy: match a.tie_policy {
                TieArg::PrioritizeW => TiePolicy::PrioritizeW,
                TieArg::PrioritizeZ => TiePolicy::PrioritizeZ,
                TieArg::Randomize => TiePolicy::Randomize {
                    seed: a
                        .seed
                        .ok_or_else(|| CliError::config("--tie-policy randomize needs --seed"))?,
                },
            },
            strength: match a.strength {
                StrengthArg::Wald => Strength::Wald,
                StrengthArg::Raw => Strength::RawCoefficient,
            },
            out: a.out.clone(),
        }),
        Command::Fit(a) => {
            let mut fit = match &a.config {
                Some(path) => read_json::<FitConfig>(path)?,
                None => FitConfig {
                    method: a.method.expect("clap enforces --method").into(),
                    data: a.data.clone().expect("clap enforces --data"),
                    roles: a.roles.clone().expect("clap enforces --roles"),
                    allocation: a.allocation.clone(),
                    options: a.options.resolve(a.seed)?,
                    seed: a.seed,
                    out: None,
                },
            };
            fit.out = Some(a.out.clone());
            RunConfig::Fit(fit)
        }
        Command::Bootstrap(a) => {
            if a.replicates < MIN_REPLICATES {
                return Err(CliError::config(format!("--B must be at least {MIN_REPLICATES}")));
            }
            let mut fit: FitConfig = read_json(&a.fit_config)?;
            fit.out = None;
            RunConfig::Bootstrap(BootstrapRun {
                fit,
                replicates: a.replicates,
                alpha: a.alpha,
                seed: a.seed,
                force: a.force,
                out: a.out.clone(),
            })
        }
        Command::Replicate(a) => {
            if a.reps < MIN_REPLICATES {
                return Err(CliError::config(format!("--reps must be at least {MIN_REPLICATES}")));
            }
            RunConfig::Replicate(ReplicateConfig {
                spec: a.spec.resolve()?,
                n: a.n,
                replications: a.reps,
                seed: a.seed,
                methods: a.methods.iter().map(|m| (*m).into()).collect(),
                options: a.options.resolve(Some(a.seed))?,
                out: a.out.clone(),
            })
        }
        Command::Bridge(a) => RunConfig::Bridge(BridgeRun {
            law: read_json(&a.law)?,
            solver: match a.solver {
                SolverArg::Binary => DiscreteSolver::Binary,
                SolverArg::Categorical => DiscreteSolver::Categorical,
            },
            out: a.out.clone(),
        }),
        Command::Report(a) => RunConfig::Report(ReportConfig {
            study: a.study.clone(),
            out: a.out.clone(),
        }),
        Command::Run(a) => return Ok(Action::Replay(a.manifest.clone())),
    };
    Ok(Action::Execute(config))
}
