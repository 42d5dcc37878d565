//! Proximal causal learning.
//!
//! Estimators of counterfactual means β(a) = E(Y_a) when treatment–outcome
//! confounding is only partially observed through two kinds of proxies:
//! treatment-inducing proxies Z and outcome-inducing proxies W.
//!
//! * [`bridge`]: exact outcome-bridge solvers for discrete laws and the probit
//!   closed form.
//! * [`point`]: OLS and g-formula baselines, proximal two-stage least squares,
//!   parametric proximal g-computation.
//! * [`longitudinal`]: recursive least squares over J periods, two-period
//!   proximal g-computation, IPW marginal structural model.
//! * [`allocation`]: greedy assignment of candidate proxies to Z and W.
//! * [`inference`]: bootstrap and replication studies.
//! * [`dgp`]: simulators with a latent confounder and exact ground truth.

pub mod allocation;
pub mod bridge;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod linalg;
pub mod longitudinal;
mod optim;
pub mod point;
pub mod rng;

pub use data::{
    completeness_rank_check, read_csv, validate_dataset, write_csv, ColumnRole, CompletenessCheck,
    Dataset, DiscreteJointLaw, DiscreteVariable, Layout, Panel, PointView, RawTable, RoleConfig,
};
pub use error::{Error, Result, Violation};
pub use linalg::{logistic_irls, ols, LeastSquares, LinearFit, LogisticFit, LogisticOptions};
