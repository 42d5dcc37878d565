//! Structural simulators with a latent confounder U and exact causal effects.
//!
//! U never leaves this module except through the `*_with_latent` helpers,
//! which exist so tests can build include-U oracle regressions.

mod discrete;
mod longitudinal;
mod point;

use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use discrete::{
    build_categorical_law, build_discrete_law, random_binary_params, BinaryLawParams,
    CategoricalLawParams, DiscreteTruth,
};
pub use longitudinal::{
    generate_longitudinal, generate_longitudinal_with_latent, interventional_mean,
    trajectories_to_dataset, LongitudinalDgpSpec, LongitudinalDraw, LongitudinalSample, PeriodBlock,
    Trajectory,
};
pub use point::{
    generate_point, generate_point_with_latent, PointDgpSpec, PointDraw, PointSample,
    PointRealization,
};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentType {
    Continuous,
    /// Probit threshold on the linear index.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeType {
    Continuous,
    /// Y = 1{index + σ_y ε > 0}.
    BinaryProbit,
}

/// Distribution of the W measurement noise, always scaled to the declared sd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    StudentT { df: f64 },
}

impl NoiseLaw {
    pub(crate) fn validate(&self) -> crate::Result<()> {
        match self {
            NoiseLaw::Gaussian => Ok(()),
            NoiseLaw::StudentT { df } if *df > 2.0 => Ok(()),
            NoiseLaw::StudentT { df } => Err(crate::Error::InvalidSpec(format!(
                "Student-t noise needs df > 2 for a finite variance, got {df}"
            ))),
        }
    }

    /// A unit-variance draw.
    pub(crate) fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            NoiseLaw::Gaussian => crate::rng::normal(rng),
            NoiseLaw::StudentT { df } => {
                let t: f64 = StudentT::new(*df).expect("validated df").sample(rng);
                t * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

/// Exact counterfactual means implied by a simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// β(a) = intercept + slope·a.
    Linear { intercept: f64, slope: f64 },
    /// β(a) = Φ((intercept + slope·a) / scale).
    Probit { intercept: f64, slope: f64, scale: f64 },
    /// β(ā) = intercept + Σ_j effects[j]·a_j.
    Regime { intercept: f64, effects: Vec<f64> },
}

impl GroundTruth {
    /// Counterfactual mean at treatment value(s) `a`: one entry for point
    /// truths, one per period for regime truths.
    pub fn beta(&self, a: &[f64]) -> f64 {
        match self {
            GroundTruth::Linear { intercept, slope } => intercept + slope * a[0],
            GroundTruth::Probit {
                intercept,
                slope,
                scale,
            } => std_normal_cdf((intercept + slope * a[0]) / scale),
            GroundTruth::Regime { intercept, effects } => {
                assert_eq!(a.len(), effects.len(), "regime length must equal J");
                intercept + effects.iter().zip(a).map(|(e, x)| e * x).sum::<f64>()
            }
        }
    }
}

pub(crate) fn std_normal_cdf(t: f64) -> f64 {
    Normal::standard().cdf(t)
}

pub(crate) fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn numbered(prefix: &str, k: usize) -> String {
    format!("{prefix}{}", k + 1)
}
