use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{dot, numbered, GroundTruth, NoiseLaw, OutcomeType, TreatmentType};
use crate::data::{validate_dataset, ColumnRole, Dataset, Layout, RawTable};
use crate::error::{Error, Result};
use crate::rng::{normal, seeded, Rng};

/// Point-treatment structural model. X ~ N(0, I) and, per unit,
///
/// ```text
/// U = u_xᵀX + u_sd·ε
/// Z_k = z_u[k]·s(U) + z_x[k]ᵀX + z_sd·ε,       s(u) = u + z_nonlinearity·u³
/// W_k = w_intercept[k] + w_u[k]·U + w_x[k]ᵀX + w_sd·ν
/// A   = a_intercept + a_u·U + a_zᵀZ + a_xᵀX + a_sd·ε   (thresholded at 0 when binary)
/// Y   = beta0 + beta_a·A + beta_u·U + beta_xᵀX + y_sd·ε (thresholded when binary)
/// ```
///
/// W takes no input from A or Z and Y none from Z, so the outcome bridge
/// h(w, a, x) is linear in w whenever `w_u` is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDgpSpec {
    pub d_x: usize,
    pub d_z: usize,
    pub d_w: usize,
    pub treatment: TreatmentType,
    pub outcome: OutcomeType,
    pub u_x: Vec<f64>,
    pub u_sd: f64,
    pub z_u: Vec<f64>,
    pub z_x: Vec<Vec<f64>>,
    pub z_sd: f64,
    #[serde(default)]
    pub z_nonlinearity: f64,
    pub w_intercept: Vec<f64>,
    pub w_u: Vec<f64>,
    pub w_x: Vec<Vec<f64>>,
    pub w_sd: f64,
    pub w_noise: NoiseLaw,
    pub a_intercept: f64,
    pub a_u: f64,
    pub a_z: Vec<f64>,
    pub a_x: Vec<f64>,
    pub a_sd: f64,
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_u: f64,
    pub beta_x: Vec<f64>,
    pub y_sd: f64,
    pub seed: u64,
}

impl Default for PointDgpSpec {
    /// The shipped confounded default (β_a = −1.8, β_u = 2, η_u = 1, U→A loading 1).
    fn default() -> Self {
        Self {
            d_x: 1,
            d_z: 1,
            d_w: 1,
            treatment: TreatmentType::Binary,
            outcome: OutcomeType::Continuous,
            u_x: vec![0.5],
            u_sd: 1.0,
            z_u: vec![1.0],
            z_x: vec![vec![0.3]],
            z_sd: 1.0,
            z_nonlinearity: 0.0,
            w_intercept: vec![0.0],
            w_u: vec![1.0],
            w_x: vec![vec![0.3]],
            w_sd: 1.0,
            w_noise: NoiseLaw::Gaussian,
            a_intercept: 0.0,
            a_u: 1.0,
            a_z: vec![0.5],
            a_x: vec![0.3],
            a_sd: 1.0,
            beta0: 1.0,
            beta_a: -1.8,
            beta_u: 2.0,
            beta_x: vec![0.5],
            y_sd: 1.0,
            seed: 1,
        }
    }
}

impl PointDgpSpec {
    /// Same structure with U removed from the outcome equation.
    pub fn unconfounded() -> Self {
        Self {
            beta_u: 0.0,
            ..Self::default()
        }
    }

    /// Binary outcome through a probit link, continuous treatment and linear
    /// Gaussian proxies, so W given (Z, A, X) is exactly Gaussian and the
    /// probit-linked bridge exists (|β_u|·w_sd < |w_u|·y_sd).
    pub fn probit() -> Self {
        Self {
            treatment: TreatmentType::Continuous,
            outcome: OutcomeType::BinaryProbit,
            z_u: vec![1.0],
            w_sd: 0.6,
            a_u: 0.8,
            a_z: vec![0.4],
            beta0: 0.2,
            beta_a: -0.6,
            beta_u: 0.8,
            beta_x: vec![0.3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let rows = |name: &str, v: &[Vec<f64>], r: usize| -> Result<()> {
            if v.len() != r || v.iter().any(|row| row.len() != self.d_x) {
                return Err(Error::InvalidSpec(format!("{name} must be {r}x{}", self.d_x)));
            }
            Ok(())
        };
        for (name, len, want) in [
            ("u_x", self.u_x.len(), self.d_x),
            ("a_x", self.a_x.len(), self.d_x),
            ("beta_x", self.beta_x.len(), self.d_x),
            ("z_u", self.z_u.len(), self.d_z),
            ("a_z", self.a_z.len(), self.d_z),
            ("w_u", self.w_u.len(), self.d_w),
            ("w_intercept", self.w_intercept.len(), self.d_w),
        ] {
            if len != want {
                return bad(format!("{name} has length {len}, expected {want}"));
            }
        }
        rows("z_x", &self.z_x, self.d_z)?;
        rows("w_x", &self.w_x, self.d_w)?;
        if self.d_w == 0 {
            return bad("at least one W proxy is required".into());
        }
        if self.w_u.contains(&0.0) {
            return bad("every W proxy must load on U (w_u != 0)".into());
        }
        if self.a_u == 0.0 && self.a_z.iter().all(|c| *c == 0.0) {
            return bad("the treatment equation must load on U or Z".into());
        }
        for (name, sd) in [
            ("u_sd", self.u_sd),
            ("z_sd", self.z_sd),
            ("w_sd", self.w_sd),
            ("a_sd", self.a_sd),
            ("y_sd", self.y_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative number"));
            }
        }
        if self.outcome == OutcomeType::BinaryProbit && self.y_sd <= 0.0 {
            return bad("a probit outcome needs y_sd > 0".into());
        }
        self.w_noise.validate()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        match self.outcome {
            OutcomeType::Continuous => GroundTruth::Linear {
                intercept: self.beta0,
                slope: self.beta_a,
            },
            OutcomeType::BinaryProbit => {
                // Var(β_u U + β_xᵀX) with U = u_xᵀX + u_sd ε
                let load: f64 = (0..self.d_x)
                    .map(|k| (self.beta_u * self.u_x[k] + self.beta_x[k]).powi(2))
                    .sum();
                let v = load + (self.beta_u * self.u_sd).powi(2);
                GroundTruth::Probit {
                    intercept: self.beta0,
                    slope: self.beta_a,
                    scale: (self.y_sd * self.y_sd + v).sqrt(),
                }
            }
        }
    }

    pub fn role_map(&self) -> BTreeMap<String, ColumnRole> {
        let mut roles = BTreeMap::new();
        roles.insert("Y".to_string(), ColumnRole::Outcome);
        roles.insert("A".to_string(), ColumnRole::Treatment);
        for k in 0..self.d_x {
            roles.insert(numbered("X", k), ColumnRole::CovariateX);
        }
        for k in 0..self.d_z {
            roles.insert(numbered("Z", k), ColumnRole::ProxyZ);
        }
        for k in 0..self.d_w {
            roles.insert(numbered("W", k), ColumnRole::ProxyW);
        }
        roles
    }
}

/// Every exogenous draw for n units; [`PointDraw::realize`] maps them through
/// the structural equations, optionally with the treatment forced.
#[derive(Debug, Clone)]
pub struct PointDraw {
    pub x: Vec<Vec<f64>>,
    pub eps_u: Vec<f64>,
    pub eps_z: Vec<Vec<f64>>,
    pub noise_w: Vec<Vec<f64>>,
    pub eps_a: Vec<f64>,
    pub eps_y: Vec<f64>,
}

/// Unit-level values of all variables, U included.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRealization {
    pub u: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

impl PointDraw {
    pub fn sample(spec: &PointDgpSpec, n: usize, rng: &mut Rng) -> Self {
        let mut draw = Self {
            x: Vec::with_capacity(n),
            eps_u: Vec::with_capacity(n),
            eps_z: Vec::with_capacity(n),
            noise_w: Vec::with_capacity(n),
            eps_a: Vec::with_capacity(n),
            eps_y: Vec::with_capacity(n),
        };
        // unit by unit so a prefix of a larger draw equals a smaller draw
        for _ in 0..n {
            draw.x.push((0..spec.d_x).map(|_| normal(rng)).collect());
            draw.eps_u.push(normal(rng));
            draw.eps_z.push((0..spec.d_z).map(|_| normal(rng)).collect());
            draw.noise_w
                .push((0..spec.d_w).map(|_| spec.w_noise.sample(rng)).collect());
            draw.eps_a.push(normal(rng));
            draw.eps_y.push(normal(rng));
        }
        draw
    }

    pub fn len(&self) -> usize {
        self.eps_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps_u.is_empty()
    }

    /// Runs the structural equations. With `forced_a`, A is set to that value
    /// for unit i instead of being generated; everything downstream of A uses it.
    pub fn realize(&self, spec: &PointDgpSpec, forced_a: Option<&[f64]>) -> PointRealization {
        let n = self.len();
        let mut out = PointRealization {
            u: Vec::with_capacity(n),
            x: self.x.clone(),
            z: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        };
        for i in 0..n {
            let x = &self.x[i];
            let u = dot(&spec.u_x, x) + spec.u_sd * self.eps_u[i];
            let su = u + spec.z_nonlinearity * u * u * u;
            let z: Vec<f64> = (0..spec.d_z)
                .map(|k| spec.z_u[k] * su + dot(&spec.z_x[k], x) + spec.z_sd * self.eps_z[i][k])
                .collect();
            let w: Vec<f64> = (0..spec.d_w)
                .map(|k| {
                    spec.w_intercept[k]
                        + spec.w_u[k] * u
                        + dot(&spec.w_x[k], x)
                        + spec.w_sd * self.noise_w[i][k]
                })
                .collect();
            let a = match forced_a {
                Some(f) => f[i],
                None => {
                    let index = spec.a_intercept
                        + spec.a_u * u
                        + dot(&spec.a_z, &z)
                        + dot(&spec.a_x, x)
                        + spec.a_sd * self.eps_a[i];
                    match spec.treatment {
                        TreatmentType::Continuous => index,
                        TreatmentType::Binary => f64::from(index > 0.0),
                    }
                }
            };
            let index = spec.beta0 + spec.beta_a * a + spec.beta_u * u + dot(&spec.beta_x, x);
            let y = match spec.outcome {
                OutcomeType::Continuous => index + spec.y_sd * self.eps_y[i],
                OutcomeType::BinaryProbit => f64::from(index + spec.y_sd * self.eps_y[i] > 0.0),
            };
            out.u.push(u);
            out.z.push(z);
            out.w.push(w);
            out.a.push(a);
            out.y.push(y);
        }
        out
    }
}

impl PointRealization {
    pub fn to_dataset(&self, spec: &PointDgpSpec) -> Result<Dataset> {
        let col = |f: &dyn Fn(usize) -> f64| (0..self.y.len()).map(f).collect::<Vec<_>>();
        let mut raw = RawTable::new()
            .with_column("Y", self.y.clone())
            .with_column("A", self.a.clone());
        for k in 0..spec.d_x {
            raw.push(numbered("X", k), col(&|i| self.x[i][k]));
        }
        for k in 0..spec.d_z {
            raw.push(numbered("Z", k), col(&|i| self.z[i][k]));
        }
        for k in 0..spec.d_w {
            raw.push(numbered("W", k), col(&|i| self.w[i][k]));
        }
        validate_dataset(raw, &spec.role_map(), Layout::Point)
    }
}

#[derive(Debug, Clone)]
pub struct PointSample {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub latent_u: Vec<f64>,
    pub draw: PointDraw,
}

/// Simulates n units seeded by `spec.seed`.
pub fn generate_point(spec: &PointDgpSpec, n: usize) -> Result<(Dataset, GroundTruth)> {
    let s = generate_point_with_latent(spec, n, &mut seeded(spec.seed))?;
    Ok((s.data, s.truth))
}

/// Simulates n units from an explicit stream and also returns U and the raw draws.
pub fn generate_point_with_latent(
    spec: &PointDgpSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<PointSample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let draw = PointDraw::sample(spec, n, rng);
    let real = draw.realize(spec, None);
    Ok(PointSample {
        data: real.to_dataset(spec)?,
        truth: spec.ground_truth(),
        latent_u: real.u,
        draw,
    })
}
