use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{dot, numbered, GroundTruth, NoiseLaw};
use crate::data::{validate_dataset, ColumnRole, Dataset, Layout, RawTable};
use crate::error::{Error, Result};
use crate::rng::{normal, seeded, Rng};

/// Coefficients of period j. Lag terms are ignored in period 0.
///
/// ```text
/// U(j)   = u_lag·U(j−1) + u_a_lag·A(j−1) + u_sd·ε
/// X(j)_k = x_lag[k]·X(j−1)_k + x_a_lag[k]·A(j−1) + x_u[k]·U(j) + ε
/// Z(j)_k = z_u[k]·s(U(j)) + z_x[k]ᵀX(j) + z_sd·ε,    s(u) = u + z_nonlinearity·u³
/// W(j)_k = w_intercept[k] + w_u[k]·U(j) + w_x[k]ᵀX(j) + w_sd·ν
/// A(j)   = 1{a_intercept + a_u·U(j) + a_zᵀZ(j) + a_xᵀX(j) + a_lag·A(j−1) + ε > 0}
/// ```
///
/// and the outcome adds `y_a·A(j) + y_u·U(j) + y_xᵀX(j)` for every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodBlock {
    pub u_lag: f64,
    pub u_a_lag: f64,
    pub u_sd: f64,
    pub x_lag: Vec<f64>,
    pub x_a_lag: Vec<f64>,
    pub x_u: Vec<f64>,
    pub z_u: Vec<f64>,
    pub z_x: Vec<Vec<f64>>,
    pub z_sd: f64,
    pub w_intercept: Vec<f64>,
    pub w_u: Vec<f64>,
    pub w_x: Vec<Vec<f64>>,
    pub w_sd: f64,
    pub a_intercept: f64,
    pub a_u: f64,
    pub a_z: Vec<f64>,
    pub a_x: Vec<f64>,
    pub a_lag: f64,
    pub y_a: f64,
    pub y_u: f64,
    pub y_x: Vec<f64>,
}

/// Longitudinal structural model over `periods` periods with binary treatments.
/// Within a period the generation order is U, X, Z, W, then A; Y comes last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDgpSpec {
    pub periods: usize,
    pub d_x: usize,
    pub d_z: usize,
    pub d_w: usize,
    pub blocks: Vec<PeriodBlock>,
    #[serde(default)]
    pub z_nonlinearity: f64,
    pub w_noise: NoiseLaw,
    pub y_intercept: f64,
    pub y_sd: f64,
    pub seed: u64,
}

impl PeriodBlock {
    fn base() -> Self {
        Self {
            u_lag: 0.6,
            u_a_lag: 0.4,
            u_sd: 1.0,
            x_lag: vec![0.5],
            x_a_lag: vec![0.5],
            x_u: vec![0.3],
            z_u: vec![1.0],
            z_x: vec![vec![0.3]],
            z_sd: 1.0,
            w_intercept: vec![0.0],
            w_u: vec![1.0],
            w_x: vec![vec![0.3]],
            w_sd: 1.0,
            a_intercept: -0.3,
            a_u: 1.0,
            a_z: vec![0.5],
            a_x: vec![0.3],
            a_lag: 0.5,
            y_a: -0.5,
            y_u: 1.0,
            y_x: vec![0.4],
        }
    }
}

impl Default for LongitudinalDgpSpec {
    fn default() -> Self {
        Self::confounded(2)
    }
}

impl LongitudinalDgpSpec {
    /// Time-varying confounding with treatment–confounder feedback: A(j−1)
    /// moves U(j) and X(j). For J = 2 the period-0 direct effect is set so the
    /// total effects of A(0) and A(1) are equal (β(ā) is linear in cum(ā)),
    /// which keeps a cumulative-dose marginal structural model correctly
    /// specified apart from confounding.
    pub fn confounded(periods: usize) -> Self {
        let mut first = PeriodBlock::base();
        first.x_u = vec![0.3];
        first.a_intercept = 0.0;
        first.y_x = vec![0.5];
        let mut later = PeriodBlock::base();
        later.x_u = vec![0.0];
        let mut blocks = vec![first];
        blocks.extend((1..periods).map(|_| later.clone()));
        let mut spec = Self {
            periods,
            d_x: 1,
            d_z: 1,
            d_w: 1,
            blocks,
            z_nonlinearity: 0.0,
            w_noise: NoiseLaw::Gaussian,
            y_intercept: 1.0,
            y_sd: 1.0,
            seed: 1,
        };
        spec.equalize_effects();
        spec
    }

    /// For J = 2, sets the period-0 direct effect so both treatments have the
    /// same total effect.
    fn equalize_effects(&mut self) {
        if self.periods == 2 {
            // total effect of A(0) = y_a[0] + y_u[1]·u_a_lag + y_x[1]·(x_a_lag + x_u·u_a_lag)
            let b = &self.blocks[1];
            let carried = b.y_u * b.u_a_lag + b.y_x[0] * (b.x_a_lag[0] + b.x_u[0] * b.u_a_lag);
            self.blocks[0].y_a = self.blocks[1].y_a - carried;
        }
    }

    /// No feedback and equal direct effects, so the outcome bridge is additive
    /// in cum(Ā) at every stage.
    pub fn additive(periods: usize) -> Self {
        let mut spec = Self::confounded(periods);
        for b in &mut spec.blocks {
            b.u_a_lag = 0.0;
            b.x_a_lag = vec![0.0];
            b.y_a = -0.5;
        }
        spec
    }

    /// U removed from the outcome equation, so sequential randomization holds
    /// given the observed history.
    pub fn unconfounded(periods: usize) -> Self {
        let mut spec = Self::confounded(periods);
        for b in &mut spec.blocks {
            b.y_u = 0.0;
        }
        spec.equalize_effects();
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.periods < 2 {
            return bad(format!("need at least 2 periods, got {}", self.periods));
        }
        if self.blocks.len() != self.periods {
            return bad(format!(
                "{} period blocks for {} periods",
                self.blocks.len(),
                self.periods
            ));
        }
        if self.d_w == 0 || self.d_z == 0 {
            return bad("every period needs at least one Z and one W proxy".into());
        }
        for (j, b) in self.blocks.iter().enumerate() {
            let dims = [
                ("x_lag", b.x_lag.len(), self.d_x),
                ("x_a_lag", b.x_a_lag.len(), self.d_x),
                ("x_u", b.x_u.len(), self.d_x),
                ("a_x", b.a_x.len(), self.d_x),
                ("y_x", b.y_x.len(), self.d_x),
                ("z_u", b.z_u.len(), self.d_z),
                ("a_z", b.a_z.len(), self.d_z),
                ("z_x", b.z_x.len(), self.d_z),
                ("w_u", b.w_u.len(), self.d_w),
                ("w_intercept", b.w_intercept.len(), self.d_w),
                ("w_x", b.w_x.len(), self.d_w),
            ];
            for (name, len, want) in dims {
                if len != want {
                    return bad(format!("period {j}: {name} has length {len}, expected {want}"));
                }
            }
            if b.z_x.iter().chain(&b.w_x).any(|r| r.len() != self.d_x) {
                return bad(format!("period {j}: z_x and w_x rows need {} entries", self.d_x));
            }
            if b.w_u.contains(&0.0) {
                return bad(format!("period {j}: every W proxy must load on U"));
            }
            if b.a_u == 0.0 && b.a_z.iter().all(|c| *c == 0.0) {
                return bad(format!("period {j}: the treatment equation must load on U or Z"));
            }
        }
        self.w_noise.validate()
    }

    /// β(ā) by forward substitution of means under do(ā).
    pub fn ground_truth(&self) -> GroundTruth {
        let zero = vec![0.0; self.periods];
        let intercept = self.closed_form(&zero);
        let effects = (0..self.periods)
            .map(|j| {
                let mut e = zero.clone();
                e[j] = 1.0;
                self.closed_form(&e) - intercept
            })
            .collect();
        GroundTruth::Regime { intercept, effects }
    }

    fn closed_form(&self, regime: &[f64]) -> f64 {
        let mut mu_u = 0.0;
        let mut mu_x = vec![0.0; self.d_x];
        let mut total = self.y_intercept;
        for (j, b) in self.blocks.iter().enumerate() {
            let lag_a = if j == 0 { 0.0 } else { regime[j - 1] };
            mu_u = b.u_lag * mu_u + b.u_a_lag * lag_a;
            for k in 0..self.d_x {
                mu_x[k] = b.x_lag[k] * mu_x[k] + b.x_a_lag[k] * lag_a + b.x_u[k] * mu_u;
            }
            total += b.y_a * regime[j] + b.y_u * mu_u + dot(&b.y_x, &mu_x);
        }
        total
    }

    pub fn role_map(&self) -> BTreeMap<String, ColumnRole> {
        let mut roles = BTreeMap::new();
        roles.insert("id".to_string(), ColumnRole::SubjectId);
        roles.insert("t".to_string(), ColumnRole::TimeIndex);
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

/// Exogenous draws for n subjects, indexed `[subject][period]`.
#[derive(Debug, Clone)]
pub struct LongitudinalDraw {
    pub eps_u: Vec<Vec<f64>>,
    pub eps_x: Vec<Vec<Vec<f64>>>,
    pub eps_z: Vec<Vec<Vec<f64>>>,
    pub noise_w: Vec<Vec<Vec<f64>>>,
    pub eps_a: Vec<Vec<f64>>,
    pub eps_y: Vec<f64>,
}

/// One subject's trajectory, U included. Period-indexed vectors are `[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub y: f64,
}

impl LongitudinalDraw {
    pub fn sample(spec: &LongitudinalDgpSpec, n: usize, rng: &mut Rng) -> Self {
        let j = spec.periods;
        let mut d = Self {
            eps_u: Vec::with_capacity(n),
            eps_x: Vec::with_capacity(n),
            eps_z: Vec::with_capacity(n),
            noise_w: Vec::with_capacity(n),
            eps_a: Vec::with_capacity(n),
            eps_y: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let mut u = Vec::with_capacity(j);
            let mut x = Vec::with_capacity(j);
            let mut z = Vec::with_capacity(j);
            let mut w = Vec::with_capacity(j);
            let mut a = Vec::with_capacity(j);
            for _ in 0..j {
                u.push(normal(rng));
                x.push((0..spec.d_x).map(|_| normal(rng)).collect());
                z.push((0..spec.d_z).map(|_| normal(rng)).collect());
                w.push((0..spec.d_w).map(|_| spec.w_noise.sample(rng)).collect());
                a.push(normal(rng));
            }
            d.eps_u.push(u);
            d.eps_x.push(x);
            d.eps_z.push(z);
            d.noise_w.push(w);
            d.eps_a.push(a);
            d.eps_y.push(normal(rng));
        }
        d
    }

    pub fn len(&self) -> usize {
        self.eps_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps_y.is_empty()
    }

    /// Trajectory of subject i, with treatments forced to `regime` when given.
    pub fn realize_one(
        &self,
        spec: &LongitudinalDgpSpec,
        i: usize,
        regime: Option<&[f64]>,
    ) -> Trajectory {
        let periods = spec.periods;
        let mut t = Trajectory {
            u: Vec::with_capacity(periods),
            x: Vec::with_capacity(periods),
            z: Vec::with_capacity(periods),
            w: Vec::with_capacity(periods),
            a: Vec::with_capacity(periods),
            y: 0.0,
        };
        let mut y = spec.y_intercept;
        for (j, b) in spec.blocks.iter().enumerate() {
            let (lag_u, lag_a) = if j == 0 { (0.0, 0.0) } else { (t.u[j - 1], t.a[j - 1]) };
            let u = b.u_lag * lag_u + b.u_a_lag * lag_a + b.u_sd * self.eps_u[i][j];
            let x: Vec<f64> = (0..spec.d_x)
                .map(|k| {
                    let lag_x = if j == 0 { 0.0 } else { t.x[j - 1][k] };
                    b.x_lag[k] * lag_x + b.x_a_lag[k] * lag_a + b.x_u[k] * u + self.eps_x[i][j][k]
                })
                .collect();
            let su = u + spec.z_nonlinearity * u * u * u;
            let z: Vec<f64> = (0..spec.d_z)
                .map(|k| b.z_u[k] * su + dot(&b.z_x[k], &x) + b.z_sd * self.eps_z[i][j][k])
                .collect();
            let w: Vec<f64> = (0..spec.d_w)
                .map(|k| {
                    b.w_intercept[k] + b.w_u[k] * u + dot(&b.w_x[k], &x)
                        + b.w_sd * self.noise_w[i][j][k]
                })
                .collect();
            let a = match regime {
                Some(r) => r[j],
                None => {
                    let index = b.a_intercept
                        + b.a_u * u
                        + dot(&b.a_z, &z)
                        + dot(&b.a_x, &x)
                        + b.a_lag * lag_a
                        + self.eps_a[i][j];
                    f64::from(index > 0.0)
                }
            };
            y += b.y_a * a + b.y_u * u + dot(&b.y_x, &x);
            t.u.push(u);
            t.x.push(x);
            t.z.push(z);
            t.w.push(w);
            t.a.push(a);
        }
        t.y = y + spec.y_sd * self.eps_y[i];
        t
    }

    pub fn realize(&self, spec: &LongitudinalDgpSpec, regime: Option<&[f64]>) -> Vec<Trajectory> {
        (0..self.len()).map(|i| self.realize_one(spec, i, regime)).collect()
    }
}

/// Long-format dataset (one row per subject-period, Y repeated on every row).
pub fn trajectories_to_dataset(spec: &LongitudinalDgpSpec, subjects: &[Trajectory]) -> Result<Dataset> {
    let rows = subjects.len() * spec.periods;
    let mut id = Vec::with_capacity(rows);
    let mut t = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    let mut a = Vec::with_capacity(rows);
    let mut x = vec![Vec::with_capacity(rows); spec.d_x];
    let mut z = vec![Vec::with_capacity(rows); spec.d_z];
    let mut w = vec![Vec::with_capacity(rows); spec.d_w];
    for (i, s) in subjects.iter().enumerate() {
        for j in 0..spec.periods {
            id.push(i as f64);
            t.push(j as f64);
            y.push(s.y);
            a.push(s.a[j]);
            for k in 0..spec.d_x {
                x[k].push(s.x[j][k]);
            }
            for k in 0..spec.d_z {
                z[k].push(s.z[j][k]);
            }
            for k in 0..spec.d_w {
                w[k].push(s.w[j][k]);
            }
        }
    }
    let mut raw = RawTable::new()
        .with_column("id", id)
        .with_column("t", t)
        .with_column("Y", y)
        .with_column("A", a);
    for (prefix, block) in [("X", x), ("Z", z), ("W", w)] {
        for (k, col) in block.into_iter().enumerate() {
            raw.push(numbered(prefix, k), col);
        }
    }
    validate_dataset(
        raw,
        &spec.role_map(),
        Layout::Longitudinal {
            periods: spec.periods,
        },
    )
}

#[derive(Debug, Clone)]
pub struct LongitudinalSample {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub trajectories: Vec<Trajectory>,
    pub draw: LongitudinalDraw,
}

pub fn generate_longitudinal(
    spec: &LongitudinalDgpSpec,
    n: usize,
) -> Result<(Dataset, GroundTruth)> {
    let s = generate_longitudinal_with_latent(spec, n, &mut seeded(spec.seed))?;
    Ok((s.data, s.truth))
}

pub fn generate_longitudinal_with_latent(
    spec: &LongitudinalDgpSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<LongitudinalSample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let draw = LongitudinalDraw::sample(spec, n, rng);
    let trajectories = draw.realize(spec, None);
    Ok(LongitudinalSample {
        data: trajectories_to_dataset(spec, &trajectories)?,
        truth: spec.ground_truth(),
        trajectories,
        draw,
    })
}

/// Monte-Carlo estimate of E(Y_ā) with its standard error, simulating the
/// structural system under forced treatments.
pub fn interventional_mean(
    spec: &LongitudinalDgpSpec,
    regime: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if regime.len() != spec.periods {
        return Err(Error::DimensionMismatch(format!(
            "regime has {} entries for {} periods",
            regime.len(),
            spec.periods
        )));
    }
    let mut rng = seeded(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    const CHUNK: usize = 10_000;
    let mut remaining = draws;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let d = LongitudinalDraw::sample(spec, m, &mut rng);
        for i in 0..m {
            let y = d.realize_one(spec, i, Some(regime)).y;
            sum += y;
            sum_sq += y * y;
        }
        remaining -= m;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
