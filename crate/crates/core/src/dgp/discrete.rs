use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{DiscreteJointLaw, DiscreteVariable};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Conditional tables for binary U, Z, W, A, Y. Every entry is P(· = 1 | ·).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLawParams {
    pub p_u: f64,
    /// `[u]`
    pub p_z: [f64; 2],
    /// `[u]`
    pub p_w: [f64; 2],
    /// `[u][z]`
    pub p_a: [[f64; 2]; 2],
    /// `[a][u][w]`
    pub p_y: [[[f64; 2]; 2]; 2],
}

/// Categorical U, Z, W, A with a binary Y. Distributions are full probability
/// vectors over the child's levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalLawParams {
    pub p_u: Vec<f64>,
    /// `[u][z]`
    pub p_z_given_u: Vec<Vec<f64>>,
    /// `[u][w]`
    pub p_w_given_u: Vec<Vec<f64>>,
    /// `[u][z][a]`
    pub p_a_given_uz: Vec<Vec<Vec<f64>>>,
    /// P(Y = 1 | a, u, w), `[a][u][w]`
    pub p_y1: Vec<Vec<Vec<f64>>>,
}

/// Exact counterfactual means β(a) = Σ_u E(Y | a, u) P(u), indexed by a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTruth {
    pub beta: Vec<f64>,
}

impl BinaryLawParams {
    pub fn to_categorical(&self) -> CategoricalLawParams {
        let pair = |p: f64| vec![1.0 - p, p];
        CategoricalLawParams {
            p_u: pair(self.p_u),
            p_z_given_u: self.p_z.iter().map(|p| pair(*p)).collect(),
            p_w_given_u: self.p_w.iter().map(|p| pair(*p)).collect(),
            p_a_given_uz: self
                .p_a
                .iter()
                .map(|row| row.iter().map(|p| pair(*p)).collect())
                .collect(),
            p_y1: self
                .p_y
                .iter()
                .map(|m| m.iter().map(|r| r.to_vec()).collect())
                .collect(),
        }
    }
}

fn check_open(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::DegenerateProbability(format!("{what} = {p} is not in (0, 1)")))
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    for (k, v) in p.iter().enumerate() {
        check_open(*v, &format!("{what}[{k}]"))?;
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::DegenerateProbability(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Joint table over (U, Z, W, A, Y) for binary variables, plus exact β(0), β(1).
pub fn build_discrete_law(params: &BinaryLawParams) -> Result<(DiscreteJointLaw, DiscreteTruth)> {
    build_categorical_law(&params.to_categorical())
}

/// Joint table over (U, Z, W, A, Y) with factorization
/// P(u) P(z|u) P(w|u) P(a|u,z) P(y|a,u,w), plus exact β(a) for every level a.
pub fn build_categorical_law(
    params: &CategoricalLawParams,
) -> Result<(DiscreteJointLaw, DiscreteTruth)> {
    let du = params.p_u.len();
    let dz = params.p_z_given_u.first().map_or(0, Vec::len);
    let dw = params.p_w_given_u.first().map_or(0, Vec::len);
    let da = params
        .p_a_given_uz
        .first()
        .and_then(|r| r.first())
        .map_or(0, Vec::len);
    let shape_ok = du > 0
        && dz > 0
        && dw > 0
        && da > 0
        && params.p_z_given_u.len() == du
        && params.p_w_given_u.len() == du
        && params.p_a_given_uz.len() == du
        && params.p_a_given_uz.iter().all(|r| r.len() == dz)
        && params.p_y1.len() == da
        && params
            .p_y1
            .iter()
            .all(|m| m.len() == du && m.iter().all(|r| r.len() == dw));
    if !shape_ok {
        return Err(Error::InvalidLaw("inconsistent conditional table shapes".into()));
    }

    check_distribution(&params.p_u, "P(U)")?;
    for u in 0..du {
        check_distribution(&params.p_z_given_u[u], &format!("P(Z|U={u})"))?;
        check_distribution(&params.p_w_given_u[u], &format!("P(W|U={u})"))?;
        for z in 0..dz {
            check_distribution(&params.p_a_given_uz[u][z], &format!("P(A|U={u},Z={z})"))?;
        }
        for a in 0..da {
            for w in 0..dw {
                check_open(params.p_y1[a][u][w], &format!("P(Y=1|A={a},U={u},W={w})"))?;
            }
        }
    }

    let mut probs = Vec::with_capacity(du * dz * dw * da * 2);
    for u in 0..du {
        for z in 0..dz {
            for w in 0..dw {
                for a in 0..da {
                    let base = params.p_u[u]
                        * params.p_z_given_u[u][z]
                        * params.p_w_given_u[u][w]
                        * params.p_a_given_uz[u][z][a];
                    let py = params.p_y1[a][u][w];
                    probs.push(base * (1.0 - py));
                    probs.push(base * py);
                }
            }
        }
    }
    // rescale away accumulated rounding so the table sums to one
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);

    let vars = [("U", du), ("Z", dz), ("W", dw), ("A", da), ("Y", 2)]
        .iter()
        .map(|(n, l)| DiscreteVariable {
            name: n.to_string(),
            levels: *l,
        })
        .collect();
    let law = DiscreteJointLaw::new(vars, probs)?;

    let beta = (0..da)
        .map(|a| {
            (0..du)
                .map(|u| {
                    let ey: f64 = (0..dw)
                        .map(|w| params.p_y1[a][u][w] * params.p_w_given_u[u][w])
                        .sum();
                    params.p_u[u] * ey
                })
                .sum()
        })
        .collect();
    Ok((law, DiscreteTruth { beta }))
}

/// Every conditional probability uniform on (0.1, 0.9).
pub fn random_binary_params(rng: &mut Rng) -> BinaryLawParams {
    let mut p = || rng.random_range(0.1..0.9);
    BinaryLawParams {
        p_u: p(),
        p_z: [p(), p()],
        p_w: [p(), p()],
        p_a: [[p(), p()], [p(), p()]],
        p_y: [[[p(), p()], [p(), p()]], [[p(), p()], [p(), p()]]],
    }
}
