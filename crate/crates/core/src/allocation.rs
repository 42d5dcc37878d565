//! Greedy allocation of candidate proxies to the treatment-inducing (Z) and
//! outcome-inducing (W) buckets.
//!
//! Each candidate gets two association statistics: one from a treatment model
//! (logistic when A is binary, linear otherwise) of A on X and all candidates,
//! one from a linear outcome model of Y on A, X and all candidates. Rounds then
//! alternate: W takes its strongest remaining candidate, Z takes its strongest
//! remaining candidate, and allocated candidates leave both lists. Equal
//! statistics are ordered by column name. A tie is a round where the same
//! candidate tops both lists while at least two remain.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRole, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{logistic_irls, ols, LogisticOptions};
use crate::rng::seeded;

/// What happens when the same candidate tops both lists in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TiePolicy {
    PrioritizeW,
    PrioritizeZ,
    /// Fair coin per tie, drawn from a generator keyed by `seed`.
    Randomize { seed: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    /// |coefficient / standard error|.
    #[default]
    Wald,
    /// |coefficient|, for sensitivity analyses.
    RawCoefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub tie_policy: TiePolicy,
    #[serde(default)]
    pub strength: Strength,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            tie_policy: TiePolicy::PrioritizeW,
            strength: Strength::Wald,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStatistics {
    pub name: String,
    pub treatment: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Z,
    W,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieEvent {
    pub round: usize,
    pub candidate: String,
    pub assigned: Bucket,
    pub policy: TiePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationStep {
    pub round: usize,
    pub bucket: Bucket,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub z_set: Vec<String>,
    pub w_set: Vec<String>,
    /// Candidates in name order with both statistics.
    pub ranking_table: Vec<CandidateStatistics>,
    pub tie_events: Vec<TieEvent>,
    pub steps: Vec<AllocationStep>,
}

fn strength_of(coef: f64, se: f64, strength: Strength) -> f64 {
    match strength {
        Strength::Wald if se > 0.0 => (coef / se).abs(),
        Strength::Wald => {
            if coef == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Strength::RawCoefficient => coef.abs(),
    }
}

/// Association statistics for `candidates`, which must be columns without a
/// role in `data`.
pub fn association_statistics(
    data: &Dataset,
    candidates: &[String],
    strength: Strength,
) -> Result<Vec<CandidateStatistics>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("candidate list has duplicates".into()));
    }
    let mut cand_cols = Vec::with_capacity(sorted.len());
    for c in &sorted {
        let col = data
            .column(c)
            .ok_or_else(|| Error::InvalidArgument(format!("candidate {c:?} is not a column")))?;
        if let Some(role) = data.roles().get(c) {
            return Err(Error::InvalidArgument(format!(
                "candidate {c:?} already has role {role:?}"
            )));
        }
        cand_cols.push(col);
    }
    let y = data.column(data.outcome_name()).expect("validated outcome");
    let a_name = data.names_with_role(ColumnRole::Treatment)[0];
    let a = data.column(a_name).expect("validated treatment");
    let x_cols: Vec<&[f64]> = data
        .names_with_role(ColumnRole::CovariateX)
        .into_iter()
        .map(|c| data.column(c).expect("validated covariate"))
        .collect();
    let n = y.len();
    let k = cand_cols.len();
    let dx = x_cols.len();

    // treatment model: (1, X, L); outcome model: (1, A, X, L)
    let treat_design = DMatrix::from_fn(n, 1 + dx + k, |i, j| match j {
        0 => 1.0,
        j if j <= dx => x_cols[j - 1][i],
        j => cand_cols[j - 1 - dx][i],
    });
    let out_design = DMatrix::from_fn(n, 2 + dx + k, |i, j| match j {
        0 => 1.0,
        1 => a[i],
        j if j < 2 + dx => x_cols[j - 2][i],
        j => cand_cols[j - 2 - dx][i],
    });
    let a_vec = DVector::from_column_slice(a);
    let binary = a.iter().all(|v| *v == 0.0 || *v == 1.0);
    let (t_coef, t_se) = if binary {
        let fit = logistic_irls(&treat_design, &a_vec, LogisticOptions::default())?;
        let se = fit.std_errors();
        (fit.coefficients, se)
    } else {
        let fit = ols(&treat_design, &a_vec, None)?;
        let se = fit.std_errors();
        (fit.coefficients, se)
    };
    let out = ols(&out_design, &DVector::from_column_slice(y), None)?;
    let o_se = out.std_errors();

    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(j, name)| CandidateStatistics {
            name,
            treatment: strength_of(t_coef[1 + dx + j], t_se[1 + dx + j], strength),
            outcome: strength_of(out.coefficients[2 + dx + j], o_se[2 + dx + j], strength),
        })
        .collect())
}

/// Strongest first; equal statistics in name order.
fn ranked(stats: &[CandidateStatistics], key: impl Fn(&CandidateStatistics) -> f64) -> Vec<String> {
    let mut order: Vec<&CandidateStatistics> = stats.iter().collect();
    order.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.name.cmp(&b.name)));
    order.into_iter().map(|s| s.name.clone()).collect()
}

/// The greedy allocation given precomputed statistics.
pub fn allocate_from_statistics(stats: &[CandidateStatistics], policy: TiePolicy) -> Result<AllocationResult> {
    if stats.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut w_list = ranked(stats, |s| s.outcome);
    let mut z_list = ranked(stats, |s| s.treatment);
    let mut rng = match policy {
        TiePolicy::Randomize { seed } => Some(seeded(seed)),
        _ => None,
    };
    let mut result = AllocationResult {
        z_set: Vec::new(),
        w_set: Vec::new(),
        ranking_table: {
            let mut t = stats.to_vec();
            t.sort_by(|a, b| a.name.cmp(&b.name));
            t
        },
        tie_events: Vec::new(),
        steps: Vec::new(),
    };

    let mut take = |bucket: Bucket, name: String, round: usize, w_list: &mut Vec<String>, z_list: &mut Vec<String>| {
        w_list.retain(|c| *c != name);
        z_list.retain(|c| *c != name);
        match bucket {
            Bucket::W => result.w_set.push(name.clone()),
            Bucket::Z => result.z_set.push(name.clone()),
        }
        result.steps.push(AllocationStep {
            round,
            bucket,
            candidate: name,
        });
    };

    let mut round = 0;
    let mut ties = Vec::new();
    while !w_list.is_empty() {
        round += 1;
        let top_w = w_list[0].clone();
        // a lone remaining candidate is not contested; W's first pick takes it
        if w_list.len() > 1 && z_list.first() == Some(&top_w) {
            let assigned = match policy {
                TiePolicy::PrioritizeW => Bucket::W,
                TiePolicy::PrioritizeZ => Bucket::Z,
                TiePolicy::Randomize { .. } => {
                    if rng.as_mut().expect("seeded").random_bool(0.5) {
                        Bucket::W
                    } else {
                        Bucket::Z
                    }
                }
            };
            ties.push(TieEvent {
                round,
                candidate: top_w.clone(),
                assigned,
                policy,
            });
            take(assigned, top_w, round, &mut w_list, &mut z_list);
            // the other bucket then takes its best remaining candidate
            let other = match assigned {
                Bucket::W => Bucket::Z,
                Bucket::Z => Bucket::W,
            };
            let next = match other {
                Bucket::W => w_list.first().cloned(),
                Bucket::Z => z_list.first().cloned(),
            };
            if let Some(c) = next {
                take(other, c, round, &mut w_list, &mut z_list);
            }
            continue;
        }
        take(Bucket::W, top_w, round, &mut w_list, &mut z_list);
        if let Some(c) = z_list.first().cloned() {
            take(Bucket::Z, c, round, &mut w_list, &mut z_list);
        }
    }
    result.tie_events = ties;
    Ok(result)
}

pub fn allocate_proxies(data: &Dataset, candidates: &[String], config: &AllocationConfig) -> Result<AllocationResult> {
    let stats = association_statistics(data, candidates, config.strength)?;
    allocate_from_statistics(&stats, config.tie_policy)
}
