//! One function per subcommand. Each returns its artifacts in memory plus the
//! input files it read; nothing touches disk until the caller commits.

use std::fmt::Write as _;

use proximal_core::allocation::{allocate_proxies, AllocationConfig, AllocationResult};
use proximal_core::bridge::{apply_proximal_g_formula, bridges_for, DiscreteBridge};
use proximal_core::dgp::{build_categorical_law, build_discrete_law, generate_longitudinal, generate_point, GroundTruth};
use proximal_core::estimate::EffectEstimate;
use proximal_core::inference::{bootstrap, run_replication_study, BootstrapConfig, ReplicateValue, ReplicationStudy};
use proximal_core::longitudinal::{
    binary_regimes, fit_ipw_msm, fit_longitudinal_g_computation, fit_recursive_ls, IpwConfig, RecursiveConfig,
};
use proximal_core::point::{
    fit_ols_baseline, fit_standard_g_formula, p2sls_detailed, pgcomp_detailed, test_confounding, AdjustSet,
    CovarianceSource, GFormulaConfig, PgcompConfig, PointOptions,
};
use proximal_core::{read_csv, write_csv, ColumnRole, Dataset, Layout, RoleConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{read_file, read_json, sibling, to_json_bytes, Artifacts, CliError, CliResult, Provenance};
use crate::config::*;

pub struct Outcome {
    pub artifacts: Artifacts,
    pub inputs: Vec<(String, Vec<u8>)>,
    /// Human summary for stdout.
    pub summary: String,
}

pub fn execute(config: &RunConfig) -> CliResult<Outcome> {
    match config {
        RunConfig::Simulate(c) => simulate(config, c),
        RunConfig::Allocate(c) => allocate(config, c),
        RunConfig::Fit(c) => fit(config, c),
        RunConfig::Bootstrap(c) => run_bootstrap(config, c),
        RunConfig::Replicate(c) => replicate(config, c),
        RunConfig::Bridge(c) => bridge(config, c),
        RunConfig::Report(c) => report(c),
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize, Deserialize)]
struct TruthFile {
    n: usize,
    seed: u64,
    truth: GroundTruth,
    /// β at the default grid (point) or every binary regime (longitudinal).
    beta: Vec<TruthPoint>,
}

#[derive(Serialize, Deserialize)]
struct TruthPoint {
    treatment: Vec<f64>,
    beta: f64,
}

pub fn generate(spec: &SimSpec, n: usize) -> CliResult<(Dataset, GroundTruth)> {
    Ok(match spec {
        SimSpec::Point(s) => generate_point(s, n)?,
        SimSpec::Longitudinal(s) => generate_longitudinal(s, n)?,
    })
}

fn truth_points(spec: &SimSpec, truth: &GroundTruth) -> Vec<TruthPoint> {
    let treatments = match spec {
        SimSpec::Point(_) => vec![vec![0.0], vec![1.0]],
        SimSpec::Longitudinal(s) => binary_regimes(s.periods),
    };
    treatments
        .into_iter()
        .map(|t| TruthPoint {
            beta: truth.beta(&t),
            treatment: t,
        })
        .collect()
}

fn simulate(_config: &RunConfig, c: &SimulateConfig) -> CliResult<Outcome> {
    let spec = c.spec.with_seed(c.seed);
    let (data, truth) = generate(&spec, c.n)?;
    let mut csv_bytes = Vec::new();
    write_csv(&data, &mut csv_bytes)?;
    let roles = RoleConfig {
        layout: data.layout(),
        roles: data.roles().clone(),
    };
    let truth_file = TruthFile {
        n: c.n,
        seed: c.seed,
        beta: truth_points(&spec, &truth),
        truth,
    };
    let mut artifacts = Artifacts::default();
    artifacts.add(c.out.clone(), csv_bytes);
    artifacts.add(sibling(&c.out, ".truth.json"), to_json_bytes(&truth_file));
    artifacts.add(sibling(&c.out, ".roles.json"), to_json_bytes(&roles));
    Ok(Outcome {
        artifacts,
        inputs: Vec::new(),
        summary: format!("simulated {} rows into {}", data.n_rows(), c.out),
    })
}

// ---------------------------------------------------------------- data loading

#[derive(Serialize, Deserialize)]
struct AllocationFile {
    provenance: Provenance,
    allocation: AllocationResult,
}

struct Loaded {
    data: Dataset,
    inputs: Vec<(String, Vec<u8>)>,
}

fn load_dataset(data: &str, roles: &str, allocation: Option<&str>) -> CliResult<Loaded> {
    let role_bytes = read_file(roles)?;
    let mut role_config: RoleConfig = read_json(roles)?;
    let mut inputs = Vec::new();
    if let Some(path) = allocation {
        let bytes = read_file(path)?;
        let file: AllocationFile = read_json(path)?;
        for name in &file.allocation.z_set {
            role_config.roles.insert(name.clone(), ColumnRole::ProxyZ);
        }
        for name in &file.allocation.w_set {
            role_config.roles.insert(name.clone(), ColumnRole::ProxyW);
        }
        inputs.push((path.to_string(), bytes));
    }
    let data_bytes = read_file(data)?;
    let dataset = read_csv(data_bytes.as_slice(), &role_config).map_err(|e| CliError::from(e).in_file(data))?;
    inputs.insert(0, (roles.to_string(), role_bytes));
    inputs.insert(0, (data.to_string(), data_bytes));
    Ok(Loaded { data: dataset, inputs })
}

// ---------------------------------------------------------------- allocate

fn allocate(config: &RunConfig, c: &AllocateConfig) -> CliResult<Outcome> {
    let loaded = load_dataset(&c.data, &c.roles, None)?;
    let result = allocate_proxies(
        &loaded.data,
        &c.candidates,
        &AllocationConfig {
            tie_policy: c.tie_policy,
            strength: c.strength,
        },
    )?;
    let summary = format!(
        "Z = {{{}}}, W = {{{}}}, {} tie(s)",
        result.z_set.join(", "),
        result.w_set.join(", "),
        result.tie_events.len()
    );
    let mut artifacts = Artifacts::default();
    artifacts.add(
        c.out.clone(),
        to_json_bytes(&AllocationFile {
            provenance: Provenance::of(config),
            allocation: result,
        }),
    );
    Ok(Outcome {
        artifacts,
        inputs: loaded.inputs,
        summary,
    })
}

// ---------------------------------------------------------------- fit

/// An estimate plus method-specific detail for the result file.
pub struct FitOutput {
    pub estimate: EffectEstimate,
    pub detail: Value,
}

fn adjust_set(names: &[String]) -> CliResult<AdjustSet> {
    let mut set = AdjustSet {
        x: false,
        w: false,
        z: false,
    };
    for n in names {
        match n.as_str() {
            "x" => set.x = true,
            "w" => set.w = true,
            "z" => set.z = true,
            other => return Err(CliError::config(format!("unknown adjustment bucket {other:?}"))),
        }
    }
    Ok(set)
}

fn recursive_config(opts: &MethodOptions) -> RecursiveConfig {
    RecursiveConfig {
        maps: opts.maps.clone().unwrap_or_default(),
        overrides: opts.stage_maps.clone(),
        regimes: opts.regimes.clone(),
    }
}

fn require_layout(data: &Dataset, method: FitMethod) -> CliResult<()> {
    let longitudinal = matches!(data.layout(), Layout::Longitudinal { .. });
    if longitudinal != method.is_longitudinal() {
        return Err(CliError::config(format!(
            "method {} does not accept {} data",
            method.as_str(),
            if longitudinal { "longitudinal" } else { "point" }
        )));
    }
    Ok(())
}

/// Runs one estimator. Every number comes from the library.
pub fn fit_method(method: FitMethod, data: &Dataset, opts: &MethodOptions, seed: Option<u64>) -> CliResult<FitOutput> {
    require_layout(data, method)?;
    let point_opts = PointOptions {
        grid: opts.grid.clone(),
    };
    let out = match method {
        FitMethod::Ols => {
            let adjust = match &opts.adjust {
                Some(a) => adjust_set(a)?,
                None => AdjustSet::X,
            };
            FitOutput {
                estimate: fit_ols_baseline(data, adjust, &point_opts)?,
                detail: Value::Null,
            }
        }
        FitMethod::Gformula => {
            let adjust = match &opts.adjust {
                Some(a) => adjust_set(a)?,
                None => AdjustSet::ALL,
            };
            let cfg = GFormulaConfig {
                adjust,
                interactions: opts.interactions,
            };
            FitOutput {
                estimate: fit_standard_g_formula(data, cfg, &point_opts)?,
                detail: Value::Null,
            }
        }
        FitMethod::P2sls => {
            let fit = p2sls_detailed(&data.point_view()?, &point_opts)?;
            let mut estimate = fit.estimate;
            if let Some(source @ CovarianceSource::Bootstrap { .. }) = opts.confounding_test {
                estimate.diagnostics.confounding_test = Some(test_confounding(data, source)?);
            }
            FitOutput {
                estimate,
                detail: json!({ "first_stage": fit.first_stage }),
            }
        }
        FitMethod::Pgcomp => {
            let cfg = PgcompConfig {
                bridge: opts.bridge,
                eta_w_zero: opts.eta_w_zero,
                integration: opts.integration,
                restarts: opts.restarts,
                seed: seed.unwrap_or(0),
                ..PgcompConfig::default()
            };
            let fit = pgcomp_detailed(&data.point_view()?, &cfg, &point_opts)?;
            let mut estimate = fit.estimate;
            if let Some(source) = opts.confounding_test {
                estimate.diagnostics.confounding_test = Some(test_confounding(data, source)?);
            }
            FitOutput {
                estimate,
                detail: json!({ "bridge": fit.bridge, "first_stage": fit.first_stage }),
            }
        }
        FitMethod::Recursive => {
            let fit = fit_recursive_ls(data, &recursive_config(opts))?;
            FitOutput {
                detail: json!({
                    "stages": fit.stages,
                    "max_orthogonality_residual": fit.max_orthogonality_residual(),
                }),
                estimate: fit.estimate,
            }
        }
        FitMethod::Lgcomp => {
            let fit = fit_longitudinal_g_computation(data, &recursive_config(opts))?;
            FitOutput {
                detail: json!({ "w_laws": fit.w_laws, "bridges": fit.bridges }),
                estimate: fit.estimate,
            }
        }
        FitMethod::Ipw => {
            let fit = fit_ipw_msm(
                data,
                &IpwConfig {
                    truncate_at: opts.truncate_at,
                },
                opts.regimes.as_deref(),
            )?;
            FitOutput {
                detail: json!({ "weights": fit.weights }),
                estimate: fit.estimate,
            }
        }
    };
    Ok(out)
}

fn describe(estimate: &EffectEstimate) -> String {
    let mut s = String::new();
    for b in &estimate.beta {
        let _ = write!(s, "beta({:?}) = {:.6}", b.treatment, b.estimate);
        if let Some(se) = b.se {
            let _ = write!(s, " (se {se:.6})");
        }
        s.push('\n');
    }
    if let Some(c) = &estimate.contrast {
        let _ = writeln!(s, "contrast {:?} vs {:?} = {:.6}", c.high, c.low, c.estimate);
    }
    for w in &estimate.diagnostics.warnings {
        let _ = writeln!(s, "warning: {}", serde_json::to_string(w).unwrap_or_default());
    }
    s.trim_end().to_string()
}

fn fit(config: &RunConfig, c: &FitConfig) -> CliResult<Outcome> {
    let loaded = load_dataset(&c.data, &c.roles, c.allocation.as_deref())?;
    let out = fit_method(c.method, &loaded.data, &c.options, c.seed)?;
    let summary = format!("{}: n = {}\n{}", c.method.as_str(), out.estimate.n, describe(&out.estimate));
    let mut artifacts = Artifacts::default();
    artifacts.add(
        config.output().to_string(),
        to_json_bytes(&json!({
            "provenance": Provenance::of(config),
            "estimate": out.estimate,
            "detail": out.detail,
        })),
    );
    Ok(Outcome {
        artifacts,
        inputs: loaded.inputs,
        summary,
    })
}

// ---------------------------------------------------------------- bootstrap

#[derive(Serialize, Deserialize)]
struct BootstrapParameter {
    name: String,
    estimate: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
}

fn run_bootstrap(config: &RunConfig, c: &BootstrapRun) -> CliResult<Outcome> {
    let loaded = load_dataset(&c.fit.data, &c.fit.roles, c.fit.allocation.as_deref())?;
    let full = fit_method(c.fit.method, &loaded.data, &c.fit.options, c.fit.seed)?;
    let names = full.estimate.parameter_names();
    let result = bootstrap(
        |d| {
            fit_method(c.fit.method, d, &c.fit.options, c.fit.seed)
                .map(|f| f.estimate.parameters())
                .map_err(|e| proximal_core::Error::InvalidArgument(e.message))
        },
        &loaded.data,
        &BootstrapConfig {
            replicates: c.replicates,
            alpha: c.alpha,
            seed: c.seed,
            force: c.force,
        },
    )?;
    let params: Vec<BootstrapParameter> = names
        .iter()
        .enumerate()
        .map(|(k, name)| BootstrapParameter {
            name: name.clone(),
            estimate: result.estimate[k],
            se: result.se[k],
            ci_low: result.ci[k].0,
            ci_high: result.ci[k].1,
        })
        .collect();

    let mut table = csv::Writer::from_writer(Vec::new());
    for p in &params {
        table.serialize(p).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let table = table.into_inner().map_err(|e| CliError::runtime(e.to_string()))?;

    let mut summary = format!(
        "{} bootstrap replicates ({} failed){}\n",
        result.b,
        result.n_failed,
        if result.unreliable { ", UNRELIABLE" } else { "" }
    );
    for p in &params {
        let _ = writeln!(summary, "{}: {:.6} se {:.6} [{:.6}, {:.6}]", p.name, p.estimate, p.se, p.ci_low, p.ci_high);
    }
    let mut artifacts = Artifacts::default();
    artifacts.add(
        c.out.clone(),
        to_json_bytes(&json!({
            "provenance": Provenance::of(config),
            "method": c.fit.method,
            "replicates": result.b,
            "alpha": result.alpha,
            "seed": result.seed,
            "n_failed": result.n_failed,
            "unreliable": result.unreliable,
            "parameters": params,
        })),
    );
    artifacts.add(sibling(&c.out, ".csv"), table);
    Ok(Outcome {
        artifacts,
        inputs: loaded.inputs,
        summary: summary.trim_end().to_string(),
    })
}

// ---------------------------------------------------------------- replicate

/// Replicate values for one fitted method against the simulator's truth.
pub fn replicate_values(method: FitMethod, estimate: &EffectEstimate, truth: &GroundTruth) -> Vec<ReplicateValue> {
    let mut values: Vec<ReplicateValue> = estimate
        .beta
        .iter()
        .map(|b| ReplicateValue {
            name: format!("{}:beta({})", method.as_str(), join(&b.treatment)),
            estimate: b.estimate,
            truth: truth.beta(&b.treatment),
            ci: None,
        })
        .collect();
    if let Some(c) = &estimate.contrast {
        values.push(ReplicateValue {
            name: format!("{}:contrast", method.as_str()),
            estimate: c.estimate,
            truth: truth.beta(&c.high) - truth.beta(&c.low),
            ci: c.ci,
        });
    }
    values
}

fn join(t: &[f64]) -> String {
    t.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

#[derive(Serialize, Deserialize)]
pub struct StudyFile {
    pub provenance: Provenance,
    pub n: usize,
    pub study: ReplicationStudy,
}

fn replicate(config: &RunConfig, c: &ReplicateConfig) -> CliResult<Outcome> {
    if c.methods.is_empty() {
        return Err(CliError::config("no methods given"));
    }
    let study = run_replication_study(c.replications, c.seed, |_, rep_seed| {
        let (data, truth) = generate(&c.spec.with_seed(rep_seed), c.n)
            .map_err(|e| proximal_core::Error::InvalidArgument(e.message))?;
        let mut values = Vec::new();
        for &m in &c.methods {
            let fit = fit_method(m, &data, &c.options, Some(rep_seed))
                .map_err(|e| proximal_core::Error::InvalidArgument(format!("{}: {}", m.as_str(), e.message)))?;
            values.extend(replicate_values(m, &fit.estimate, &truth));
        }
        Ok(values)
    })?;
    let summary = summary_table(&study);
    let mut artifacts = Artifacts::default();
    artifacts.add(
        c.out.clone(),
        to_json_bytes(&StudyFile {
            provenance: Provenance::of(config),
            n: c.n,
            study,
        }),
    );
    Ok(Outcome {
        artifacts,
        inputs: Vec::new(),
        summary,
    })
}

fn summary_table(study: &ReplicationStudy) -> String {
    let mut s = format!(
        "{} replications, {} failed\n{:<40} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
        study.replications,
        study.failures.len(),
        "quantity",
        "truth",
        "mean",
        "bias",
        "bias/se",
        "cover"
    );
    for r in &study.summaries {
        let cover = r.coverage.map_or("-".to_string(), |c| format!("{c:.3}"));
        let _ = writeln!(
            s,
            "{:<40} {:>10.5} {:>10.5} {:>10.5} {:>8.2} {:>8}",
            r.name,
            r.truth,
            r.mean,
            r.bias,
            r.bias_in_mc_se(),
            cover
        );
    }
    s.trim_end().to_string()
}

// ---------------------------------------------------------------- report

#[derive(Serialize)]
struct ReportRow<'a> {
    name: &'a str,
    truth: f64,
    replications: usize,
    mean: f64,
    bias: f64,
    sd: f64,
    mc_se: f64,
    bias_in_mc_se: f64,
    rmse: f64,
    coverage: Option<f64>,
}

fn report(c: &ReportConfig) -> CliResult<Outcome> {
    let bytes = read_file(&c.study)?;
    let file: StudyFile = read_json(&c.study)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    for r in &file.study.summaries {
        table
            .serialize(ReportRow {
                name: &r.name,
                truth: r.truth,
                replications: r.replications,
                mean: r.mean,
                bias: r.bias,
                sd: r.sd,
                mc_se: r.mc_se,
                bias_in_mc_se: r.bias_in_mc_se(),
                rmse: r.rmse,
                coverage: r.coverage,
            })
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let table = table.into_inner().map_err(|e| CliError::runtime(e.to_string()))?;
    let mut artifacts = Artifacts::default();
    artifacts.add(c.out.clone(), table);
    Ok(Outcome {
        artifacts,
        inputs: vec![(c.study.clone(), bytes)],
        summary: summary_table(&file.study),
    })
}

// ---------------------------------------------------------------- bridge

#[derive(Serialize, Deserialize)]
struct BridgeCell {
    a: usize,
    bridges: Vec<DiscreteBridge>,
    beta: f64,
    truth: f64,
}

fn bridge(config: &RunConfig, c: &BridgeRun) -> CliResult<Outcome> {
    let (law, truth) = match &c.law {
        LawSpec::Binary(p) => build_discrete_law(p)?,
        LawSpec::Categorical(p) => build_categorical_law(p)?,
    };
    let levels = law
        .levels("A")
        .ok_or_else(|| CliError::config("law has no treatment variable A"))?;
    let mut cells = Vec::with_capacity(levels);
    let mut summary = String::new();
    for a in 0..levels {
        let bridges = bridges_for(&law, a, c.solver)?;
        let beta = apply_proximal_g_formula(&law, &bridges)?;
        for b in &bridges {
            let h: Vec<String> = b.h.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                summary,
                "a={a} x={:?}: h = [{}], residual {:.2e}{}",
                b.x,
                h.join(", "),
                b.residual,
                if b.rank_deficient { " (rank deficient)" } else { "" }
            );
        }
        let _ = writeln!(summary, "beta({a}) = {beta:.10}");
        cells.push(BridgeCell {
            a,
            bridges,
            beta,
            truth: truth.beta[a],
        });
    }
    let mut artifacts = Artifacts::default();
    artifacts.add(
        c.out.clone(),
        to_json_bytes(&json!({
            "provenance": Provenance::of(config),
            "solver": c.solver,
            "cells": cells,
        })),
    );
    Ok(Outcome {
        artifacts,
        inputs: Vec::new(),
        summary: summary.trim_end().to_string(),
    })
}
