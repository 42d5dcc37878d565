use std::collections::BTreeMap;

use proptest::prelude::*;
use proximal_core::bridge::BridgeForm;
use proximal_core::dgp::{generate_point, generate_point_with_latent, PointDgpSpec};
use proximal_core::point::*;
use proximal_core::rng::seeded;
use proximal_core::{ols, validate_dataset, ColumnRole, Dataset, Layout, RawTable};

fn spec(seed: u64) -> PointDgpSpec {
    PointDgpSpec {
        seed,
        ..PointDgpSpec::default()
    }
}

fn grid() -> PointOptions {
    PointOptions::default()
}

#[test]
fn linear_pgcomp_matches_p2sls() {
    let (data, _) = generate_point(&spec(3), 2000).unwrap();
    let p = fit_p2sls(&data, &grid()).unwrap();
    let g = fit_proximal_g_computation(&data, &PgcompConfig::default(), &grid()).unwrap();
    for (a, b) in p.beta.iter().zip(&g.beta) {
        assert!((a.estimate - b.estimate).abs() < 1e-6);
    }
}

#[test]
fn p2sls_recovers_slope_and_ols_does_not() {
    let s = spec(4);
    let (data, truth) = generate_point(&s, 20_000).unwrap();
    let p = fit_p2sls(&data, &grid()).unwrap();
    let o = fit_ols_baseline(&data, AdjustSet::X, &grid()).unwrap();
    let slope = truth.beta(&[1.0]) - truth.beta(&[0.0]);
    let ps = p.slope.unwrap();
    let os = o.slope.unwrap();
    assert!((ps.estimate - slope).abs() < 4.0 * ps.se.unwrap(), "{ps:?} vs {slope}");
    assert!((os.estimate - slope).abs() > 5.0 * os.se.unwrap());
    // contrast over the default grid is the slope
    assert!((p.contrast.unwrap().estimate - ps.estimate).abs() < 1e-12);
}

#[test]
fn include_u_oracle_regression_is_unbiased() {
    let s = spec(5);
    let sample = generate_point_with_latent(&s, 20_000, &mut seeded(5)).unwrap();
    let v = sample.data.point_view().unwrap();
    let n = v.n();
    let design = nalgebra::DMatrix::from_fn(n, 4, |i, k| match k {
        0 => 1.0,
        1 => v.a[i],
        2 => sample.latent_u[i],
        _ => v.x[(i, 0)],
    });
    let fit = ols(&design, &v.y, None).unwrap();
    assert!((fit.coefficients[1] - s.beta_a).abs() < 4.0 * fit.std_errors()[1]);
}

#[test]
fn eta_w_zero_is_g_formula_over_x() {
    let s = PointDgpSpec {
        treatment: proximal_core::dgp::TreatmentType::Continuous,
        ..spec(6)
    };
    let (data, _) = generate_point(&s, 1500).unwrap();
    let cfg = PgcompConfig {
        eta_w_zero: true,
        ..PgcompConfig::default()
    };
    let g = fit_proximal_g_computation(&data, &cfg, &grid()).unwrap();
    let sg = fit_standard_g_formula(
        &data,
        GFormulaConfig {
            adjust: AdjustSet::X,
            interactions: false,
        },
        &grid(),
    )
    .unwrap();
    for (a, b) in g.beta.iter().zip(&sg.beta) {
        assert!((a.estimate - b.estimate).abs() < 1e-10);
    }
}

#[test]
fn probit_bridge_recovers_contrast() {
    let s = PointDgpSpec {
        seed: 8,
        ..PointDgpSpec::probit()
    };
    let (data, truth) = generate_point(&s, 20_000).unwrap();
    let cfg = PgcompConfig {
        bridge: BridgeForm::ProbitLinked,
        ..PgcompConfig::default()
    };
    let fit = fit_proximal_g_computation(&data, &cfg, &grid()).unwrap();
    let report = fit.diagnostics.optimizer.clone().unwrap();
    assert!(report.gradient_norm < 1e-6);
    let target = truth.beta(&[1.0]) - truth.beta(&[0.0]);
    let est = fit.contrast.unwrap().estimate;
    assert!((est - target).abs() < 0.03, "{est} vs {target}");
}

#[test]
fn probit_eta_w_zero_is_probit_standardization() {
    let s = PointDgpSpec {
        seed: 9,
        ..PointDgpSpec::probit()
    };
    let (data, _) = generate_point(&s, 3000).unwrap();
    let cfg = PgcompConfig {
        bridge: BridgeForm::ProbitLinked,
        eta_w_zero: true,
        ..PgcompConfig::default()
    };
    let fit = fit_proximal_g_computation(&data, &cfg, &grid()).unwrap();
    assert!(fit.eta_w.iter().all(|c| c.estimate == 0.0));
    assert!(fit.diagnostics.optimizer.unwrap().gradient_norm < 1e-6);
}

#[test]
fn monte_carlo_integration_tracks_closed_form() {
    let s = PointDgpSpec {
        seed: 10,
        ..PointDgpSpec::probit()
    };
    let (data, _) = generate_point(&s, 600).unwrap();
    let closed = PgcompConfig {
        bridge: BridgeForm::ProbitLinked,
        ..PgcompConfig::default()
    };
    let mc = PgcompConfig {
        integration: Integration::MonteCarlo { draws: 4096, seed: 1 },
        restarts: 0,
        ..closed
    };
    let a = fit_proximal_g_computation(&data, &closed, &grid()).unwrap();
    let b = fit_proximal_g_computation(&data, &mc, &grid()).unwrap();
    let (ca, cb) = (a.contrast.unwrap().estimate, b.contrast.unwrap().estimate);
    assert!((ca - cb).abs() < 0.02, "{ca} vs {cb}");
}

fn saturated_binary() -> Dataset {
    let mut rng = seeded(12);
    use rand::Rng as _;
    let n = 400;
    let l: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
    let a: Vec<f64> = l.iter().map(|l| f64::from(rng.random_bool(0.3 + 0.4 * l) as u8)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + a[i] + 2.0 * l[i] + rng.random::<f64>()).collect();
    let raw = RawTable::new()
        .with_column("Y", y)
        .with_column("A", a)
        .with_column("L", l);
    let roles: BTreeMap<String, ColumnRole> = [
        ("Y".to_string(), ColumnRole::Outcome),
        ("A".to_string(), ColumnRole::Treatment),
        ("L".to_string(), ColumnRole::CovariateX),
    ]
    .into();
    validate_dataset(raw, &roles, Layout::Point).unwrap()
}

#[test]
fn saturated_g_formula_matches_cell_means() {
    let data = saturated_binary();
    let v = data.point_view().unwrap();
    let cfg = GFormulaConfig {
        adjust: AdjustSet::X,
        interactions: true,
    };
    let fit = fit_standard_g_formula(&data, cfg, &grid()).unwrap();
    let n = v.n() as f64;
    for a in [0.0, 1.0] {
        let mut oracle = 0.0;
        for l in [0.0, 1.0] {
            let cell: Vec<f64> = (0..v.n())
                .filter(|&i| v.a[i] == a && v.x[(i, 0)] == l)
                .map(|i| v.y[i])
                .collect();
            let mean = cell.iter().sum::<f64>() / cell.len() as f64;
            let share = (0..v.n()).filter(|&i| v.x[(i, 0)] == l).count() as f64 / n;
            oracle += mean * share;
        }
        assert!((fit.beta_at(&[a]).unwrap() - oracle).abs() < 1e-10);
    }
}

#[test]
fn g_formula_without_covariates_is_arm_fit() {
    let data = saturated_binary();
    let cfg = GFormulaConfig {
        adjust: AdjustSet {
            x: false,
            w: false,
            z: false,
        },
        interactions: false,
    };
    let fit = fit_standard_g_formula(&data, cfg, &grid()).unwrap();
    let v = data.point_view().unwrap();
    let arm = |a: f64| {
        let ys: Vec<f64> = (0..v.n()).filter(|&i| v.a[i] == a).map(|i| v.y[i]).collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    for a in [0.0, 1.0] {
        assert!((fit.beta_at(&[a]).unwrap() - arm(a)).abs() < 1e-10);
    }
}

#[test]
fn fewer_z_than_w_flags_rank_deficiency() {
    let s = PointDgpSpec {
        d_w: 2,
        w_u: vec![1.0, 0.7],
        w_x: vec![vec![0.3], vec![0.1]],
        w_intercept: vec![0.0, 0.0],
        ..spec(13)
    };
    let (data, _) = generate_point(&s, 1000).unwrap();
    let fit = fit_p2sls(&data, &grid()).unwrap();
    assert!(fit
        .diagnostics
        .warnings
        .iter()
        .any(|w| matches!(w, proximal_core::estimate::Warning::RankDeficientStage2 { .. })));
    assert!(fit.slope.unwrap().estimate.is_finite());
}

#[test]
fn weak_first_stage_is_reported() {
    let s = PointDgpSpec {
        z_u: vec![0.0],
        z_x: vec![vec![0.0]],
        ..spec(14)
    };
    let (data, _) = generate_point(&s, 500).unwrap();
    let fit = fit_p2sls(&data, &grid()).unwrap();
    assert!(fit
        .diagnostics
        .warnings
        .iter()
        .any(|w| matches!(w, proximal_core::estimate::Warning::WeakFirstStage { .. })));
}

#[test]
fn asymptotic_confounding_test_detects_confounding() {
    let (data, _) = generate_point(&spec(15), 5000).unwrap();
    let t = test_confounding(&data, CovarianceSource::Asymptotic).unwrap();
    assert!(t.p_value < 1e-6);
    let b = test_confounding(&data, CovarianceSource::Bootstrap { replicates: 100, seed: 2 }).unwrap();
    assert!(b.p_value < 1e-6 && b.covariance == "bootstrap");
}

fn transform(data: &Dataset, f: impl Fn(&str, f64) -> f64) -> Dataset {
    let mut raw = data.to_raw();
    for (name, col) in raw.names.iter().zip(raw.columns.iter_mut()) {
        for v in col.iter_mut() {
            *v = f(name, *v);
        }
    }
    validate_dataset(raw, data.roles(), Layout::Point).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn treatment_shift_keeps_contrast(seed in 0u64..1000, c in -3.0f64..3.0) {
        let (data, _) = generate_point(&spec(seed), 300).unwrap();
        let shifted = transform(&data, |n, v| if n == "A" { v + c } else { v });
        let base = fit_p2sls(&data, &grid()).unwrap();
        let moved = fit_p2sls(&shifted, &PointOptions { grid: vec![c, 1.0 + c] }).unwrap();
        let d = base.contrast.unwrap().estimate - moved.contrast.unwrap().estimate;
        prop_assert!(d.abs() < 1e-10);
        for (a, b) in base.beta.iter().zip(&moved.beta) {
            prop_assert!((a.estimate - b.estimate).abs() < 1e-8);
        }
    }

    #[test]
    fn outcome_scale_equivariance(seed in 0u64..1000, c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
        let (data, _) = generate_point(&spec(seed), 300).unwrap();
        let scaled = transform(&data, |n, v| if n == "Y" { c * v } else { v });
        let base = fit_p2sls(&data, &grid()).unwrap();
        let s = fit_p2sls(&scaled, &grid()).unwrap();
        let (b0, b1) = (base.slope.unwrap(), s.slope.unwrap());
        prop_assert!((c * b0.estimate - b1.estimate).abs() < 1e-8 * (1.0 + b0.estimate.abs()));
        prop_assert!((c.abs() * b0.se.unwrap() - b1.se.unwrap()).abs() < 1e-8);
        for (a, b) in base.eta_w.iter().zip(&s.eta_w) {
            prop_assert!((c * a.estimate - b.estimate).abs() < 1e-8 * (1.0 + a.estimate.abs()));
            prop_assert!((c.abs() * a.se.unwrap() - b.se.unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn estimate_invariants(seed in 0u64..1000) {
        let (data, _) = generate_point(&spec(seed), 200).unwrap();
        for fit in [
            fit_p2sls(&data, &grid()).unwrap(),
            fit_ols_baseline(&data, AdjustSet::ALL, &grid()).unwrap(),
        ] {
            let c = fit.contrast.unwrap();
            let (lo, hi) = c.ci.unwrap();
            prop_assert!(lo <= c.estimate && c.estimate <= hi);
            prop_assert!(fit.beta.iter().all(|b| b.se.unwrap() >= 0.0));
        }
    }
}

#[test]
fn w_self_instrumented_when_z_is_empty() {
    let (data, _) = generate_point(&PointDgpSpec::unconfounded(), 500).unwrap();
    let mut roles = data.roles().clone();
    roles.remove("Z1");
    let no_z = data.with_roles(roles).unwrap();
    let p = fit_p2sls(&no_z, &grid()).unwrap();
    let o = fit_ols_baseline(
        &no_z,
        AdjustSet {
            x: true,
            w: true,
            z: false,
        },
        &grid(),
    )
    .unwrap();
    assert!((p.slope.unwrap().estimate - o.slope.unwrap().estimate).abs() < 1e-10);
    assert!(p
        .diagnostics
        .warnings
        .contains(&proximal_core::estimate::Warning::NoTreatmentProxies));
}
