//! Process-level contract of the `proximal` binary: outputs agree with the
//! library, exit codes, atomicity, shipped configs, thread-count invariance.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proximal_cli::config::{LawSpec, SimSpec};
use proximal_core::allocation::{allocate_proxies, AllocationConfig};
use proximal_core::bridge::{proximal_g_formula, DiscreteSolver};
use proximal_core::dgp::{build_discrete_law, random_binary_params, LongitudinalDgpSpec, PointDgpSpec};
use proximal_core::inference::{run_replication_study, ReplicateValue};
use proximal_core::point::{fit_p2sls, PointOptions};
use proximal_core::rng::seeded;
use proximal_core::{read_csv, RoleConfig};
use serde_json::Value;

fn proximal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proximal"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = proximal(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn simulate_point(dir: &Path, n: &str, seed: &str) {
    ok(dir, &["simulate", "--n", n, "--seed", seed, "--out", "data.csv"]);
}

#[test]
fn simulate_writes_data_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_point(dir, "250", "5");
    let csv = fs::read_to_string(dir.join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 251);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 5);
    for f in ["data.truth.json", "data.roles.json", "data.manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let truth = json(dir.join("data.truth.json"));
    let spec = PointDgpSpec::default();
    let slope = truth["truth"]["slope"].as_f64().unwrap();
    assert_eq!(slope, spec.beta_a);
}

#[test]
fn fit_is_the_library_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_point(dir, "600", "6");
    ok(
        dir,
        &["fit", "--method", "p2sls", "--data", "data.csv", "--roles", "data.roles.json", "--out", "fit.json"],
    );
    let roles: RoleConfig = serde_json::from_value(json(dir.join("data.roles.json"))).unwrap();
    let data = read_csv(fs::File::open(dir.join("data.csv")).unwrap(), &roles).unwrap();
    let direct = fit_p2sls(&data, &PointOptions::default()).unwrap();
    assert_eq!(json(dir.join("fit.json"))["estimate"], serde_json::to_value(&direct).unwrap());
}

#[test]
fn replicate_and_report_match_a_library_study() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["replicate", "--n", "400", "--reps", "50", "--seed", "12", "--methods", "p2sls", "--out", "study.json"],
    );
    ok(dir, &["report", "--study", "study.json", "--out", "table.csv"]);

    let direct = run_replication_study(50, 12, |_, seed| {
        let spec = PointDgpSpec {
            seed,
            ..PointDgpSpec::default()
        };
        let (data, truth) = proximal_core::dgp::generate_point(&spec, 400)?;
        let c = fit_p2sls(&data, &PointOptions::default())?.contrast.unwrap();
        Ok(vec![ReplicateValue {
            name: "p2sls:contrast".into(),
            estimate: c.estimate,
            truth: truth.beta(&[1.0]) - truth.beta(&[0.0]),
            ci: c.ci,
        }])
    })
    .unwrap();
    let want = &direct.summaries[0];
    let study = json(dir.join("study.json"));
    let got = study["study"]["summaries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["name"] == "p2sls:contrast")
        .unwrap()
        .clone();
    assert_eq!(got, serde_json::to_value(want).unwrap());

    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let row = rdr
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == "p2sls:contrast")
        .unwrap();
    let col = |name: &str| -> f64 { row[headers.iter().position(|h| h == name).unwrap()].parse().unwrap() };
    assert_eq!(col("mean"), want.mean);
    assert_eq!(col("mc_se"), want.mc_se);
    assert_eq!(col("coverage"), want.coverage.unwrap());
}

#[test]
fn bridge_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let params = random_binary_params(&mut seeded(44));
    fs::write(
        dir.join("law.json"),
        serde_json::to_vec(&LawSpec::Binary(params.clone())).unwrap(),
    )
    .unwrap();
    ok(dir, &["bridge", "--law", "law.json", "--solver", "binary", "--out", "bridge.json"]);
    let (law, truth) = build_discrete_law(&params).unwrap();
    let cells = json(dir.join("bridge.json"))["cells"].clone();
    for a in 0..2 {
        let beta = proximal_g_formula(&law, a, DiscreteSolver::Binary).unwrap();
        assert_eq!(cells[a]["beta"].as_f64().unwrap(), beta);
        assert!((beta - truth.beta[a]).abs() < 1e-10);
    }
}

#[test]
fn allocate_matches_the_library_and_feeds_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_point(dir, "800", "7");
    fs::write(
        dir.join("bare.roles.json"),
        r#"{"layout": {"kind": "point"}, "roles": {"Y": "outcome", "A": "treatment", "X1": "covariate_x"}}"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "allocate", "--data", "data.csv", "--roles", "bare.roles.json", "--candidates", "W1,Z1", "--out", "alloc.json",
        ],
    );
    let roles: RoleConfig = serde_json::from_value(json(dir.join("bare.roles.json"))).unwrap();
    let data = read_csv(fs::File::open(dir.join("data.csv")).unwrap(), &roles).unwrap();
    let direct = allocate_proxies(&data, &["W1".into(), "Z1".into()], &AllocationConfig::default()).unwrap();
    let file = json(dir.join("alloc.json"));
    assert_eq!(file["allocation"], serde_json::to_value(&direct).unwrap());

    // with the allocated roles the fit equals the fit on the simulator's roles
    ok(
        dir,
        &[
            "fit", "--method", "p2sls", "--data", "data.csv", "--roles", "bare.roles.json", "--allocation", "alloc.json",
            "--out", "a.json",
        ],
    );
    ok(
        dir,
        &["fit", "--method", "p2sls", "--data", "data.csv", "--roles", "data.roles.json", "--out", "b.json"],
    );
    assert_eq!((direct.w_set.as_slice(), direct.z_set.as_slice()), (&["W1".to_string()][..], &["Z1".to_string()][..]));
    assert_eq!(json(dir.join("a.json"))["estimate"], json(dir.join("b.json"))["estimate"]);
}

#[test]
fn config_errors_exit_2_with_json_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("broken.json"), "{\"method\": \"p2sls\",").unwrap();
    let out = proximal(dir, &["fit", "--config", "broken.json"]);
    assert_eq!(out.status.code(), Some(2));
    let diag: Value = serde_json::from_slice(out.stderr.trim_ascii_end()).unwrap();
    assert_eq!(diag["error"], "config");
    assert_eq!(diag["file"], "broken.json");

    // missing required flag
    let out = proximal(dir, &["replicate", "--n", "100", "--methods", "ols", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(2));

    // too few replications
    let out = proximal(
        dir,
        &["replicate", "--n", "100", "--reps", "10", "--seed", "1", "--methods", "ols", "--out", "s.json"],
    );
    assert_eq!(out.status.code(), Some(2));

    // a longitudinal method on point data
    simulate_point(dir, "100", "1");
    let out = proximal(
        dir,
        &["fit", "--method", "recursive", "--data", "data.csv", "--roles", "data.roles.json", "--out", "r.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("r.json").exists());
}

#[test]
fn runtime_failure_exits_1_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["simulate", "--design", "longitudinal", "--periods", "3", "--n", "300", "--seed", "2", "--out", "long.csv"],
    );
    let before: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    let out = proximal(
        dir,
        &["fit", "--method", "lgcomp", "--data", "long.csv", "--roles", "long.roles.json", "--out", "g.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let diag: Value = serde_json::from_slice(out.stderr.trim_ascii_end()).unwrap();
    assert_eq!(diag["error"], "runtime");
    let after: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before.len(), after.len(), "no artifact or temporary file left behind");
}

#[test]
fn shipped_configs_are_the_library_defaults() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let read = |f: &str| fs::read(format!("{dir}/{f}")).unwrap();
    let point: SimSpec = serde_json::from_slice(&read("point.json")).unwrap();
    assert_eq!(point, SimSpec::Point(PointDgpSpec::default()));
    let probit: SimSpec = serde_json::from_slice(&read("point_probit.json")).unwrap();
    assert_eq!(probit, SimSpec::Point(PointDgpSpec::probit()));
    let long: SimSpec = serde_json::from_slice(&read("longitudinal.json")).unwrap();
    assert_eq!(long, SimSpec::Longitudinal(LongitudinalDgpSpec::confounded(2)));
    let law: LawSpec = serde_json::from_slice(&read("binary_law.json")).unwrap();
    assert_eq!(law, LawSpec::Binary(random_binary_params(&mut seeded(1))));
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_point(dir, "300", "9");
    fs::write(
        dir.join("fit.json"),
        r#"{"method": "p2sls", "data": "data.csv", "roles": "data.roles.json"}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        ok(
            dir,
            &["--jobs", jobs, "bootstrap", "--fit-config", "fit.json", "--B", "80", "--seed", "3", "--out", "boot.json"],
        );
        ok(
            dir,
            &[
                "--jobs", jobs, "replicate", "--n", "200", "--reps", "50", "--seed", "4", "--methods", "ols,p2sls", "--out",
                "study.json",
            ],
        );
        let read = |f: &str| fs::read_to_string(dir.join(f)).unwrap();
        outputs.push((read("boot.json"), read("boot.csv"), read("study.json")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn manifest_replay_detects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate_point(dir, "200", "10");
    ok(
        dir,
        &["fit", "--method", "ols", "--data", "data.csv", "--roles", "data.roles.json", "--out", "fit.json"],
    );
    assert!(ok(dir, &["run", "--manifest", "fit.manifest.json"]).contains("all artifacts reproduced"));
    // a different dataset under the same name
    ok(dir, &["simulate", "--n", "200", "--seed", "11", "--out", "data.csv"]);
    let out = proximal(dir, &["run", "--manifest", "fit.manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.csv (input)"));
}
