//! Command-line contract: exit codes, usage errors, CSV shape, and the
//! headline sweep behavior on a single-integrator scenario.

use std::path::{Path, PathBuf};
use std::process::Output;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_mcmp"))
        .args(args)
        .output()
        .expect("mcmp binary runs")
}

fn write_scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mcmp-cli-tests");
    std::fs::create_dir_all(&dir).expect("scratch dir");
    let path = dir.join(name);
    std::fs::write(&path, contents).expect("scratch file");
    path
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["estimate", "--scenario", "x.json", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "stderr should carry usage text, got:\n{stderr}");
}

#[test]
fn missing_required_argument_is_a_usage_error() {
    let out = run(&["estimate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unparseable_scenario_exits_3() {
    let path = write_scratch("broken.json", "{ not json");
    let out = run(&["estimate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_scenario_field_exits_3() {
    let base = std::fs::read_to_string(scenario_path("si2d_corridor")).expect("scenario");
    let bad = base.replace("\"dt\": 0.09", "\"dt\": -0.09");
    assert_ne!(base, bad);
    let path = write_scratch("bad_dt.json", &bad);
    let out = run(&["plan", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn sealed_corridor_plan_exits_4() {
    let base = std::fs::read_to_string(scenario_path("si2d_corridor")).expect("scenario");
    // Stretch the slabs until they overlap: no gap at any inflation.
    let sealed = base.replace("5.25", "4.0").replace("4.45", "6.0").replace(
        "\"samples\": 2000",
        "\"samples\": 400",
    );
    let path = write_scratch("sealed.json", &sealed);
    let out = run(&[
        "plan",
        "--scenario",
        path.to_str().unwrap(),
        "--bisection-steps",
        "3",
        "--max-particles",
        "500",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("plan json");
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn estimate_emits_the_documented_csv() {
    let scenario = scenario_path("si2d_corridor");
    let out = run(&[
        "estimate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--method",
        "all",
        "--particles",
        "1000",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).expect("utf8");
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("method,waypoints,particles,p_hat,std_err,wall_ms"));
    let methods: Vec<&str> =
        lines.map(|l| l.split(',').next().expect("method field")).collect();
    assert_eq!(methods, ["vr", "simple", "additive", "multiplicative"]);
    for line in stdout.lines().skip(1) {
        assert_eq!(line.split(',').count(), 6, "row has 6 fields: {line}");
    }
}

#[test]
fn sweep_separates_approximations_from_monte_carlo() {
    let scenario = scenario_path("si2d_corridor");
    let out = run(&[
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--waypoints",
        "25,100,400,1600",
        "--particles",
        "4000",
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).expect("utf8");
    let column = |method: &str| -> Vec<f64> {
        stdout
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(method))
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect()
    };
    let additive = column("additive");
    assert_eq!(additive.len(), 4);
    for k in 1..4 {
        assert!(additive[k] > additive[k - 1], "additive should grow with waypoint count");
    }
    assert!(additive[3] > 1.0, "additive exceeds any probability at fine discretization");
    // Coarse discretizations miss a little between-step collision mass, so
    // vr creeps up slightly with the count; the contrast is that additive
    // grows 50x while vr stays near the ~1% it reported at low resolution.
    let vr = column("vr");
    let lo = vr.iter().cloned().fold(f64::MAX, f64::min);
    let hi = vr.iter().cloned().fold(f64::MIN, f64::max);
    assert!(hi / lo < 1.5, "vr should not diverge with waypoint count: {vr:?}");
    assert!(vr.iter().all(|p| (0.005..0.02).contains(p)), "vr stays near 1%: {vr:?}");
}
