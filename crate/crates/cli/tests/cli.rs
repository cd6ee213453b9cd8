use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const LDM22: &str = "ldm:2,2:(2,1),(-1,1),(0,-1)";

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milnorlab")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn describe_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    for (germ, file) in [("psi:3", "describe_psi3.json"), (LDM22, "describe_ldm22.json")] {
        let out = tmp.path().join(file);
        assert_eq!(run(&["describe", "--germ", germ], &out).status.code(), Some(0));
        assert_eq!(std::fs::read_to_string(out.join("describe.json")).unwrap(), golden(file), "{germ}");
    }
}

#[test]
fn describe_summary_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["describe", "--germ", "psi:3"], tmp.path());
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.starts_with("family psi, n=3, k=2"), "{line}");
    assert!(line.contains("oracle yes"));
}

#[test]
fn hyperbolicity_violation_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["describe", "--germ", "ldm:2,2:(1,1),(-1,-1)"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hyperbolicity"));
}

#[test]
fn inline_and_file_germs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let src = "map 3 -> 2 { u = x1; v = x2; }";
    let file = tmp.path().join("proj.germ");
    std::fs::write(&file, src).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["describe", "--germ", src], &a).status.code(), Some(0));
    assert_eq!(run(&["describe", "--germ", file.to_str().unwrap()], &b).status.code(), Some(0));
    let (ja, jb) = (json(&a.join("describe.json")), json(&b.join("describe.json")));
    assert_eq!(ja["source"], jb["source"]);
    assert_eq!(ja["n"], 3);
}

#[test]
fn format_filter_limits_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["flow", "--germ", LDM22, "--start", "0.1,0.05,0.02", "--format", "csv"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("flow_trace_0.csv").exists());
    assert!(!tmp.path().join("flow.json").exists());
}

#[test]
fn flow_trace_ends_on_the_sphere() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["flow", "--germ", LDM22, "--eps", "0.5", "--start", "0.1,0.05,0.02"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let r = json(&tmp.path().join("flow.json"));
    assert_eq!(r["kind"], "flow");
    let end: Vec<f64> = serde_json::from_value(r["traces"][0]["end"].clone()).unwrap();
    let norm = end.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 0.5).abs() < 1e-8);
    let csv = std::fs::read_to_string(tmp.path().join("flow_trace_0.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3,phi1,phi2,norm_x,norm_f\n"));
}

#[test]
fn lift_around_a_loop_returns_to_the_fibre() {
    let tmp = tempfile::tempdir().unwrap();
    // f = (x1, x2): lifts are translations and close up after a full loop.
    let o = run(
        &[
            "lift",
            "--germ",
            "catalog:projection",
            "--curve",
            "circle:0.1,0;0.05",
            "--start",
            "0.15,0,0.3",
            "--metric",
            "diag:1,2,3",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("lift.json"));
    assert!(r["max_projection_error"].as_f64().unwrap() <= 1e-6);
    let end: Vec<f64> = serde_json::from_value(r["lifts"][0]["end"].clone()).unwrap();
    for (a, b) in end.iter().zip([0.15, 0.0, 0.3]) {
        assert!((a - b).abs() < 1e-6, "{end:?}");
    }
    assert!(tmp.path().join("lift_0.csv").exists());
}

#[test]
fn lift_off_the_fibre_is_inconclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["lift", "--germ", "catalog:projection", "--curve", "constant:0,0", "--start", "0.1,0,0"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fiber_of_the_projection_is_a_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["fiber", "--germ", "catalog:projection", "--target", "0.1,0.2", "--seeds", "200"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let r = json(&tmp.path().join("fiber.json"));
    assert_eq!(r["components"], 1);
    let csv = std::fs::read_to_string(tmp.path().join("fiber_cloud.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let x: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((x[0] - 0.1).abs() < 1e-9 && (x[1] - 0.2).abs() < 1e-9);
    }
}

#[test]
fn psi_discriminant_exports_figure_markers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["discriminant", "--germ", "psi:3", "--budget", "quick"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let svg = std::fs::read_to_string(tmp.path().join("discriminant.svg")).unwrap();
    assert!(svg.contains("(e^-1, e^-1/3)") && svg.contains("(0, e^-1/4)"));
    let r = json(&tmp.path().join("discriminant.json"));
    assert_eq!(r["radius_identity"]["exponent_discrepancy"], true);
    assert!(r["comparison"]["max_distance"].as_f64().unwrap() <= 1e-5 * r["config"]["delta"].as_f64().unwrap());
}

#[test]
fn missing_germ_and_bad_points_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["describe"], tmp.path()).status.code(), Some(2));
    let o = run(&["flow", "--germ", LDM22, "--start", "0.1,0.2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["check", "dhreg", "--germ", LDM22], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
