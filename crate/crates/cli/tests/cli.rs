use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nij_core::sample::random_structure;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_nij-toolkit");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn monomial(c: f64, powers: &[u32]) -> Value {
    json!([{ "coef": c, "powers": powers }])
}

fn standard_j(dir: &Path) -> PathBuf {
    let z = [0, 0, 0, 0];
    let e: Value = json!([]);
    let j = json!([
        [e, monomial(-1.0, &z), e, e],
        [monomial(1.0, &z), e, e, e],
        [e, e, e, monomial(-1.0, &z)],
        [e, e, monomial(1.0, &z), e],
    ]);
    write(dir, "j0.json", &json!({ "dim": 4, "domain": { "min": [-1, -1, -1, -1], "max": [1, 1, 1, 1] }, "J": j }))
}

/// The web of the planes `x = 0`, `y = 0`, `y = x` and `y = F x` in `R^2 × R^2`.
fn graph_web(dir: &Path, name: &str, f: [[f64; 2]; 2]) -> PathBuf {
    let planes = json!([
        [[1, 0, 0, 0], [0, 1, 0, 0]],
        [[0, 0, 1, 0], [0, 0, 0, 1]],
        [[1, 0, 1, 0], [0, 1, 0, 1]],
        [[1, 0, f[0][0], f[1][0]], [0, 1, f[0][1], f[1][1]]],
    ]);
    write(dir, name, &json!({ "planes": planes }))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_on_the_standard_structure_is_integrable() {
    let dir = TempDir::new().unwrap();
    let j0 = standard_j(dir.path());
    let out = run(&["check", path(&j0), "--samples", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["command"], "check");
    assert_eq!(r["result"]["verdict"], "integrable");
    assert_eq!(r["result"]["points"], 40);
    assert_eq!(r["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn check_on_a_generic_structure_fails_the_verdict() {
    let dir = TempDir::new().unwrap();
    let s = random_structure(4, 2, &mut ChaCha8Rng::seed_from_u64(4));
    let p = write(dir.path(), "g.json", &s.to_json_value());
    let out = run(&["check", path(&p), "--grid", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["status"], "verdict-failure");
    assert_eq!(r["result"]["verdict"], "non-integrable");
}

#[test]
fn jetcount_reports_the_table() {
    let out = run(&["jetcount", "--n", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for n in ["36", "126", "336", "18", "108", "378"] {
        assert!(text.contains(n), "missing {n} in {text}");
    }
    let r: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(r["result"]["invariant_bound"], 4);
    assert!(!out.stderr.is_empty(), "table goes to stderr");
}

#[test]
fn real_spectrum_web_has_no_complex_structure() {
    let dir = TempDir::new().unwrap();
    let p = graph_web(dir.path(), "w.json", [[0.5, 0.0], [0.0, 1.0 / 3.0]]);
    let out = run(&["web", path(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["error"]["code"], "no-complex-structure");
    assert_eq!(r["result"], Value::Null);
}

#[test]
fn rotation_web_recovers_the_standard_structure() {
    let dir = TempDir::new().unwrap();
    let p = graph_web(dir.path(), "w.json", [[0.0, -1.0], [1.0, 0.0]]);
    let out = run(&["web", path(&p)]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["verified"], true);
    let j = &r["result"]["j"];
    let jn = &r["result"]["negated"];
    let expected = json!([[0.0, -1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0], [0.0, 0.0, 1.0, 0.0]]);
    let neg = json!([[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]]);
    assert!((j == &expected && jn == &neg) || (j == &neg && jn == &expected), "{j} {jn}");
}

#[test]
fn malformed_json_reports_line_and_column() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"dim\": 4,\n  \"domain\": ]").unwrap();
    let out = run(&["check", path(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["status"], "error");
    let msg = r["error"]["message"].as_str().unwrap();
    assert!(msg.contains("line 2"), "{msg}");
    assert!(msg.contains("column"), "{msg}");
}

#[test]
fn schema_violation_names_the_field() {
    let dir = TempDir::new().unwrap();
    let p = write(
        dir.path(),
        "bad.json",
        &json!({ "dim": 2, "domain": { "min": [-1, -1], "max": [1, 1] }, "J": [[[], [{ "coef": "x", "powers": [0, 0] }]], [[], []]] }),
    );
    let out = run(&["check", path(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let msg = report(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("J[0][1][0].coef"), "{msg}");
}

#[test]
fn structure_violating_j_squared_is_rejected() {
    let dir = TempDir::new().unwrap();
    let z = [0, 0];
    let p = write(
        dir.path(),
        "bad.json",
        &json!({ "dim": 2, "domain": { "min": [-1, -1], "max": [1, 1] }, "J": [[[], monomial(-2.0, &z)], [monomial(1.0, &z), []]] }),
    );
    let out = run(&["check", path(&p)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["status"], "error");
}

#[test]
fn missing_file_and_bad_tolerance_exit_one() {
    let out = run(&["check", "/nonexistent/structure.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out)["error"]["code"], "usage");

    let dir = TempDir::new().unwrap();
    let j0 = standard_j(dir.path());
    let out = run(&["check", path(&j0), "--tol-alg", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(report(&out)["error"]["message"].as_str().unwrap().contains("--tol-alg"));

    let out = run(&["check", path(&j0), "--grid", "2", "--samples", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn point_of_wrong_dimension_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let j0 = standard_j(dir.path());
    let out = run(&["classify", path(&j0), "--point", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["classify", path(&j0), "--point", "-0.1,0.2,0,0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["result"]["tag"], "ZERO");
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let s = random_structure(6, 2, &mut ChaCha8Rng::seed_from_u64(11));
    let p = write(dir.path(), "g.json", &s.to_json_value());
    let args = ["scan", path(&p), "--samples", "30", "--seed", "5"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let planes = ["quadric", "invariant-planes", path(&p), "--point", "0.1,-0.2,0.3,0,0.2,-0.1", "--samples", "20"];
    let a = Command::new(BIN).args(planes).env("NIJ_TOOLKIT_THREADS", "1").output().unwrap();
    let b = Command::new(BIN).args(planes).env("NIJ_TOOLKIT_THREADS", "3").output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_flag_writes_the_report_and_digest_tracks_inputs() {
    let dir = TempDir::new().unwrap();
    let j0 = standard_j(dir.path());
    let out_path = dir.path().join("report.json");
    let out = run(&["check", path(&j0), "--samples", "5", "--out", path(&out_path)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let digest = r["inputs_digest"].as_str().unwrap().to_string();
    assert_eq!(digest.len(), 64);

    std::fs::write(&j0, std::fs::read_to_string(&j0).unwrap() + " ").unwrap();
    let r2 = report(&run(&["check", path(&j0), "--samples", "5"]));
    assert_ne!(r2["inputs_digest"].as_str().unwrap(), digest);
    assert_eq!(r2["result"], r["result"]);
}

#[test]
fn generated_pencil_examples_verify() {
    let dir = TempDir::new().unwrap();
    let two = dir.path().join("two.json");
    let out = run(&["pencil", "generate", "--example", "two", "--seed", "2", "--structure-out", path(&two)]);
    assert_eq!(out.status.code(), Some(0));
    let generated = report(&out)["result"]["structure"].clone();
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(&two).unwrap()).unwrap();
    assert_eq!(on_disk["dim"], generated["dim"]);

    let out = run(&["pencil", "verify", path(&two), "--samples", "6"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["result"]["is_pencil"], true);

    let one = dir.path().join("one.json");
    run(&["pencil", "generate", "--example", "one", "--seed", "2", "--structure-out", path(&one)]);
    let out = run(&["pencil", "verify", path(&one), "--samples", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["result"]["is_pencil"], false);
}

#[test]
fn quadric_fit_through_sampled_planes() {
    let dir = TempDir::new().unwrap();
    let s = dir.path().join("dg2.json");
    run(&["pencil", "generate", "--example", "dg2-kernel", "--structure-out", path(&s)]);
    let point = "0.1,-0.2,0.3,0.05,-0.1,0.2";
    let out = run(&["quadric", "invariant-planes", path(&s), "--point", point, "--samples", "60"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["class"], "DG2");
    let planes = r["result"]["planes"].clone();
    assert!(planes.as_array().unwrap().len() >= 15);
    let pts = write(dir.path(), "pts.json", &json!({ "points": planes }));

    let fit = report(&run(&["quadric", "fit", path(&pts)]));
    assert!(fit["result"]["quadric"].is_object(), "{fit}");
    assert!(fit["result"]["max_residual"].as_f64().unwrap() < 1e-8);
    let nd = report(&run(&["quadric", "nondegeneracy", path(&pts)]));
    assert_eq!(nd["result"]["nondegenerate"], false);

    let out = run(&["quadric", "certificate", path(&s), "--point", point, "--planes", path(&pts)]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(report(&out)["result"]["verdict"], "CONTRADICTION");
}

#[test]
fn frame4_on_a_generic_structure() {
    let dir = TempDir::new().unwrap();
    let s = random_structure(4, 4, &mut ChaCha8Rng::seed_from_u64(21));
    let p = write(dir.path(), "g.json", &s.to_json_value());
    let out = run(&["frame4", path(&p), "--point", "0.1,-0.2,0.15,0.05"]);
    let r = report(&out);
    assert_eq!(out.status.code(), Some(0), "{r}");
    assert_eq!(r["result"]["frame_ok"], true);
    assert_eq!(r["result"]["structure_functions"].as_array().unwrap().len(), 6);

    let j0 = standard_j(dir.path());
    let out = run(&["frame4", path(&j0), "--point", "0,0,0,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["error"]["code"], "degenerate-input");
}

#[test]
fn nijenhuis_matches_its_oracle() {
    let dir = TempDir::new().unwrap();
    let s = random_structure(4, 3, &mut ChaCha8Rng::seed_from_u64(8));
    let p = write(dir.path(), "g.json", &s.to_json_value());
    let out = run(&["nijenhuis", path(&p), "--point", "0.2,0.1,-0.3,0.4"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["identities_ok"], true);
    assert!(r["result"]["oracle_max_difference"].as_f64().unwrap() < 1e-6);
    let bryant = report(&run(&["bryant", path(&p), "--point", "0.2,0.1,-0.3,0.4"]));
    assert_eq!(bryant["status"], "ok");
    assert_eq!(bryant["result"]["omega"].as_array().unwrap().len(), 4);
}
