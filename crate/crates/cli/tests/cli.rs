use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conformetric"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn conformetric")
}

fn report(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn collinear(dir: &Path) -> String {
    let path = dir.join("line.csv");
    fs::write(&path, "0\n1\n2.5\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn estimate_full_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let input = collinear(dir.path());
    let rep = report(&run(&["estimate", "--input", &input, "--r", "10", "--pairs", "all"]));
    assert_eq!(
        rep["matrix"],
        json!([[0.0, 1.0, 2.5], [1.0, 0.0, 1.5], [2.5, 1.5, 0.0]])
    );
    assert_eq!(rep["params"]["rule"], "manual");
    assert_eq!(rep["params"]["q"], 2);
}

#[test]
fn disconnected_pairs_are_inf_strings() {
    let dir = tempfile::tempdir().unwrap();
    let input = collinear(dir.path());
    let rep = report(&run(&[
        "estimate", "--input", &input, "--r", "0.5", "--q", "inf", "--pairs", "all",
    ]));
    assert_eq!(rep["estimates"], json!(["inf", "inf", "inf"]));
    assert_eq!(rep["params"]["q"], "inf");
}

#[test]
fn pair_file_and_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = collinear(dir.path());
    let pairs = dir.path().join("pairs.csv");
    fs::write(&pairs, "2,0\n").unwrap();
    let out = dir.path().join("rep.json");
    let status = run(&[
        "estimate",
        "--input",
        &input,
        "--k",
        "1",
        "--pairs",
        pairs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let rep: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(rep["estimates"], json!([2.5]));
}

#[test]
fn circle_knn_default_accuracy() {
    let rep = report(&run(&[
        "estimate",
        "--domain",
        "circle",
        "--n",
        "2000",
        "--factor",
        r#"{"kind":"radial_affine","base":2,"axis":0,"slope":1,"f_min":1}"#,
        "--rule",
        "knn_default",
        "--pairs",
        "random:400",
        "--seed",
        "3",
    ]));
    let ell = rep["ell_inf"].as_f64().unwrap();
    let l = rep["l_inf"].as_f64().unwrap();
    assert!(ell < 0.01 && l < 0.01, "ell {ell}, l {l}");
    assert_eq!(rep["params"]["rule"], "knn_default");
    assert_eq!(rep["params"]["kind"]["knn"], 124);
}

#[test]
fn estimate_is_byte_identical() {
    let args = [
        "estimate",
        "--domain",
        "square",
        "--n",
        "500",
        "--seed",
        "11",
        "--pairs",
        "random:200",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(
        run(&["estimate", "--input", "/nonexistent/x.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--domain", "torus"]).status.code(), Some(1));
    assert_eq!(
        run(&["estimate", "--domain", "square", "--q", "3"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["estimate", "--domain", "square", "--q", "1", "--r", "0.1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["carved-cube", "--eps", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0,0\n1\n").unwrap();
    let out = run(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn selftest_pass_fail_and_determinism() {
    let a = run(&["selftest", "--seed", "4"]);
    let b = run(&["selftest", "--seed", "4"]);
    assert_eq!(report(&a)["passed"], json!(true));
    assert_eq!(a.stdout, b.stdout);
    let bad = run(&["selftest", "--inject-weight-asymmetry"]);
    assert_eq!(bad.status.code(), Some(3));
    let rep: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(rep["passed"], json!(false));
}

#[test]
fn graph_equiv_vacuous_bound_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let rep = report(&run(&[
        "graph-equiv",
        "--n",
        "300",
        "--k",
        "1",
        "--eps",
        "0.9",
        "--trials",
        "4",
        "--dump-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert_eq!(rep["vacuous"], json!(true));
    assert!(rep["predicted_min_frequency"].as_f64().unwrap() < 0.0);
    for name in ["ball_minus", "knn", "ball_plus"] {
        assert!(dir.path().join(format!("{name}.jsonl")).exists());
    }
}

#[test]
fn convergence_single_point_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.dat");
    let rep = report(&run(&[
        "convergence",
        "--domain",
        "square",
        "--n-grid",
        "300",
        "--trials",
        "2",
        "--pair-budget",
        "100",
        "--table",
        table.to_str().unwrap(),
    ]));
    assert_eq!(rep["fit"], Value::Null);
    assert_eq!(rep["points"][0]["ell_inf"].as_array().unwrap().len(), 2);
    let text = fs::read_to_string(table).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("300 "));

    assert_eq!(
        run(&["convergence", "--domain", "square", "--n-grid", "300,200"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn carved_cube_and_hausdorff() {
    let rep = report(&run(&["carved-cube", "--samples", "100000"]));
    let fx = &rep["fixture"];
    assert!((fx["distortion"].as_f64().unwrap() - 0.0016714).abs() < 1e-7);
    assert_eq!(rep["tv_bound_holds"], json!(true));

    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.csv");
    let rep = report(&run(&[
        "hausdorff",
        "--n-grid",
        "200",
        "--trials",
        "10",
        "--export-net",
        net.to_str().unwrap(),
    ]));
    assert_eq!(rep["all_within_bounds"], json!(true));
    assert_eq!(fs::read_to_string(net).unwrap().lines().count(), 10_000);
}

#[test]
fn factor_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = collinear(dir.path());
    let factor = dir.path().join("f.json");
    fs::write(&factor, r#"{"kind":"constant","value":2}"#).unwrap();
    let rep = report(&run(&[
        "estimate",
        "--input",
        &input,
        "--r",
        "10",
        "--pairs",
        "all",
        "--factor",
        factor.to_str().unwrap(),
    ]));
    assert_eq!(rep["estimates"], json!([2.0, 5.0, 3.0]));
}
