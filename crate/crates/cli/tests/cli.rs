use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"{"n_instruments": 3, "n_exposures": 3,
  "edges": [[true, false, false], [false, true, true], [false, false, true]],
  "delta4_fixed": 1.0}"#;

fn ovmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovmr")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn setup(dir: &Path, overlap: f64) {
    fs::write(dir.join("spec.json"), SPEC).unwrap();
    let cfg = format!(r#"{{"design": {{"overlap_rate": {overlap}, "study_size": 120}}, "population": {{"population_size": 300}}}}"#);
    fs::write(dir.join("sim.json"), cfg).unwrap();
    let out = ovmr(&["simulate", "--config", p(&dir.join("sim.json")), "--seed", "7", "--out", p(&dir.join("d"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_without_data_is_a_usage_error() {
    let out = ovmr(&["fit", "--spec", "s.json", "--seed", "1", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_and_missing_seed_are_usage_errors() {
    assert_eq!(ovmr(&["simulate", "--config", "c.json", "--out", "d"]).status.code(), Some(1));
    assert_eq!(ovmr(&["classic", "--spec", "s.json", "--out", "e.csv", "--bogus"]).status.code(), Some(1));
    assert_eq!(ovmr(&["experiment", "--grid", "g.json", "--out", "r.csv"]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = ovmr(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SPEC).unwrap();
    let out = ovmr(&[
        "fit",
        "--data",
        p(&dir.path().join("absent.csv")),
        "--spec",
        p(&dir.path().join("spec.json")),
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("draws.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn simulate_writes_three_studies() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), 0.5);
    let lines = |n: &str| fs::read_to_string(dir.path().join("d").join(n)).unwrap().lines().count();
    assert_eq!((lines("A.csv"), lines("B.csv"), lines("C.csv")), (61, 61, 61));
    let header = fs::read_to_string(dir.path().join("d/A.csv")).unwrap();
    assert!(header.starts_with("z1,z2,z3,x1,x2,x3,y\n"));
}

#[test]
fn simulate_fit_and_classic_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, 0.5);
    let fit = |out: &str| {
        ovmr(&[
            "fit",
            "--data",
            p(&d.join("d/A.csv")),
            "--data",
            p(&d.join("d/B.csv")),
            "--data",
            p(&d.join("d/C.csv")),
            "--spec",
            p(&d.join("spec.json")),
            "--iters",
            "200",
            "--warmup",
            "100",
            "--seed",
            "3",
            "--out",
            p(&d.join(out)),
            "--summary",
            p(&d.join("summary.csv")),
        ])
    };
    let out = fit("draws.csv");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let draws = fs::read_to_string(d.join("draws.csv")).unwrap();
    let header = draws.lines().next().unwrap();
    assert_eq!(
        header,
        "iteration,beta1,beta2,beta3,alpha1,alpha2,alpha3,alpha4,delta1,delta2,delta3,\
         omega1,omega2,omega3,omegaY,sigma1,sigma2,sigma3,sigmaY"
    );
    assert_eq!(draws.lines().count(), 201);
    let summary = fs::read_to_string(d.join("summary.csv")).unwrap();
    assert!(summary.starts_with("param,mean,sd,ci_low,ci_high\nbeta1,"));

    assert!(fit("again.csv").status.success());
    assert_eq!(draws, fs::read_to_string(d.join("again.csv")).unwrap());

    let out = ovmr(&[
        "classic",
        "--a",
        p(&d.join("d/A.csv")),
        "--b",
        p(&d.join("d/B.csv")),
        "--c",
        p(&d.join("d/C.csv")),
        "--spec",
        p(&d.join("spec.json")),
        "--out",
        p(&d.join("est.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = fs::read_to_string(d.join("est.csv")).unwrap();
    assert_eq!(est.lines().count(), 4);
    assert!(est.lines().nth(1).unwrap().starts_with("beta1,IVW,"));
}

#[test]
fn one_sample_classic_uses_2sls() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, 1.0);
    let out = ovmr(&[
        "classic",
        "--a",
        p(&d.join("d/A.csv")),
        "--spec",
        p(&d.join("spec.json")),
        "--out",
        p(&d.join("est.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(d.join("est.csv")).unwrap().contains("beta2,TSLS,"));
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let grid = r#"{"overlap_rates": [0.5], "alpha_levels": [0.5], "delta_levels": [1.0],
        "beta_levels": [0.0], "chain": {"n_iterations": 100, "n_warmup": 50}}"#;
    fs::write(d.join("grid.json"), grid).unwrap();
    let run = |name: &str| {
        let out = ovmr(&[
            "experiment",
            "--grid",
            p(&d.join("grid.json")),
            "--out",
            p(&d.join(name)),
            "--seed",
            "5",
            "--replicates",
            "3",
            "--jobs",
            "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(d.join(name)).unwrap()
    };
    let first = run("r1.csv");
    assert_eq!(first, run("r2.csv"));
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "overlap,alpha,delta,beta_true,method,param,mean,sd,coverage,power,n_failed");
    assert_eq!(lines.len(), 7);
}
