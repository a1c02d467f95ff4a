use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fggm::io::read_matrix_csv;
use fggm_cli::config::{DatasetConfig, Layout};
use fggm_cli::ingest::ingest_dataset;
use serde_json::Value;

fn fggm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fggm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small(out: &Path) -> Vec<String> {
    vec![
        "--seed".into(),
        "11".into(),
        "--out".into(),
        out.display().to_string(),
        "--set".into(),
        "generator.p=30".into(),
        "--set".into(),
        "generator.l=15".into(),
        "--set".into(),
        "generator.n=60".into(),
    ]
}

fn run(cmd: &str, args: &[String]) -> Output {
    let mut all = vec![cmd];
    all.extend(args.iter().map(String::as_str));
    fggm(&all)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_set_a_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = fggm(&["simulate", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = json(&out.join("simulation.json"));
    assert_eq!(meta["decay_coef"], 3.0);
    assert_eq!(meta["decay_exp"], 1.8);
    assert_eq!(meta["l"], 101);
    assert_eq!(meta["p"], 200);
    assert_eq!(meta["q"], 10);
    assert_eq!(meta["decay_constants"].as_array().unwrap().len(), 101);
    assert_eq!(meta["graph_edges"].as_array().unwrap().len(), 13);
    assert_eq!(
        fs::read_to_string(out.join("data.csv")).unwrap().lines().count(),
        1 + 100 * 10 * 200
    );
    assert_eq!(
        fs::read_dir(out.join("truth"))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("sigma_")
            })
            .count(),
        101
    );
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn simulate_matern() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = fggm(&[
        "simulate",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "generator.kind=matern",
        "--set",
        "generator.p=40",
        "--set",
        "generator.n=20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = json(&out.join("simulation.json"));
    assert_eq!(meta["nu"], 0.5);
    assert_eq!(meta["stitched"], true);
    assert!(meta["note"].as_str().unwrap().contains("diagonal"));
    let stitching = &meta["stitching"];
    let tol = stitching["precision_rtol"].as_f64().unwrap() * stitching["precision_scale"].as_f64().unwrap();
    assert!(stitching["max_noned_precision"].as_f64().unwrap() <= tol);
    let c: fggm::Matrix = read_matrix_csv(&out.join("truth/covariance.csv")).unwrap();
    assert_eq!(c.shape(), (400, 400));
}

#[test]
fn zero_replicates_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z");
    let o = fggm(&[
        "simulate",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "generator.n=0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generator.n"));
    assert!(!out.exists());
}

#[test]
fn missing_seed_and_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert_eq!(
        fggm(&["simulate", "--out", out.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        fggm(&["fit", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn fit_outputs_and_graph_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let args = small(&out);
    assert!(run("simulate", &args).status.success());
    let o = run("fit", &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("covsel") && stdout.contains("m="));
    let meta = json(&out.join("estimates/covsel/metadata.json"));
    let m = meta["m"].as_u64().unwrap() as usize;
    for l in 1..=m {
        assert!(out.join(format!("estimates/covsel/sigma_{l:03}.csv")).is_file());
    }
    assert!(out
        .join("estimates/stitch/residual_001_eigenvalues.csv")
        .is_file());
    assert_eq!(json(&out.join("estimates/stitch/metadata.json"))["v"], 0.75);

    let graph = dir.path().join("g.txt");
    fs::write(&graph, "1 2\n2 12\n").unwrap();
    let mut bad = args.clone();
    bad.extend(["--set".into(), format!("graph={}", graph.display())]);
    let o = run("fit", &bad);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("12"));
}

#[test]
fn too_few_replicates_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n");
    let mut args = small(&out);
    args.extend([
        "--set".into(),
        "generator.n=5".into(),
        "--set".into(),
        "estimators=[\"covsel\"]".into(),
    ]);
    assert!(run("simulate", &args).status.success());
    let o = run("fit", &args);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("basis function 1") && err.contains("variance fraction"),
        "{err}"
    );
}

#[test]
fn evaluate_truth_against_itself_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let args = small(&out);
    assert!(run("pipeline", &args).status.success());
    let table = fs::read_to_string(out.join("evaluation/edge_kl.csv")).unwrap();
    assert_eq!(table.lines().count(), 14);
    assert_eq!(
        table.lines().next(),
        Some("edge_i,edge_j,unconstrained,covsel,stitch")
    );
    for name in ["truth", "unconstrained", "covsel", "stitch"] {
        let block: fggm::Matrix =
            read_matrix_csv(&out.join(format!("evaluation/heatmaps/{name}_block_1_1.csv"))).unwrap();
        assert_eq!(block.shape(), (30, 30));
        assert!(out
            .join(format!("evaluation/heatmaps/{name}_block_1_1.json"))
            .is_file());
    }

    let mut self_args = args.clone();
    self_args.extend([
        "--set".into(),
        format!(
            "evaluate.estimates=[{:?}]",
            out.join("truth").display().to_string()
        ),
        "--set".into(),
        format!("out={:?}", dir.path().join("self").display().to_string()),
        "--set".into(),
        format!("evaluate.truth={:?}", out.join("truth").display().to_string()),
    ]);
    // --out on the command line wins over --set out=..., so drop it
    let pos = self_args.iter().position(|a| a == "--out").unwrap();
    self_args.drain(pos..pos + 2);
    let o = run("evaluate", &self_args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("self/evaluation/edge_kl.csv")).unwrap();
    for line in table.lines().skip(1) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((v - 30.0).abs() < 1e-6, "{line}");
    }
}

#[test]
fn dataset_round_trip_and_ingest_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let args = small(&out);
    assert!(run("simulate", &args).status.success());
    let cfg = DatasetConfig {
        path: out.join("data.csv"),
        layout: Layout::default(),
        center: false,
        bin_width: None,
    };
    let (data, summary) = ingest_dataset(&cfg).unwrap();
    assert_eq!((summary.n_reps, summary.n_vars, summary.p), (60, 10, 30));
    assert!(!summary.rescaled);
    // regenerate the same dataset in-process
    let spec = fggm::PartialSeparableSpec {
        graph: fggm::Graph::simulation_graph(),
        l_max: 15,
        grid: fggm::Grid::midpoints(30),
        decay_coef: 3.0,
        decay_exp: 1.8,
        seed: 11,
    };
    let (_, truth) = fggm::build_ps_covariance(&spec).unwrap();
    let direct = fggm::sample_partial_separable(&truth, 60, 11).unwrap();
    for j in 0..10 {
        assert!((data.variable(j) - direct.variable(j)).amax() <= 1e-15);
    }
    let o = fggm(&[
        "ingest-check",
        "--set",
        &format!("dataset.path={:?}", cfg.path.display().to_string()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["n_reps"], 60);
}

#[test]
fn train_test_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let mut args = small(&out);
    assert!(run("simulate", &args).status.success());
    args.extend([
        "--set".into(),
        "evaluate.mode=train_test".into(),
        "--set".into(),
        "estimators=[\"unconstrained\",\"covsel\"]".into(),
    ]);
    let o = run("evaluate", &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("evaluation/train_test_kl.csv")).unwrap();
    assert_eq!(table.lines().count(), 14);
    let meta = json(&out.join("evaluation/evaluation.json"));
    assert_eq!(meta["train_replicates"].as_array().unwrap().len(), 30);
}

#[test]
fn manifest_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let args = small(&out);
    assert!(run("simulate", &args).status.success());
    let manifest = json(&out.join("manifest.json"));
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "data.csv"));
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
    assert!(manifest["config"]["out"].is_null());
    assert_eq!(manifest["config"]["seed"], 11);
}
