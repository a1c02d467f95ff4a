//! Subcommand implementations. Every command writes only inside its output
//! directory and finishes by rewriting `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use fggm::eval::{marginal_errors_csv, MarginalError};
use fggm::io::{load_estimate, read_matrix_csv, save_estimate, write_dataset_csv, write_matrix_csv};
use fggm::linalg::spd_inverse;
use fggm::simgen::{decay_constants, stream_rng, Stream, MATERN_DIAGONAL_NOTE};
use fggm::{
    assemble_full, build_matern_covariance, build_ps_covariance, covsel_ips, edge_kl_table, export_heatmap,
    extract_block, fit_fggm_covsel, fit_fggm_stitch, fit_unconstrained, load_graph, marginal_error_report,
    sample_dataset, sample_partial_separable, BlockSpec, CovSelOptions, Dataset, EdgeKlTable, Estimate,
    EstimatorKind, FitOptions, Graph, Grid, MaternSpec, Matrix, PartialSeparableSpec, SpdMatrix,
};
use rand::seq::SliceRandom;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{EvalMode, GeneratorConfig, RunConfig, BUILTIN_GRAPH};
use crate::error::{io_err, CliError, Context, Result};
use crate::ingest::ingest_dataset;

pub const DATA_FILE: &str = "data.csv";
pub const GRAPH_FILE: &str = "graph.txt";
pub const TRUTH_DIR: &str = "truth";
pub const DENSE_TRUTH_FILE: &str = "covariance.csv";
pub const ESTIMATES_DIR: &str = "estimates";
pub const EVALUATION_DIR: &str = "evaluation";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Graph named by the config, on `q` nodes.
pub fn resolve_graph(cfg: &RunConfig, q: usize) -> Result<Graph> {
    if cfg.graph == BUILTIN_GRAPH {
        let g = Graph::simulation_graph();
        if g.node_count() != q {
            return Err(CliError::Config(format!(
                "graph {BUILTIN_GRAPH} has {} nodes but the data have {q} variables",
                g.node_count()
            )));
        }
        return Ok(g);
    }
    let path = Path::new(&cfg.graph);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    load_graph(&text, q).context(format!("graph {}", path.display()))
}

fn covsel_options(cfg: &RunConfig) -> CovSelOptions<f64> {
    CovSelOptions {
        tol: cfg.covsel.tol,
        precision_tol: cfg.covsel.precision_tol,
        max_iter: cfg.covsel.max_iter,
        record_objective: false,
    }
}

// ---------------------------------------------------------------- simulate

/// Generates a dataset and its truth under `<out>`.
/// Largest absolute entry over the inverses of the diagonal blocks. The
/// attainable non-edge precision residual scales with it.
fn precision_scale(c: &Matrix, q: usize, p: usize) -> fggm::Result<f64> {
    (0..q).try_fold(0.0f64, |acc, j| {
        Ok(acc.max(spd_inverse(&extract_block(c, j, j, p)?)?.amax()))
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed("simulate")?;
    let out = cfg.require_out()?;
    let q = cfg.generator.q();
    let g = resolve_graph(cfg, q)?;
    create_dir(out)?;
    let truth_dir = out.join(TRUTH_DIR);
    let (data, meta) = match &cfg.generator {
        GeneratorConfig::PartialSeparable {
            n,
            p,
            l,
            decay_coef,
            decay_exp,
            ..
        } => {
            let spec = PartialSeparableSpec {
                graph: g.clone(),
                l_max: *l,
                grid: Grid::midpoints(*p),
                decay_coef: *decay_coef,
                decay_exp: *decay_exp,
                seed,
            };
            let (_, truth) = build_ps_covariance(&spec).context("partial separable truth")?;
            let data = sample_partial_separable(&truth, *n, seed).context("sampling")?;
            save_estimate(&truth_dir, &truth.as_estimate()).context("writing truth")?;
            let meta = json!({
                "generator": "partial_separable",
                "seed": seed,
                "q": q,
                "n": n,
                "p": p,
                "l": l,
                "grid": "midpoints (k - 1/2) / p",
                "decay_coef": decay_coef,
                "decay_exp": decay_exp,
                "decay_constants": decay_constants(*l, *decay_coef, *decay_exp),
                "truth_format": "factored",
            });
            (data, meta)
        }
        GeneratorConfig::Matern {
            n,
            p,
            stitch,
            stitch_precision_rtol,
            ..
        } => {
            let grid = Grid::midpoints(*p);
            let spec = MaternSpec::simulation(q, grid.clone(), seed);
            let raw = build_matern_covariance(&spec).context("Matérn covariance")?;
            let (truth, stitch_meta) = if *stitch {
                let scale = precision_scale(&raw, q, *p).context("Matérn covariance")?;
                let opts = CovSelOptions {
                    precision_tol: *stitch_precision_rtol * scale,
                    ..covsel_options(cfg)
                };
                let a = SpdMatrix::symmetrized(raw).context("Matérn covariance")?;
                let r = covsel_ips(&a, &g, &BlockSpec::uniform(q, *p), &opts).context("stitching")?;
                let m = json!({
                    "iterations": r.iterations,
                    "max_edge_residual": r.max_edge_residual,
                    "max_noned_precision": r.max_noned_precision,
                    "precision_rtol": stitch_precision_rtol,
                    "precision_scale": scale,
                });
                (r.selected.into_inner(), m)
            } else {
                (raw, Value::Null)
            };
            let data = sample_dataset(&truth, *n, &grid, q, seed).context("sampling")?;
            create_dir(&truth_dir)?;
            write_matrix_csv(&truth_dir.join(DENSE_TRUTH_FILE), &truth).context("writing truth")?;
            let cross: Vec<Vec<f64>> = (0..q)
                .map(|i| {
                    (0..q)
                        .map(|j| {
                            if i == j {
                                spec.sigma_marg[i]
                            } else {
                                spec.cross_sigma(i, j)
                            }
                        })
                        .collect()
                })
                .collect();
            let meta = json!({
                "generator": "matern",
                "seed": seed,
                "q": q,
                "n": n,
                "p": p,
                "grid": "midpoints (k - 1/2) / p",
                "nu": spec.nu,
                "delta_a": spec.delta_a,
                "dim": spec.dim,
                "correlation_function": "exp(-h / phi)",
                "sigma_marg": spec.sigma_marg,
                "phi_marg": spec.phi_marg,
                "correlation": rows(&spec.correlation),
                "sigma_cross": cross,
                "note": MATERN_DIAGONAL_NOTE,
                "stitched": stitch,
                "stitching": stitch_meta,
                "truth_format": "dense",
            });
            (data, meta)
        }
    };
    write_dataset_csv(&out.join(DATA_FILE), &data).context("writing dataset")?;
    fs::write(out.join(GRAPH_FILE), g.to_edge_list()).map_err(io_err(&out.join(GRAPH_FILE)))?;
    let mut meta = meta;
    meta["rng"] = json!(
        "ChaCha20, seed_from_u64(seed), stream 1 precisions, 2 samples, 3 marginal parameters, 4 correlation"
    );
    meta["graph_edges"] = json!(g.edges().map(|(i, j)| [i + 1, j + 1]).collect::<Vec<_>>());
    write_json(&out.join("simulation.json"), &meta)?;
    println!(
        "simulated {} replicates of {} variables on {} grid points",
        data.n_reps(),
        q,
        data.p()
    );
    write_manifest(cfg, "simulate", out)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

// --------------------------------------------------------------------- fit

fn load_input(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(d) => Ok(ingest_dataset(d)?.0),
        None => {
            let path = cfg.require_out()?.join(DATA_FILE);
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "no dataset configured and {} does not exist",
                    path.display()
                )));
            }
            let d = crate::config::DatasetConfig {
                path,
                layout: Default::default(),
                center: false,
                bin_width: None,
            };
            Ok(ingest_dataset(&d)?.0)
        }
    }
}

/// Runs one estimator.
pub fn fit_one(cfg: &RunConfig, kind: EstimatorKind, data: &Dataset, g: &Graph) -> Result<Estimate> {
    let opts = FitOptions {
        covsel: covsel_options(cfg),
    };
    let what = format!("{} estimator", kind.name());
    match kind {
        EstimatorKind::Unconstrained => fit_unconstrained(data, cfg.v).context(what),
        EstimatorKind::Covsel => fit_fggm_covsel(data, g, cfg.v, &opts).context(what),
        EstimatorKind::Stitch => {
            fit_fggm_stitch(data, g, cfg.stitch_v, cfg.stitch_v_prime, &opts).context(what)
        }
        EstimatorKind::Truth => Err(CliError::Config("\"truth\" is not an estimator".into())),
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    estimator: EstimatorKind,
    m: usize,
    m_prime: Option<usize>,
    v: Option<f64>,
    v_prime: Option<f64>,
    max_iterations: usize,
    max_edge_residual: f64,
    max_noned_precision: f64,
}

/// Fits every configured estimator and saves each under
/// `<out>/estimates/<name>`.
pub fn fit(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let data = load_input(cfg)?;
    let g = resolve_graph(cfg, data.n_vars())?;
    create_dir(&out.join(ESTIMATES_DIR))?;
    let mut summaries = Vec::new();
    for &kind in &cfg.estimators {
        let est = fit_one(cfg, kind, &data, &g)?;
        save_estimate(&out.join(ESTIMATES_DIR).join(kind.name()), &est).context("writing estimate")?;
        let s = FitSummary {
            estimator: kind,
            m: est.m(),
            m_prime: est.residual.as_ref().map(|r| r.m_prime()),
            v: est.v,
            v_prime: est.v_prime,
            max_iterations: est.diagnostics.iter().map(|d| d.iterations).max().unwrap_or(0),
            max_edge_residual: est
                .diagnostics
                .iter()
                .map(|d| d.max_edge_residual)
                .fold(0.0, f64::max),
            max_noned_precision: est
                .diagnostics
                .iter()
                .map(|d| d.max_noned_precision)
                .fold(0.0, f64::max),
        };
        println!(
            "{:<13} m={:<3} m'={:<3} iterations<={} edge residual {:.2e} non-edge precision {:.2e}",
            kind.name(),
            s.m,
            s.m_prime.map_or("-".into(), |x| x.to_string()),
            s.max_iterations,
            s.max_edge_residual,
            s.max_noned_precision
        );
        summaries.push(s);
    }
    write_json(&out.join("fit_summary.json"), &summaries)?;
    write_manifest(cfg, "fit", out)
}

// ---------------------------------------------------------------- evaluate

/// Dense truth from a truth directory (dense CSV or factored estimate).
pub fn load_truth(dir: &Path) -> Result<Matrix> {
    let dense = dir.join(DENSE_TRUTH_FILE);
    if dense.is_file() {
        return read_matrix_csv(&dense).context(format!("truth {}", dense.display()));
    }
    if !dir.join("metadata.json").is_file() {
        return Err(CliError::Config(format!(
            "truth directory {} has no covariance",
            dir.display()
        )));
    }
    let est: Estimate = load_estimate(dir).context(format!("truth {}", dir.display()))?;
    Ok(assemble_full(&est))
}

fn estimate_dirs(cfg: &RunConfig, out: &Path) -> Vec<PathBuf> {
    if cfg.evaluate.estimates.is_empty() {
        cfg.estimators
            .iter()
            .map(|k| out.join(ESTIMATES_DIR).join(k.name()))
            .collect()
    } else {
        cfg.evaluate.estimates.clone()
    }
}

fn estimate_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Writes the KL table, marginal errors and heatmaps for estimates against
/// the truth, or the train/test comparison.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    match cfg.evaluate.mode {
        EvalMode::Truth => evaluate_truth(cfg),
        EvalMode::TrainTest => evaluate_train_test(cfg),
    }
}

const KL_NOTE: &str =
    "KL(B||A) = (tr(A^-1 B) - log(|A|/|B|)) / 2 on joint 2p x 2p edge blocks; equal blocks give p";

fn evaluate_truth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let truth_dir = cfg.evaluate.truth.clone().unwrap_or_else(|| out.join(TRUTH_DIR));
    let truth = load_truth(&truth_dir)?;
    let mut estimates = Vec::new();
    let mut p = None;
    for dir in estimate_dirs(cfg, out) {
        if !dir.join("metadata.json").is_file() {
            return Err(CliError::Config(format!(
                "missing estimate directory {}",
                dir.display()
            )));
        }
        let est: Estimate = load_estimate(&dir).context(format!("estimate {}", dir.display()))?;
        p = Some(est.p());
        estimates.push((estimate_name(&dir), assemble_full(&est)));
    }
    let p = p.ok_or_else(|| CliError::Config("no estimates to evaluate".into()))?;
    if truth.nrows() % p != 0 {
        return Err(CliError::Config(format!(
            "truth dimension {} is not a multiple of p = {p}",
            truth.nrows()
        )));
    }
    let q = truth.nrows() / p;
    let g = resolve_graph(cfg, q)?;
    let table = edge_kl_table(&truth, &estimates, &g, p, cfg.evaluate.kl_ridge).context("edge KL table")?;
    let eval_dir = out.join(EVALUATION_DIR);
    create_dir(&eval_dir)?;
    table
        .write_csv(&eval_dir.join("edge_kl.csv"))
        .context("writing KL table")?;

    let mut marginal = String::from("estimator,variable,trace_error,frobenius_error\n");
    let mut per_estimator = Vec::new();
    for (name, c) in &estimates {
        let errs = marginal_error_report(&truth, c, q, p).context("marginal errors")?;
        for line in marginal_errors_csv(&errs).lines().skip(1) {
            marginal.push_str(&format!("{name},{line}\n"));
        }
        per_estimator.push((name.clone(), errs));
    }
    fs::write(eval_dir.join("marginal_errors.csv"), marginal).map_err(io_err(&eval_dir))?;

    let heat_dir = eval_dir.join("heatmaps");
    if !cfg.evaluate.heatmaps.is_empty() {
        create_dir(&heat_dir)?;
    }
    for &[i, j] in &cfg.evaluate.heatmaps {
        if i > q || j > q {
            return Err(CliError::Config(format!(
                "heatmap block ({i}, {j}) outside {q} variables"
            )));
        }
        let named = std::iter::once(("truth".to_string(), &truth))
            .chain(estimates.iter().map(|(n, c)| (n.clone(), c)));
        for (name, c) in named {
            let block = extract_block(c, i - 1, j - 1, p).context("heatmap")?;
            export_heatmap(&block, &heat_dir.join(format!("{name}_block_{i}_{j}.csv"))).context("heatmap")?;
        }
    }
    write_json(
        &eval_dir.join("evaluation.json"),
        &report(cfg, &table, &per_estimator),
    )?;
    print_table(&table);
    write_manifest(cfg, "evaluate", out)
}

fn report(cfg: &RunConfig, table: &EdgeKlTable, marginal: &[(String, Vec<MarginalError>)]) -> Value {
    json!({
        "mode": cfg.evaluate.mode,
        "kl_definition": KL_NOTE,
        "kl_ridge": cfg.evaluate.kl_ridge,
        "edges": table.rows.len(),
        "mean_edge_kl": table.estimators.iter().map(|e| (e.clone(), json!(table.mean(e)))).collect::<serde_json::Map<_, _>>(),
        "total_trace_error": marginal.iter()
            .map(|(n, errs)| (n.clone(), json!(errs.iter().map(|e| e.trace_error).sum::<f64>())))
            .collect::<serde_json::Map<_, _>>(),
    })
}

fn print_table(table: &EdgeKlTable) {
    print!("{:>6} {:>6}", "i", "j");
    for e in &table.estimators {
        print!(" {:>14}", e);
    }
    println!();
    for r in &table.rows {
        print!("{:>6} {:>6}", r.edge.0 + 1, r.edge.1 + 1);
        for v in &r.values {
            print!(" {:>14.4}", v);
        }
        println!();
    }
}

/// Replicate indices of the training part of a seeded split.
pub fn split_replicates(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (fraction * n as f64).round() as usize;
    if n_train < 2 || n - n_train < 2 {
        return Err(CliError::Config(format!(
            "train fraction {fraction} of {n} replicates leaves fewer than two on a side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let (train, test) = idx.split_at(n_train);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn evaluate_train_test(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed("train/test evaluation")?;
    let out = cfg.require_out()?;
    let data = load_input(cfg)?;
    let g = resolve_graph(cfg, data.n_vars())?;
    let (train_idx, test_idx) = split_replicates(data.n_reps(), cfg.evaluate.train_fraction, seed)?;
    let train = data.select_replicates(&train_idx).context("split")?;
    let test = data.select_replicates(&test_idx).context("split")?;
    let reference = assemble_full(&fit_one(cfg, EstimatorKind::Unconstrained, &train, &g)?);
    let mut fits = Vec::new();
    for &kind in &cfg.estimators {
        fits.push((
            kind.name().to_string(),
            assemble_full(&fit_one(cfg, kind, &test, &g)?),
        ));
    }
    let table =
        edge_kl_table(&reference, &fits, &g, data.p(), cfg.evaluate.kl_ridge).context("edge KL table")?;
    let eval_dir = out.join(EVALUATION_DIR);
    create_dir(&eval_dir)?;
    table
        .write_csv(&eval_dir.join("train_test_kl.csv"))
        .context("writing KL table")?;
    let mut meta = report(cfg, &table, &[]);
    meta["reference"] = json!("unconstrained fit on the training replicates");
    meta["train_replicates"] = json!(train_idx.iter().map(|i| i + 1).collect::<Vec<_>>());
    write_json(&eval_dir.join("evaluation.json"), &meta)?;
    print_table(&table);
    write_manifest(cfg, "evaluate", out)
}

// ------------------------------------------------------- pipeline, ingest

/// simulate, fit, evaluate in one output directory. With an external
/// dataset the simulation step is skipped and evaluation runs in
/// train/test mode.
pub fn pipeline(cfg: &RunConfig) -> Result<()> {
    if cfg.dataset.is_some() {
        fit(cfg)?;
        let mut c = cfg.clone();
        c.evaluate.mode = EvalMode::TrainTest;
        evaluate(&c)?;
    } else {
        simulate(cfg)?;
        fit(cfg)?;
        evaluate(cfg)?;
    }
    write_manifest(cfg, "pipeline", cfg.require_out()?)
}

pub fn ingest_check(cfg: &RunConfig) -> Result<()> {
    let d = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("ingest-check needs \"dataset\"".into()))?;
    let (_, summary) = ingest_dataset(d)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("serializable")
    );
    Ok(())
}

// ---------------------------------------------------------------- manifest

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(dir: &Path, base: &Path, acc: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk(&path, base, acc)?;
        } else {
            let rel = path
                .strip_prefix(base)
                .expect("inside base")
                .to_string_lossy()
                .replace('\\', "/");
            if rel != MANIFEST_FILE {
                acc.push((rel, path));
            }
        }
    }
    Ok(())
}

/// Lists the inputs and every file under `out` with SHA-256 hashes. The
/// recorded config omits the output path so that reruns elsewhere produce an
/// identical manifest.
pub fn write_manifest(cfg: &RunConfig, command: &str, out: &Path) -> Result<()> {
    let mut recorded = cfg.clone();
    recorded.out = None;
    let config_json = serde_json::to_value(&recorded).expect("serializable");
    let config_text = serde_json::to_string(&config_json).expect("serializable");
    let mut inputs = Vec::new();
    if cfg.graph != BUILTIN_GRAPH {
        inputs.push(
            json!({ "role": "graph", "path": cfg.graph, "sha256": sha256_file(Path::new(&cfg.graph))? }),
        );
    }
    if let Some(d) = &cfg.dataset {
        inputs.push(json!({ "role": "dataset", "path": d.path, "sha256": sha256_file(&d.path)? }));
    }
    let mut files = Vec::new();
    walk(out, out, &mut files)?;
    let outputs: Vec<Value> = files
        .iter()
        .map(|(rel, path)| Ok(json!({ "path": rel, "sha256": sha256_file(path)? })))
        .collect::<Result<_>>()?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config_json,
        "config_sha256": hex::encode(Sha256::digest(config_text.as_bytes())),
        "inputs": inputs,
        "outputs": outputs,
    });
    write_json(&out.join(MANIFEST_FILE), &manifest)
}
