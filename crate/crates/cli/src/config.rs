//! Run configuration: one JSON document plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use fggm::EstimatorKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, CliError, Result};

pub const BUILTIN_GRAPH: &str = "builtin:simulation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory. Not part of the manifest's recorded config.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// Edge-list path, or `builtin:simulation` for the 10-node study graph.
    #[serde(default = "default_graph")]
    pub graph: String,
    /// External dataset; when absent, `fit` reads `<out>/data.csv`.
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Variance fraction for the covsel and unconstrained estimators.
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "default_stitch_v")]
    pub stitch_v: f64,
    #[serde(default = "default_stitch_v_prime")]
    pub stitch_v_prime: f64,
    #[serde(default)]
    pub covsel: CovselConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    PartialSeparable {
        #[serde(default = "default_q")]
        q: usize,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_ps_p")]
        p: usize,
        #[serde(default = "default_l")]
        l: usize,
        #[serde(default = "default_decay_coef")]
        decay_coef: f64,
        #[serde(default = "default_decay_exp")]
        decay_exp: f64,
    },
    Matern {
        #[serde(default = "default_q")]
        q: usize,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_matern_p")]
        p: usize,
        /// Apply block covariance selection so the truth respects the graph.
        #[serde(default = "yes")]
        stitch: bool,
        /// Non-edge precision tolerance for stitching, relative to the largest
        /// entry of the block-diagonal precision.
        #[serde(default = "default_stitch_precision_rtol")]
        stitch_precision_rtol: f64,
    },
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::PartialSeparable {
            q: default_q(),
            n: default_n(),
            p: default_ps_p(),
            l: default_l(),
            decay_coef: default_decay_coef(),
            decay_exp: default_decay_exp(),
        }
    }
}

impl GeneratorConfig {
    pub fn q(&self) -> usize {
        match self {
            GeneratorConfig::PartialSeparable { q, .. } | GeneratorConfig::Matern { q, .. } => *q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub layout: Layout,
    /// Subtract each variable's mean function before fitting.
    #[serde(default)]
    pub center: bool,
    /// Average observations within fixed-width bins of the grid coordinate.
    #[serde(default)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// One observation per row.
    Long {
        #[serde(default = "col_rep")]
        rep: String,
        #[serde(default = "col_var")]
        var: String,
        #[serde(default = "col_s")]
        s: String,
        #[serde(default = "col_value")]
        value: String,
    },
    /// One curve per row; every other column header is a grid coordinate.
    Wide {
        #[serde(default = "col_rep")]
        rep: String,
        #[serde(default = "col_var")]
        var: String,
    },
}

impl Default for Layout {
    fn default() -> Self {
        Layout::Long {
            rep: col_rep(),
            var: col_var(),
            s: col_s(),
            value: col_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovselConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tol")]
    pub precision_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for CovselConfig {
    fn default() -> Self {
        CovselConfig {
            tol: default_tol(),
            precision_tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Compare estimates with the simulation truth.
    Truth,
    /// Split replicates, fit on both halves, compare per edge.
    TrainTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    /// Truth directory; defaults to `<out>/truth`.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Estimate directories; defaults to `<out>/estimates/<name>` for each
    /// configured estimator.
    #[serde(default)]
    pub estimates: Vec<PathBuf>,
    /// Diagonal shift, relative to the truth block's mean diagonal, added to
    /// both blocks before the divergence. Zero compares raw blocks.
    #[serde(default = "default_kl_ridge")]
    pub kl_ridge: f64,
    /// 1-based variable blocks to export as heatmaps.
    #[serde(default = "default_heatmaps")]
    pub heatmaps: Vec<[usize; 2]>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
    }
}

fn yes() -> bool {
    true
}
fn default_graph() -> String {
    BUILTIN_GRAPH.into()
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Unconstrained,
        EstimatorKind::Covsel,
        EstimatorKind::Stitch,
    ]
}
fn default_v() -> f64 {
    0.95
}
fn default_stitch_v() -> f64 {
    0.75
}
fn default_stitch_v_prime() -> f64 {
    0.95
}
fn default_q() -> usize {
    10
}
fn default_n() -> usize {
    100
}
fn default_ps_p() -> usize {
    200
}
fn default_matern_p() -> usize {
    250
}
fn default_l() -> usize {
    101
}
fn default_decay_coef() -> f64 {
    3.0
}
fn default_decay_exp() -> f64 {
    1.8
}
fn default_stitch_precision_rtol() -> f64 {
    1e-7
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    500
}
fn default_mode() -> EvalMode {
    EvalMode::Truth
}
fn default_kl_ridge() -> f64 {
    1e-3
}
fn default_heatmaps() -> Vec<[usize; 2]> {
    vec![[1, 1]]
}
fn default_train_fraction() -> f64 {
    0.5
}
fn col_rep() -> String {
    "rep".into()
}
fn col_var() -> String {
    "var".into()
}
fn col_s() -> String {
    "s".into()
}
fn col_value() -> String {
    "value".into()
}

/// Sets `a.b.c = value` in a JSON document, creating objects on the way.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!(
                "override key {key:?} has an empty segment"
            )));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Reads the config file (if any), applies overrides in order and checks
/// every field.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(g) = doc.get_mut("generator").and_then(Value::as_object_mut) {
        g.entry("kind")
            .or_insert_with(|| Value::String("partial_separable".into()));
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} = {v} must be in (0, 1]")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fraction("v", self.v)?;
        fraction("stitch_v", self.stitch_v)?;
        fraction("stitch_v_prime", self.stitch_v_prime)?;
        if self.estimators.is_empty() {
            return Err(CliError::Config("estimators must not be empty".into()));
        }
        if self.estimators.contains(&EstimatorKind::Truth) {
            return Err(CliError::Config(
                "estimators: \"truth\" is not an estimator".into(),
            ));
        }
        let mut seen = self.estimators.clone();
        seen.sort_by_key(|k| k.name());
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(CliError::Config("estimators contains duplicates".into()));
        }
        match &self.generator {
            GeneratorConfig::PartialSeparable {
                q,
                n,
                p,
                l,
                decay_coef,
                decay_exp,
            } => {
                positive("generator.q", *q)?;
                positive("generator.n", *n)?;
                positive("generator.p", *p)?;
                positive("generator.l", *l)?;
                if l > p {
                    return Err(CliError::Config(format!(
                        "generator.l = {l} exceeds generator.p = {p}"
                    )));
                }
                if !(*decay_coef > 0.0 && *decay_exp > 0.0) {
                    return Err(CliError::Config(
                        "generator.decay_coef and generator.decay_exp must be positive".into(),
                    ));
                }
            }
            GeneratorConfig::Matern {
                q,
                n,
                p,
                stitch_precision_rtol,
                ..
            } => {
                positive("generator.q", *q)?;
                positive("generator.n", *n)?;
                positive("generator.p", *p)?;
                if stitch_precision_rtol.is_nan() || *stitch_precision_rtol <= 0.0 {
                    return Err(CliError::Config(
                        "generator.stitch_precision_rtol must be positive".into(),
                    ));
                }
            }
        }
        if self.graph != BUILTIN_GRAPH && !Path::new(&self.graph).is_file() {
            return Err(CliError::Config(format!("graph: no such file {:?}", self.graph)));
        }
        if let Some(d) = &self.dataset {
            if !d.path.is_file() {
                return Err(CliError::Config(format!(
                    "dataset.path: no such file {}",
                    d.path.display()
                )));
            }
            if let Some(w) = d.bin_width {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(CliError::Config(format!(
                        "dataset.bin_width = {w} must be positive"
                    )));
                }
            }
        }
        if !(self.covsel.tol > 0.0 && self.covsel.precision_tol > 0.0 && self.covsel.max_iter > 0) {
            return Err(CliError::Config(
                "covsel tolerances and max_iter must be positive".into(),
            ));
        }
        let e = &self.evaluate;
        if !(e.kl_ridge >= 0.0 && e.kl_ridge.is_finite()) {
            return Err(CliError::Config(format!(
                "evaluate.kl_ridge = {} must be >= 0",
                e.kl_ridge
            )));
        }
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "evaluate.train_fraction = {} must be in (0, 1)",
                e.train_fraction
            )));
        }
        if e.heatmaps.iter().any(|b| b[0] == 0 || b[1] == 0) {
            return Err(CliError::Config(
                "evaluate.heatmaps uses 1-based variable indices".into(),
            ));
        }
        Ok(())
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config(format!("{command} needs a seed (--seed or \"seed\")")))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("an output directory is required (--out or \"out\")".into()))
    }
}

fn positive(name: &str, x: usize) -> Result<()> {
    if x == 0 {
        Err(CliError::Config(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}
