//! Zero-shot accuracy, the source-only control and resumable experiment grids.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::data::{Batch, DataError, DomainId, LabeledImageSet, TaskId};
use crate::experiment::{baseline_with_data, prepare_data, train_with_data, RunError};
use crate::fsutil::atomic_write;
use crate::losses::Discrepancy;
use crate::model::{FeatureTap, ModelGraph};
use crate::route::Route;
use crate::training::argmax;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("route mismatch: {0}")]
    RouteMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("results table {path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const EVAL_BATCH: usize = 256;

/// Arg-max predictions for every sample of `set`, in set order.
pub fn predict(
    model: &ModelGraph,
    set: &LabeledImageSet,
    route: Route,
) -> Result<Vec<usize>, EvalError> {
    let classes = model.classes(route.task);
    if set.task.class_count() != classes {
        return Err(EvalError::RouteMismatch(format!(
            "{} has {} classes but route {route} predicts {classes}",
            set.task,
            set.task.class_count()
        )));
    }
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = Batch::from_set(set, chunk, route);
        let logits = model
            .forward(&batch, FeatureTap::Logits)
            .map_err(|e| EvalError::RouteMismatch(e.to_string()))?;
        let t = &logits.values;
        out.extend((0..t.batch()).map(|i| argmax(t.sample(i).iter().map(|&v| v as f64))));
    }
    Ok(out)
}

/// Fraction of samples whose arg-max logit equals the label. Ties go to the
/// lowest class index.
pub fn evaluate_accuracy(
    model: &ModelGraph,
    set: &LabeledImageSet,
    route: Route,
) -> Result<f64, EvalError> {
    if set.is_empty() {
        return Err(EvalError::Data(DataError::EmptySet));
    }
    let pred = predict(model, set, route)?;
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Trains the source-only control for `cfg` and returns its accuracy on the
/// target-domain main-task test view.
pub fn source_only_baseline(cfg: &ExperimentConfig) -> Result<f64, RunError> {
    let data = prepare_data(cfg)?;
    Ok(baseline_with_data(cfg, &data, None)?.target_accuracy)
}

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub source_domain: DomainId,
    pub target_domain: DomainId,
    pub main_task: TaskId,
    pub aux_task: TaskId,
    pub discrepancy: Discrepancy,
    pub seed: u64,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub config_hash: String,
}

pub const RESULTS_HEADER: &str =
    "source_domain,target_domain,main_task,aux_task,discrepancy,seed,accuracy,baseline_accuracy,config_hash";

impl ResultsRow {
    pub fn new(
        cfg: &ExperimentConfig,
        accuracy: f64,
        baseline_accuracy: f64,
    ) -> Result<Self, EvalError> {
        for (name, v) in [
            ("accuracy", accuracy),
            ("baseline_accuracy", baseline_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::InvalidGrid(format!("{name} {v} outside [0, 1]")));
            }
        }
        TaskId::validate_pair(cfg.tasks.main, cfg.tasks.aux)?;
        Ok(Self {
            source_domain: cfg.domains.source,
            target_domain: cfg.domains.target,
            main_task: cfg.tasks.main,
            aux_task: cfg.tasks.aux,
            discrepancy: cfg.loss.discrepancy,
            seed: cfg.seed,
            accuracy,
            baseline_accuracy,
            config_hash: cfg.hash(),
        })
    }
}

/// Reads a results table; a missing file is an empty table.
pub fn read_results(path: &Path) -> Result<Vec<ResultsRow>, EvalError> {
    let table_err = |message: String| EvalError::Table {
        path: path.to_owned(),
        message,
    };
    let text = match fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_reader(text.as_slice());
    let header = reader.headers().map_err(|e| table_err(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(table_err(format!("unexpected header {header:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| table_err(e.to_string())))
        .collect()
}

/// Replaces the table at `path` with `rows`, atomically.
pub fn write_results(path: &Path, rows: &[ResultsRow]) -> Result<(), EvalError> {
    let table_err = |e: csv::Error| EvalError::Table {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        writer
            .write_record(RESULTS_HEADER.split(','))
            .map_err(table_err)?;
    }
    for r in rows {
        writer.serialize(r).map_err(table_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| EvalError::Io(e.into_error()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    atomic_write(path, &bytes)?;
    Ok(())
}

/// A grid row that did not produce a result.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFailure {
    pub config_hash: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridOutcome {
    /// Every row in the table after the run, resumed ones included.
    pub rows: Vec<ResultsRow>,
    /// Number of configs executed in this call.
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<GridFailure>,
}

/// Runs the full method and the source-only control for one config; returns
/// `(accuracy, baseline_accuracy)`.
pub fn run_config(cfg: &ExperimentConfig) -> Result<(f64, f64), RunError> {
    let data = prepare_data(cfg)?;
    let full = train_with_data(cfg, &data, None)?;
    let base = baseline_with_data(cfg, &data, None)?;
    Ok((full.target_accuracy, base.target_accuracy))
}

/// Executes every config not already present (by config hash) in the table
/// at `csv`, appending each finished row with an atomic rewrite. Failing rows
/// are logged and reported while the grid continues.
pub fn run_grid_with<E: std::fmt::Display>(
    configs: &[ExperimentConfig],
    csv: &Path,
    mut runner: impl FnMut(&ExperimentConfig) -> Result<(f64, f64), E>,
) -> Result<GridOutcome, EvalError> {
    for cfg in configs {
        cfg.validate()
            .map_err(|e| EvalError::InvalidGrid(format!("{}: {e}", cfg.hash())))?;
    }
    let mut rows = read_results(csv)?;
    let mut done: BTreeSet<String> = rows.iter().map(|r| r.config_hash.clone()).collect();
    let mut out = GridOutcome::default();
    for cfg in configs {
        let hash = cfg.hash();
        if done.contains(&hash) {
            out.skipped += 1;
            continue;
        }
        out.executed += 1;
        let row = runner(cfg)
            .map_err(|e| e.to_string())
            .and_then(|(acc, base)| ResultsRow::new(cfg, acc, base).map_err(|e| e.to_string()));
        match row {
            Ok(row) => {
                rows.push(row);
                write_results(csv, &rows)?;
                done.insert(hash);
            }
            Err(message) => {
                log::error!("grid row {hash} failed: {message}");
                out.failures.push(GridFailure {
                    config_hash: hash,
                    message,
                });
            }
        }
    }
    out.rows = rows;
    Ok(out)
}

/// [`run_grid_with`] using real training for every row.
pub fn run_experiment_grid(
    configs: &[ExperimentConfig],
    csv: &Path,
) -> Result<GridOutcome, EvalError> {
    run_grid_with(configs, csv, run_config)
}

/// One config per valid (main, auxiliary) task pair, otherwise copying `base`.
pub fn task_pair_grid(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    TaskId::valid_pairs()
        .into_iter()
        .map(|(main, aux)| {
            let mut c = base.clone();
            c.tasks.main = main;
            c.tasks.aux = aux;
            c
        })
        .collect()
}
