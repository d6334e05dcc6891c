//! `zda` subcommands. Every command reads one JSON experiment config and
//! writes under its `output_dir`:
//!
//! ```text
//! manifest.json  train.jsonl  checkpoints/  results.csv  analysis/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use zda_core::analysis::{
    activation_maximization, alignment_report, extract_features, tsne_embed, write_actmax_grid,
    write_embedding_csv, write_logit_traces, FeatureMatrix,
};
use zda_core::config::{parse_config, ExperimentConfig, Preset, RunManifest};
use zda_core::data::subset;
use zda_core::evaluation::{evaluate_accuracy, read_results, write_results, ResultsRow};
use zda_core::experiment::{
    baseline_with_data, prepare_data, source_test_view, train_with_data, ExperimentData, RunLayout,
};
use zda_core::fsutil::atomic_write;
use zda_core::model::{load_checkpoint, FeatureTap, ModelGraph};
use zda_core::rng::{derive_seed, streams};
use zda_core::Route;

#[derive(Debug, Parser)]
#[command(
    name = "zda",
    version,
    about = "Zero-shot domain adaptation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and cache every dataset view; print counts and checksums.
    Prepare(RunArgs),
    /// Train the full model and the source-only control.
    Train(RunArgs),
    /// Evaluate a checkpoint on the target-domain main task; append to results.csv.
    Eval(RunArgs),
    /// Alignment scores, t-SNE embeddings and activation maximization.
    Analyze(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Prepare(a) | Command::Train(a) | Command::Eval(a) | Command::Analyze(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Model checkpoint; defaults to `<output_dir>/checkpoints/final.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults layered under the config file: desk or full.
    #[arg(long)]
    pub preset: Option<Preset>,
}

/// Parses the config and applies command-line overrides.
pub fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(&args.config, args.preset)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let args = cli.command.args();
    let cfg = load_config(args)?;
    let started = now();
    let layout = RunLayout::new(&cfg.output_dir);
    let record = match &cli.command {
        Command::Prepare(_) => cmd_prepare(&cfg)?,
        Command::Train(_) => cmd_train(&cfg, &layout)?,
        Command::Eval(a) => cmd_eval(&cfg, &layout, a.checkpoint.as_deref())?,
        Command::Analyze(a) => cmd_analyze(&cfg, &layout, a.checkpoint.as_deref())?,
    };
    if let Some(record) = record {
        update_manifest(&cfg, &layout, cli.command.name(), started, record)?;
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Artifacts and metrics a command adds to the manifest.
#[derive(Debug, Default)]
pub struct Record {
    pub artifacts: BTreeMap<String, PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

impl Record {
    fn artifact(&mut self, key: &str, path: PathBuf) {
        self.artifacts.insert(key.to_owned(), path);
    }
}

/// Merges into an existing manifest for the same config, otherwise starts a
/// fresh one.
fn update_manifest(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    command: &str,
    started: String,
    record: Record,
) -> Result<()> {
    let path = layout.manifest();
    let previous = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
        .filter(|m| m.config_hash == cfg.hash());
    let mut manifest = match previous {
        Some(mut m) => {
            m.command = command.to_owned();
            m.started = started;
            m.config = cfg.clone();
            m
        }
        None => RunManifest::new(cfg, command, started),
    };
    manifest.artifacts.extend(record.artifacts);
    manifest.metrics.extend(record.metrics);
    manifest.finished = Some(now());
    fs::create_dir_all(&layout.root)?;
    atomic_write(&path, &serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Option<Record>> {
    let data = prepare_data(cfg)?;
    for view in data.report() {
        println!("{}", serde_json::to_string(&view)?);
    }
    Ok(None)
}

fn cmd_train(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<Option<Record>> {
    let data = prepare_data(cfg)?;
    let full = train_with_data(cfg, &data, Some(layout))?;
    println!("target accuracy (t,m): {}", full.target_accuracy);
    let base = baseline_with_data(cfg, &data, Some(&layout.baseline_checkpoint()))?;
    println!("source-only baseline accuracy: {}", base.target_accuracy);

    let mut rec = Record::default();
    rec.artifact("train_log", layout.history());
    rec.artifact("checkpoint", layout.final_checkpoint());
    rec.artifact("baseline_checkpoint", layout.baseline_checkpoint());
    if cfg.checkpoint_every > 0 {
        for e in (cfg.checkpoint_every..=cfg.optimizer.epochs).step_by(cfg.checkpoint_every) {
            rec.artifact(&format!("checkpoint_epoch_{e}"), layout.epoch_checkpoint(e));
        }
    }
    rec.metrics
        .insert("target_accuracy".into(), full.target_accuracy);
    rec.metrics
        .insert("baseline_accuracy".into(), base.target_accuracy);
    Ok(Some(rec))
}

/// Loads a checkpoint and checks it was trained for this config's network.
fn load_model(cfg: &ExperimentConfig, path: &Path, tied: bool) -> Result<ModelGraph> {
    if !path.exists() {
        bail!(
            "checkpoint {} not found; run `zda train` first or pass --checkpoint",
            path.display()
        );
    }
    let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let mut arch = cfg.arch();
    arch.tied_domain_branches = tied;
    if model.arch() != &arch {
        bail!(
            "checkpoint {} was built for {:?}, config expects {:?}",
            path.display(),
            model.arch(),
            arch
        );
    }
    Ok(model)
}

fn resolve_checkpoint(layout: &RunLayout, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.final_checkpoint())
}

fn cmd_eval(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    checkpoint: Option<&Path>,
) -> Result<Option<Record>> {
    let ckpt = resolve_checkpoint(layout, checkpoint);
    let model = load_model(cfg, &ckpt, false)?;
    let data = prepare_data(cfg)?;
    let accuracy = evaluate_accuracy(&model, &data.test_target, Route::TARGET_MAIN)?;
    println!("target accuracy (t,m): {accuracy}");

    let base_path = layout.baseline_checkpoint();
    let baseline = if base_path.exists() {
        let base = load_model(cfg, &base_path, true)?;
        evaluate_accuracy(&base, &data.test_target, Route::TARGET_MAIN)?
    } else {
        log::info!("no baseline checkpoint; training the source-only control");
        fs::create_dir_all(layout.checkpoints())?;
        baseline_with_data(cfg, &data, Some(&base_path))?.target_accuracy
    };
    println!("source-only baseline accuracy: {baseline}");

    let row = ResultsRow::new(cfg, accuracy, baseline)?;
    let csv = layout.results();
    let mut rows = read_results(&csv)?;
    rows.retain(|r| r.config_hash != row.config_hash);
    rows.push(row);
    write_results(&csv, &rows)?;

    let mut rec = Record::default();
    rec.artifact("results", csv);
    rec.artifact("baseline_checkpoint", base_path);
    rec.metrics.insert("eval_target_accuracy".into(), accuracy);
    rec.metrics
        .insert("eval_baseline_accuracy".into(), baseline);
    Ok(Some(rec))
}

#[derive(Serialize)]
struct ActMaxSummary {
    class_id: usize,
    initial_logit: f64,
    final_logit: f64,
}

fn cmd_analyze(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    checkpoint: Option<&Path>,
) -> Result<Option<Record>> {
    let ckpt = resolve_checkpoint(layout, checkpoint);
    let model = load_model(cfg, &ckpt, false)?;
    let data: ExperimentData = prepare_data(cfg)?;
    let test_source = source_test_view(cfg)?;
    let a = &cfg.analysis;
    let dir = layout.analysis();
    fs::create_dir_all(&dir)?;
    let mut rec = Record::default();

    // both test views hold the same base images, so one seed picks the same
    // samples in each domain
    let pick_seed = derive_seed(cfg.seed, streams::SUBSET_TEST);
    let sr = subset(&test_source, a.samples_per_domain, pick_seed);
    let t = subset(&data.test_target, a.samples_per_domain, pick_seed);
    let report = alignment_report(&model, &sr, &t, a.k, cfg.seed)?;
    println!("{}", serde_json::to_string(&report)?);
    let path = dir.join("alignment.json");
    atomic_write(&path, &serde_json::to_vec_pretty(&report)?)?;
    rec.artifact("alignment", path);
    for (k, v) in [
        ("fmi_raw", report.fmi_raw),
        ("nmi_raw", report.nmi_raw),
        ("fmi_q", report.fmi_q),
        ("nmi_q", report.nmi_q),
    ] {
        rec.metrics.insert(k.into(), v);
    }

    let per_domain = (a.tsne_samples / 2).max(3);
    let sr = subset(&test_source, per_domain, pick_seed);
    let t = subset(&data.test_target, per_domain, pick_seed);
    for tap in [FeatureTap::P, FeatureTap::K, FeatureTap::Q] {
        let f: FeatureMatrix = extract_features(&model, &sr, Route::SOURCE_MAIN, tap)?
            .concat(&extract_features(&model, &t, Route::TARGET_MAIN, tap)?)?;
        let emb = tsne_embed(f.rows.view(), a.perplexity, a.tsne_iterations, cfg.seed)?;
        let path = dir.join(format!("embedding_{}.csv", tap.tag()));
        write_embedding_csv(&path, emb.embedding.view(), &f)?;
        rec.artifact(&format!("embedding_{}", tap.tag()), path);
    }

    let classes = model.classes(zda_core::TaskRole::Main);
    let results = (0..classes)
        .map(|c| {
            activation_maximization(
                &model,
                Route::TARGET_MAIN,
                c,
                a.actmax_steps,
                a.actmax_step_size,
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary: Vec<ActMaxSummary> = results
        .iter()
        .map(|r| ActMaxSummary {
            class_id: r.class_id,
            initial_logit: r.initial_logit(),
            final_logit: r.final_logit(),
        })
        .collect();
    println!("{}", serde_json::to_string(&summary)?);
    let grid = dir.join("actmax.png");
    write_actmax_grid(&grid, &results, 10)?;
    let traces = dir.join("actmax_trace.csv");
    write_logit_traces(&traces, &results)?;
    rec.artifact("actmax_grid", grid);
    rec.artifact("actmax_trace", traces);
    Ok(Some(rec))
}
