//! Config-driven pipeline: dataset views, training runs and the baseline.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{
    load_task_dataset, subset, BackgroundSource, DataError, LabeledImageSet, Split, ViewBuilder,
};
use crate::evaluation::{evaluate_accuracy, EvalError};
use crate::losses::LossConfig;
use crate::model::{build_model, save_checkpoint, ArchConfig, ModelError, ModelGraph};
use crate::rng::{derive_seed, streams};
use crate::route::Route;
use crate::training::{train_model, EpochStats, TrainError, Trainer, TrainingData};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// One built view, as listed by the prepare report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewReport {
    pub name: String,
    pub task: String,
    pub domain: String,
    pub split: String,
    pub count: usize,
    pub checksum: String,
}

impl ViewReport {
    fn of(name: &str, set: &LabeledImageSet) -> Self {
        let mut h = crc32fast::Hasher::new();
        h.update(&set.images.pixels);
        for &l in &set.labels {
            h.update(&(l as u32).to_le_bytes());
        }
        Self {
            name: name.to_owned(),
            task: set.task.to_string(),
            domain: set.domain.tag().to_owned(),
            split: format!("{:?}", set.split).to_lowercase(),
            count: set.len(),
            checksum: format!("{:08x}", h.finalize()),
        }
    }
}

/// Every view an experiment touches.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: TrainingData,
    /// Main task, test split, target domain: the zero-shot evaluation set.
    pub test_target: LabeledImageSet,
}

impl ExperimentData {
    pub fn report(&self) -> Vec<ViewReport> {
        vec![
            ViewReport::of("main-sr", &self.train.main),
            ViewReport::of("aux-sr", &self.train.aux.source_view),
            ViewReport::of("aux-t", &self.train.aux.target_view),
            ViewReport::of("main-t", &self.test_target),
        ]
    }
}

pub fn view_builder(cfg: &ExperimentConfig) -> Result<ViewBuilder, RunError> {
    let background = match &cfg.background_corpus {
        Some(dir) => BackgroundSource::from_dir(dir)?,
        None => BackgroundSource::Procedural,
    };
    Ok(ViewBuilder::new(background, cfg.cache_dir.clone()))
}

/// Loads, subsets and transforms all views of an experiment.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData, RunError> {
    let root = cfg.resolve_data_root()?;
    let builder = view_builder(cfg)?;
    let (main, aux) = (cfg.tasks.main, cfg.tasks.aux);
    let (src, tgt) = (cfg.domains.source, cfg.domains.target);
    let seed = cfg.seed;

    let main_train = load_task_dataset(main, Split::Train, &root)?;
    let main_train = subset(
        &main_train,
        cfg.subset.main_train,
        derive_seed(seed, streams::SUBSET_MAIN),
    );
    let aux_train = load_task_dataset(aux, Split::Train, &root)?;
    let aux_train = subset(
        &aux_train,
        cfg.subset.aux_train,
        derive_seed(seed, streams::SUBSET_AUX),
    );
    let main_test = load_task_dataset(main, Split::Test, &root)?;
    let main_test = subset(
        &main_test,
        cfg.subset.test,
        derive_seed(seed, streams::SUBSET_TEST),
    );

    Ok(ExperimentData {
        train: TrainingData {
            main: builder.build(&main_train, src, seed)?,
            aux: builder.paired(&aux_train, src, tgt, seed)?,
        },
        test_target: builder.build(&main_test, tgt, seed)?,
    })
}

/// The main-task test subset seen in the source domain (for analysis).
pub fn source_test_view(cfg: &ExperimentConfig) -> Result<LabeledImageSet, RunError> {
    let root = cfg.resolve_data_root()?;
    let main_test = load_task_dataset(cfg.tasks.main, Split::Test, &root)?;
    let main_test = subset(
        &main_test,
        cfg.subset.test,
        derive_seed(cfg.seed, streams::SUBSET_TEST),
    );
    Ok(view_builder(cfg)?.build(&main_test, cfg.domains.source, cfg.seed)?)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub history: Vec<EpochStats>,
    /// Route `(t,m)` accuracy on the target-domain main-task test view.
    pub target_accuracy: f64,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("train.jsonl")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epoch:03}.ckpt"))
    }

    pub fn baseline_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("baseline.ckpt")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
}

/// Trains `model` with `loss` on prepared data. When `layout` is given the
/// epoch log and checkpoints are written under it.
pub fn run_training(
    model: ModelGraph,
    loss: LossConfig,
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    layout: Option<&RunLayout>,
    checkpoint_name: Option<&Path>,
) -> Result<TrainOutcome, RunError> {
    let mut trainer = Trainer::new(model, loss, cfg.optimizer())?;
    let mut log = match layout {
        Some(l) => {
            fs::create_dir_all(l.checkpoints())
                .map_err(io_err(format!("creating {}", l.checkpoints().display())))?;
            let f = File::create(l.history())
                .map_err(io_err(format!("creating {}", l.history().display())))?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let every = cfg.checkpoint_every;
    let history = train_model(&mut trainer, &data.train, |stats, t| {
        if let (Some(w), Some(l)) = (log.as_mut(), layout) {
            serde_json::to_writer(&mut *w, stats).map_err(|e| TrainError::Io(e.into()))?;
            w.write_all(b"\n")?;
            w.flush()?;
            if every > 0 && stats.epoch % every == 0 {
                save_checkpoint(&t.model, &l.epoch_checkpoint(stats.epoch))?;
            }
        }
        Ok(())
    })?;
    let model = trainer.into_model();
    if let Some(path) = checkpoint_name {
        save_checkpoint(&model, path)?;
    }
    let target_accuracy = evaluate_accuracy(&model, &data.test_target, Route::TARGET_MAIN)?;
    Ok(TrainOutcome {
        model,
        history,
        target_accuracy,
    })
}

fn class_counts(cfg: &ExperimentConfig) -> (usize, usize) {
    (cfg.tasks.main.class_count(), cfg.tasks.aux.class_count())
}

/// Full method on prepared data.
pub fn train_with_data(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    layout: Option<&RunLayout>,
) -> Result<TrainOutcome, RunError> {
    let (m, a) = class_counts(cfg);
    let model = build_model(&cfg.arch(), m, a, cfg.seed)?;
    let ckpt = layout.map(RunLayout::final_checkpoint);
    run_training(model, cfg.loss.clone(), cfg, data, layout, ckpt.as_deref())
}

/// Loads data and trains, writing artifacts under `cfg.output_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome, RunError> {
    let data = prepare_data(cfg)?;
    train_with_data(cfg, &data, Some(&RunLayout::new(&cfg.output_dir)))
}

/// Architecture and objective of the source-only control: one domain branch
/// serves both roles, only `(sr,m)` is supervised, no discrepancy term.
pub fn baseline_setup(cfg: &ExperimentConfig) -> (ArchConfig, LossConfig) {
    let arch = ArchConfig {
        tied_domain_branches: true,
        ..cfg.arch()
    };
    let loss = LossConfig {
        cls_pairs: vec![Route::SOURCE_MAIN],
        discrepancy_weight: 0.0,
        ..cfg.loss.clone()
    };
    (arch, loss)
}

/// Source-only control on prepared data; returns the trained model and its
/// target-domain accuracy.
pub fn baseline_with_data(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome, RunError> {
    let (arch, loss) = baseline_setup(cfg);
    let (m, a) = class_counts(cfg);
    let model = build_model(&arch, m, a, cfg.seed)?;
    run_training(model, loss, cfg, data, None, checkpoint)
}
