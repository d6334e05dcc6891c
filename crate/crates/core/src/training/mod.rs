//! Joint training over the main stream and the paired auxiliary stream.

mod adam;
mod step;

pub use adam::{adam_step, AdamState, OptimizerConfig};
pub use step::{StepGradients, StepReport, Terms, Trainer};

pub(crate) use step::argmax;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    make_batches, make_paired_batches, Batch, DataError, LabeledImageSet, PairedAuxSet,
    PairedBatchIter,
};
use crate::losses::LossError;
use crate::model::ModelError;
use crate::rng::{derive_seed, streams};
use crate::route::Route;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("route error: {0}")]
    Route(String),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::NonFinite { component, value } => {
                TrainError::NonFinite(format!("{component} ({value})"))
            }
            other => TrainError::Loss(other),
        }
    }
}

/// Training inputs: source-domain main-task samples and aligned auxiliary pairs.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub main: LabeledImageSet,
    pub aux: PairedAuxSet,
}

/// Per-epoch means over steps; written as one JSON line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub l_total: f64,
    pub l_cls: f64,
    pub l_d: f64,
    pub per_pair_ce: BTreeMap<Route, f64>,
    pub train_acc: BTreeMap<Route, f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator_loss: Option<f64>,
}

/// Endless paired auxiliary batches, reshuffled with a fresh seed per pass.
/// Batches with fewer than 2 pairs are skipped (the MMD needs 2 per side).
struct AuxStream<'a> {
    pair: &'a PairedAuxSet,
    batch_size: usize,
    seed: u64,
    cycle: u64,
    iter: Option<PairedBatchIter<'a>>,
}

impl<'a> AuxStream<'a> {
    fn new(pair: &'a PairedAuxSet, batch_size: usize, seed: u64) -> Self {
        Self {
            pair,
            batch_size,
            seed,
            cycle: 0,
            iter: None,
        }
    }

    fn next(&mut self) -> Result<(Batch, Batch), TrainError> {
        if self.pair.source_view.len() < 2 {
            return Err(TrainError::Data(DataError::EmptySet));
        }
        loop {
            if self.iter.is_none() {
                let seed = derive_seed(self.seed, self.cycle);
                self.cycle += 1;
                self.iter = Some(make_paired_batches(self.pair, self.batch_size, seed, true)?);
            }
            match self.iter.as_mut().unwrap().next() {
                Some((s, t)) if s.len() >= 2 => return Ok((s, t)),
                Some(_) => continue,
                None => self.iter = None,
            }
        }
    }
}

/// Seed for the main-stream order of `epoch` (0-based).
fn main_order_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(derive_seed(seed, streams::MAIN_ORDER), epoch as u64)
}

/// Runs `optimizer.epochs` epochs; an epoch is one pass over the main stream.
/// `on_epoch` sees every finished epoch (for logging and checkpoints).
pub fn train_model(
    trainer: &mut Trainer,
    data: &TrainingData,
    mut on_epoch: impl FnMut(&EpochStats, &Trainer) -> Result<(), TrainError>,
) -> Result<Vec<EpochStats>, TrainError> {
    let opt = trainer.optimizer.clone();
    let uses_aux = trainer.loss.uses_discrepancy()
        || trainer.loss.cls_pairs.contains(&Route::SOURCE_AUX)
        || trainer.loss.cls_pairs.contains(&Route::TARGET_AUX);
    let mut aux = AuxStream::new(
        &data.aux,
        opt.batch_size,
        derive_seed(opt.seed, streams::AUX_ORDER),
    );
    let mut history = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        let start = Instant::now();
        let batches = make_batches(
            &data.main,
            opt.batch_size,
            main_order_seed(opt.seed, epoch),
            true,
            Route::SOURCE_MAIN,
        )?;
        let mut sums = Sums::default();
        for main in batches {
            let pair = if uses_aux { Some(aux.next()?) } else { None };
            let report = trainer.train_step(&main, pair.as_ref().map(|(s, t)| (s, t)))?;
            sums.add(&report);
        }
        let stats = sums.finish(epoch + 1, start.elapsed().as_secs_f64());
        log::info!(
            "epoch {} l_total {:.4} l_cls {:.4} l_d {:.5} acc {:?} ({:.1}s)",
            stats.epoch,
            stats.l_total,
            stats.l_cls,
            stats.l_d,
            stats.train_acc,
            stats.seconds
        );
        on_epoch(&stats, trainer)?;
        history.push(stats);
    }
    Ok(history)
}

#[derive(Default)]
struct Sums {
    steps: usize,
    total: f64,
    cls: f64,
    d: f64,
    disc: Option<f64>,
    per_pair: BTreeMap<Route, f64>,
    hits: BTreeMap<Route, (usize, usize)>,
}

impl Sums {
    fn add(&mut self, r: &StepReport) {
        let b = &r.breakdown;
        self.steps += 1;
        self.total += b.total;
        self.cls += b.l_cls;
        self.d += b.l_d;
        if let Some(v) = b.discriminator_loss {
            *self.disc.get_or_insert(0.0) += v;
        }
        for (k, v) in &b.per_pair_ce {
            *self.per_pair.entry(*k).or_default() += v;
        }
        for (k, (c, n)) in &r.hits {
            let e = self.hits.entry(*k).or_default();
            e.0 += c;
            e.1 += n;
        }
    }

    fn finish(self, epoch: usize, seconds: f64) -> EpochStats {
        let n = self.steps.max(1) as f64;
        EpochStats {
            epoch,
            l_total: self.total / n,
            l_cls: self.cls / n,
            l_d: self.d / n,
            per_pair_ce: self.per_pair.into_iter().map(|(k, v)| (k, v / n)).collect(),
            train_acc: self
                .hits
                .into_iter()
                .map(|(k, (c, t))| (k, c as f64 / t.max(1) as f64))
                .collect(),
            seconds,
            discriminator_loss: self.disc.map(|v| v / n),
        }
    }
}
