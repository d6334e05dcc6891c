use rand::seq::SliceRandom;

use super::{DataError, LabeledImageSet, PairedAuxSet, INPUT_CHANNELS, INPUT_SIZE};
use crate::rng::stream_rng;
use crate::route::{DomainRole, Route, TaskRole};
use crate::tensor::Tensor;

/// A preprocessed minibatch: `(b, 3, 32, 32)` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pixels: Tensor,
    pub labels: Vec<usize>,
    pub origin_indices: Vec<usize>,
    pub route: Route,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Collects the given positions of a preprocessed set into a batch.
    pub fn from_set(set: &LabeledImageSet, indices: &[usize], route: Route) -> Batch {
        let hw = INPUT_SIZE * INPUT_SIZE;
        let mut data = vec![0.0f32; indices.len() * INPUT_CHANNELS * hw];
        for (slot, &i) in indices.iter().enumerate() {
            let img = set.images.image(i);
            let dst = &mut data[slot * INPUT_CHANNELS * hw..(slot + 1) * INPUT_CHANNELS * hw];
            for p in 0..hw {
                for c in 0..INPUT_CHANNELS {
                    dst[c * hw + p] = img[p * INPUT_CHANNELS + c] as f32 / 255.0;
                }
            }
        }
        Batch {
            pixels: Tensor::from_vec(
                &[indices.len(), INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE],
                data,
            ),
            labels: indices.iter().map(|&i| set.labels[i]).collect(),
            origin_indices: indices.iter().map(|&i| set.origin_indices[i]).collect(),
            route,
        }
    }
}

fn check_preprocessed(set: &LabeledImageSet) -> Result<(), DataError> {
    let im = &set.images;
    if (im.height, im.width, im.channels) != (INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS) {
        return Err(DataError::Inconsistent(format!(
            "batches need {INPUT_SIZE}x{INPUT_SIZE}x{INPUT_CHANNELS} views, got {}x{}x{}",
            im.height, im.width, im.channels
        )));
    }
    Ok(())
}

fn order(n: usize, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, n as u64));
    }
    order
}

/// Lazily materialized batches over one set. The final partial batch is kept.
pub struct BatchIter<'a> {
    set: &'a LabeledImageSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    route: Route,
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = Batch::from_set(self.set, &self.order[self.pos..end], self.route);
        self.pos = end;
        Some(batch)
    }
}

pub fn make_batches(
    set: &LabeledImageSet,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    route: Route,
) -> Result<BatchIter<'_>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatchSize);
    }
    if set.is_empty() {
        return Err(DataError::EmptySet);
    }
    check_preprocessed(set)?;
    Ok(BatchIter {
        set,
        order: order(set.len(), seed, shuffle),
        batch_size,
        pos: 0,
        route,
    })
}

/// Aligned `(sr, a)` / `(t, a)` batch pairs over a paired auxiliary set.
pub struct PairedBatchIter<'a> {
    source: BatchIter<'a>,
    target: BatchIter<'a>,
}

impl PairedBatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.source.num_batches()
    }
}

impl Iterator for PairedBatchIter<'_> {
    type Item = (Batch, Batch);

    fn next(&mut self) -> Option<(Batch, Batch)> {
        Some((self.source.next()?, self.target.next()?))
    }
}

pub fn make_paired_batches(
    pair: &PairedAuxSet,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<PairedBatchIter<'_>, DataError> {
    if pair.source_view.origin_indices != pair.target_view.origin_indices
        || pair.source_view.labels != pair.target_view.labels
    {
        return Err(DataError::Inconsistent(
            "paired views are not aligned".into(),
        ));
    }
    let source = make_batches(
        &pair.source_view,
        batch_size,
        seed,
        shuffle,
        Route::new(DomainRole::Source, TaskRole::Aux),
    )?;
    let mut target = make_batches(
        &pair.target_view,
        batch_size,
        seed,
        shuffle,
        Route::new(DomainRole::Target, TaskRole::Aux),
    )?;
    target.order = source.order.clone();
    Ok(PairedBatchIter { source, target })
}
