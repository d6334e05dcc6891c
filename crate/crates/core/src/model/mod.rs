//! Multi-branch VGG16-IN network, its parameters and checkpoints.

mod arch;
mod checkpoint;
mod graph;

pub use arch::{
    build_backbone_blocks, split_segments, ArchConfig, BlockSpec, SegmentSplit, NUM_BLOCKS,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use graph::{
    FeatureTap, FeatureTensor, Gradients, ModelGraph, Param, ParamId, ParamSet, TapGrads, Trace,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid segment split (s1={s1}, s2={s2}); need 1 <= s1 < s2 <= 4")]
    InvalidSplit { s1: usize, s2: usize },
    #[error("width multiplier {0} must lie in (0, 1]")]
    InvalidMultiplier(f64),
    #[error("width multiplier {multiplier} leaves block {block} with zero channels")]
    ZeroWidth { block: usize, multiplier: f64 },
    #[error("a classifier head needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("route mismatch: {0}")]
    RouteMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds and initializes a model from `seed`.
pub fn build_model(
    arch: &ArchConfig,
    main_classes: usize,
    aux_classes: usize,
    seed: u64,
) -> Result<ModelGraph, ModelError> {
    ModelGraph::build(arch, main_classes, aux_classes, seed)
}
