//! Dataset ingestion, domain-variant synthesis and batching.

mod batch;
mod idx;
mod load;
mod transforms;
mod views;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{make_batches, make_paired_batches, Batch, BatchIter, PairedBatchIter};
pub use idx::{parse_idx, serialize_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};
pub use load::{expected_files, load_task_dataset, subset};
pub use transforms::{resize_bilinear, to_color, to_edge, to_negative, BackgroundSource};
pub use views::{build_domain_view, make_paired_aux, ViewBuilder, TRANSFORM_VERSION};

/// Side length of every preprocessed image.
pub const INPUT_SIZE: usize = 32;
/// Channels of every preprocessed image.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown IDX magic word {0:#010x}")]
    BadMagic(u32),
    #[error("IDX data truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX data has trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("missing dataset file {path}; expected files: {}", expected.join(", "))]
    MissingFile {
        path: PathBuf,
        expected: Vec<String>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("background source {0} contains no usable images")]
    EmptyBackgroundSource(String),
    #[error("source and target domain are both {0}")]
    SameDomain(DomainId),
    #[error("({main}, {aux}) is not a valid (main, auxiliary) task pair")]
    InvalidTaskPair { main: TaskId, aux: TaskId },
    #[error("empty image set")]
    EmptySet,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("domain views must be built from the G-dom base set, got {0}")]
    NotBaseDomain(DomainId),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("image decoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four classification tasks (datasets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "D_M")]
    Mnist,
    #[serde(rename = "D_F")]
    Fashion,
    #[serde(rename = "D_E")]
    Emnist,
    #[serde(rename = "D_N")]
    Nist,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Mnist, TaskId::Fashion, TaskId::Emnist, TaskId::Nist];

    pub fn class_count(self) -> usize {
        match self {
            TaskId::Mnist | TaskId::Fashion => 10,
            TaskId::Emnist => 26,
            TaskId::Nist => 52,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            TaskId::Mnist => "D_M",
            TaskId::Fashion => "D_F",
            TaskId::Emnist => "D_E",
            TaskId::Nist => "D_N",
        }
    }

    /// Checks a (main, auxiliary) pair. The two letter datasets cannot assist
    /// each other, and a task cannot be its own auxiliary.
    pub fn validate_pair(main: TaskId, aux: TaskId) -> Result<(), DataError> {
        let letters = |t| matches!(t, TaskId::Emnist | TaskId::Nist);
        if main == aux || (letters(main) && letters(aux)) {
            Err(DataError::InvalidTaskPair { main, aux })
        } else {
            Ok(())
        }
    }

    /// All valid (main, auxiliary) pairs in a fixed order.
    pub fn valid_pairs() -> Vec<(TaskId, TaskId)> {
        let mut pairs = Vec::new();
        for main in Self::ALL {
            for aux in Self::ALL {
                if Self::validate_pair(main, aux).is_ok() {
                    pairs.push((main, aux));
                }
            }
        }
        pairs
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| format!("unknown task {s:?} (expected D_M, D_F, D_E or D_N)"))
    }
}

/// Image domains: gray (identity), color, edge and negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainId {
    #[serde(rename = "G")]
    Gray,
    #[serde(rename = "C")]
    Color,
    #[serde(rename = "E")]
    Edge,
    #[serde(rename = "N")]
    Negative,
}

impl DomainId {
    pub const ALL: [DomainId; 4] = [
        DomainId::Gray,
        DomainId::Color,
        DomainId::Edge,
        DomainId::Negative,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DomainId::Gray => "G",
            DomainId::Color => "C",
            DomainId::Edge => "E",
            DomainId::Negative => "N",
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-dom", self.tag())
    }
}

impl FromStr for DomainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainId::ALL
            .into_iter()
            .find(|d| d.tag() == s)
            .ok_or_else(|| format!("unknown domain {s:?} (expected G, C, E or N)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// A stack of `n` images stored as `(n, height, width, channels)` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageStack {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageStack {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(pixels.len() % (height * width * channels).max(1), 0);
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.image_len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Images and labels for one (task, domain) view of a dataset split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImageSet {
    pub images: ImageStack,
    pub labels: Vec<usize>,
    pub task: TaskId,
    pub domain: DomainId,
    pub split: Split,
    /// Position of each image in the original G-dom split.
    pub origin_indices: Vec<usize>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.labels.len();
        if self.images.len() != n || self.origin_indices.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} images, {} labels, {} origin indices",
                self.images.len(),
                n,
                self.origin_indices.len()
            )));
        }
        let classes = self.task.class_count();
        if let Some(&label) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::LabelOutOfRange { label, classes });
        }
        let mut seen = self.origin_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Inconsistent("duplicate origin indices".into()));
        }
        Ok(())
    }
}

/// Auxiliary-task samples seen in both domains, aligned position-wise.
#[derive(Debug, Clone)]
pub struct PairedAuxSet {
    pub source_view: LabeledImageSet,
    pub target_view: LabeledImageSet,
}

impl PairedAuxSet {
    pub fn len(&self) -> usize {
        self.source_view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_view.is_empty()
    }
}
