use serde::{Deserialize, Serialize};

use super::ModelError;

/// Number of convolution blocks in the VGG16 layout.
pub const NUM_BLOCKS: usize = 5;
const BASE_WIDTHS: [usize; NUM_BLOCKS] = [64, 128, 256, 512, 512];
const CONV_COUNTS: [usize; NUM_BLOCKS] = [2, 2, 3, 3, 3];

/// Cut points of the five-block backbone: blocks `1..=s1` form the domain
/// segment, `s1+1..=s2` the shared segment and `s2+1..=5` the task segment.
/// Every segment holds at least one block, so `1 <= s1 < s2 <= 4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSplit", into = "RawSplit")]
pub struct SegmentSplit {
    s1: usize,
    s2: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    s1: usize,
    s2: usize,
}

impl TryFrom<RawSplit> for SegmentSplit {
    type Error = ModelError;

    fn try_from(raw: RawSplit) -> Result<Self, ModelError> {
        SegmentSplit::new(raw.s1, raw.s2)
    }
}

impl From<SegmentSplit> for RawSplit {
    fn from(s: SegmentSplit) -> Self {
        RawSplit { s1: s.s1, s2: s.s2 }
    }
}

impl SegmentSplit {
    pub fn new(s1: usize, s2: usize) -> Result<Self, ModelError> {
        if 1 <= s1 && s1 < s2 && s2 < NUM_BLOCKS {
            Ok(Self { s1, s2 })
        } else {
            Err(ModelError::InvalidSplit { s1, s2 })
        }
    }

    pub fn s1(&self) -> usize {
        self.s1
    }

    pub fn s2(&self) -> usize {
        self.s2
    }
}

impl Default for SegmentSplit {
    fn default() -> Self {
        Self { s1: 2, s2: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub split: SegmentSplit,
    pub width_multiplier: f64,
    pub in_norm_epsilon: f32,
    pub classifier_hidden: usize,
    /// Route both domain roles through the source branch (source-only control).
    pub tied_domain_branches: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            split: SegmentSplit::default(),
            width_multiplier: 1.0,
            in_norm_epsilon: 1e-5,
            classifier_hidden: 100,
            tied_domain_branches: false,
        }
    }
}

/// One VGG block: `convs` x (conv3x3 -> IN -> ReLU), then 2x2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    /// 1-based position in the backbone.
    pub index: usize,
    pub convs: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

pub fn build_backbone_blocks(width_multiplier: f64) -> Result<Vec<BlockSpec>, ModelError> {
    if !(width_multiplier > 0.0 && width_multiplier <= 1.0) {
        return Err(ModelError::InvalidMultiplier(width_multiplier));
    }
    let mut in_channels = 3;
    let mut blocks = Vec::with_capacity(NUM_BLOCKS);
    for (i, (&base, &convs)) in BASE_WIDTHS.iter().zip(&CONV_COUNTS).enumerate() {
        let out_channels = (base as f64 * width_multiplier).round() as usize;
        if out_channels == 0 {
            return Err(ModelError::ZeroWidth {
                block: i + 1,
                multiplier: width_multiplier,
            });
        }
        blocks.push(BlockSpec {
            index: i + 1,
            convs,
            in_channels,
            out_channels,
        });
        in_channels = out_channels;
    }
    Ok(blocks)
}

/// Contiguous (domain, shared, task) partition of the blocks.
pub fn split_segments(
    blocks: &[BlockSpec],
    split: SegmentSplit,
) -> (Vec<BlockSpec>, Vec<BlockSpec>, Vec<BlockSpec>) {
    let domain = blocks[..split.s1].to_vec();
    let shared = blocks[split.s1..split.s2].to_vec();
    let task = blocks[split.s2..].to_vec();
    (domain, shared, task)
}
