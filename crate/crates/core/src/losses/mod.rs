//! Composite objective `gamma * l_cls + l_d`, evaluated in f64.

mod adversarial;
mod ce;
mod discrepancy;

pub use adversarial::{adversarial_discrepancy, AdversarialOutput, Discriminator};
pub use ce::{
    classification_loss, classification_loss_with_grad, cross_entropy, cross_entropy_with_grad,
    LogitSet,
};
pub use discrepancy::{
    global_avg_pool, global_avg_pool_backward, l1_discrepancy, l1_discrepancy_with_grad,
    median_bandwidth, mmd_discrepancy, mmd_discrepancy_with_grad,
};

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::route::Route;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no logits supplied for classification pair {0}")]
    MissingPair(Route),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("need at least 2 samples per side, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite loss component {component} = {value}")]
    NonFinite { component: String, value: f64 },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discrepancy {
    L1,
    Mmd,
    Adversarial,
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discrepancy::L1 => "l1",
            Discrepancy::Mmd => "mmd",
            Discrepancy::Adversarial => "adversarial",
        })
    }
}

impl std::str::FromStr for Discrepancy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(Discrepancy::L1),
            "mmd" => Ok(Discrepancy::Mmd),
            "adversarial" => Ok(Discrepancy::Adversarial),
            _ => Err(format!(
                "unknown discrepancy {s:?}; expected l1, mmd or adversarial"
            )),
        }
    }
}

/// Gaussian kernel widths, given as `sigma^2` values.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidths {
    Fixed(Vec<f64>),
    /// One width set per batch to the median pairwise squared distance.
    MedianHeuristic,
}

const MEDIAN_HEURISTIC: &str = "median-heuristic";

impl Serialize for Bandwidths {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidths::Fixed(v) => v.serialize(s),
            Bandwidths::MedianHeuristic => s.serialize_str(MEDIAN_HEURISTIC),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidths {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(Bandwidths::Fixed(v)),
            Raw::Name(n) if n == MEDIAN_HEURISTIC => Ok(Bandwidths::MedianHeuristic),
            Raw::Name(n) => Err(de::Error::custom(format!(
                "bandwidths must be a list of positive numbers or {MEDIAN_HEURISTIC:?}, got {n:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    pub cls_pairs: Vec<Route>,
    pub discrepancy: Discrepancy,
    pub mmd_bandwidths: Bandwidths,
    pub grl_lambda: f64,
    /// Multiplies the discrepancy term; 0 removes it (ablation and baseline runs).
    pub discrepancy_weight: f64,
}

pub const DEFAULT_GAMMA: f64 = 50.0;
/// Weighting from the earlier formulation.
pub const LEGACY_GAMMA: f64 = 0.1;

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            cls_pairs: vec![Route::SOURCE_MAIN, Route::SOURCE_AUX, Route::TARGET_AUX],
            discrepancy: Discrepancy::L1,
            mmd_bandwidths: Bandwidths::MedianHeuristic,
            grl_lambda: 1.0,
            discrepancy_weight: 1.0,
        }
    }
}

impl LossConfig {
    /// Classification over `(sr,m)` and `(sr,a)` only; the target branch learns from `l_d` alone.
    pub fn two_pair() -> Self {
        Self {
            cls_pairs: vec![Route::SOURCE_MAIN, Route::SOURCE_AUX],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: String| Err(LossError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !self.cls_pairs.contains(&Route::SOURCE_MAIN) {
            return bad("cls_pairs must contain (sr,m)".into());
        }
        for (i, r) in self.cls_pairs.iter().enumerate() {
            if *r == Route::TARGET_MAIN {
                return bad("(t,m) is the zero-shot pair and cannot be supervised".into());
            }
            if self.cls_pairs[..i].contains(r) {
                return bad(format!("duplicate pair {r} in cls_pairs"));
            }
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return bad(format!("grl_lambda must be >= 0, got {}", self.grl_lambda));
        }
        if !(self.discrepancy_weight >= 0.0 && self.discrepancy_weight.is_finite()) {
            return bad(format!(
                "discrepancy_weight must be >= 0, got {}",
                self.discrepancy_weight
            ));
        }
        if let Bandwidths::Fixed(v) = &self.mmd_bandwidths {
            if v.is_empty() || v.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
                return bad(format!(
                    "mmd_bandwidths must be non-empty and positive, got {v:?}"
                ));
            }
        }
        Ok(())
    }

    /// Whether the discrepancy term contributes at all.
    pub fn uses_discrepancy(&self) -> bool {
        self.discrepancy_weight > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_cls: f64,
    pub l_d: f64,
    pub per_pair_ce: BTreeMap<Route, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator_loss: Option<f64>,
}

/// Assembles the breakdown, rejecting any non-finite component.
pub fn total_loss(
    l_cls: f64,
    l_d: f64,
    per_pair_ce: BTreeMap<Route, f64>,
    discriminator_loss: Option<f64>,
    config: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let check = |name: &str, v: f64| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(LossError::NonFinite {
                component: name.to_owned(),
                value: v,
            })
        }
    };
    for (r, &v) in &per_pair_ce {
        check(&format!("ce{r}"), v)?;
    }
    check("l_cls", l_cls)?;
    check("l_d", l_d)?;
    if let Some(v) = discriminator_loss {
        check("discriminator", v)?;
    }
    let total = config.gamma * l_cls + l_d;
    check("total", total)?;
    Ok(LossBreakdown {
        total,
        l_cls,
        l_d,
        per_pair_ce,
        discriminator_loss,
    })
}
