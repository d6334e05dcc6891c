use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use super::LossError;
use crate::route::Route;

/// Logits `(b, K)` and integer labels for one route.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet {
    pub logits: Array2<f64>,
    pub labels: Vec<usize>,
}

fn check(logits: &ArrayView2<f64>, labels: &[usize]) -> Result<(), LossError> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(LossError::ShapeMismatch(vec![b, k], vec![labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(LossError::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64, LossError> {
    check(&logits, labels)?;
    let b = labels.len().max(1) as f64;
    let mut sum = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        sum += lse - row[y];
    }
    Ok(sum / b)
}

/// Cross-entropy and its gradient `(softmax - onehot) / b`.
pub fn cross_entropy_with_grad(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), LossError> {
    check(&logits, labels)?;
    let b = labels.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut sum = 0.0;
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        sum += m + z.ln() - row[y];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - m).exp() / z / b;
        }
        g[y] -= 1.0 / b;
    }
    Ok((sum / b, grad))
}

/// Unweighted sum of cross-entropies over `pairs`.
pub fn classification_loss(
    sets: &BTreeMap<Route, LogitSet>,
    pairs: &[Route],
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for r in pairs {
        let set = sets.get(r).ok_or(LossError::MissingPair(*r))?;
        total += cross_entropy(set.logits.view(), &set.labels)?;
    }
    Ok(total)
}

pub type PairGrads = BTreeMap<Route, Array2<f64>>;

/// Sum, per-pair values and per-pair logit gradients.
pub fn classification_loss_with_grad(
    sets: &BTreeMap<Route, LogitSet>,
    pairs: &[Route],
) -> Result<(f64, BTreeMap<Route, f64>, PairGrads), LossError> {
    let mut total = 0.0;
    let mut per = BTreeMap::new();
    let mut grads = BTreeMap::new();
    for r in pairs {
        let set = sets.get(r).ok_or(LossError::MissingPair(*r))?;
        let (v, g) = cross_entropy_with_grad(set.logits.view(), &set.labels)?;
        total += v;
        per.insert(*r, v);
        grads.insert(*r, g);
    }
    Ok((total, per, grads))
}
