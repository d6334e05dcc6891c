//! Pair-counting and information-theoretic agreement between two labelings.

use std::collections::HashMap;

use super::AnalysisError;

fn check(a: &[usize], b: &[usize]) -> Result<(), AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooFewPoints { n: a.len(), min: 2 });
    }
    Ok(())
}

/// Joint and marginal counts; cluster ids are arbitrary.
struct Contingency {
    joint: HashMap<(usize, usize), u64>,
    a: HashMap<usize, u64>,
    b: HashMap<usize, u64>,
    n: u64,
}

impl Contingency {
    fn new(a: &[usize], b: &[usize]) -> Self {
        let mut c = Contingency {
            joint: HashMap::new(),
            a: HashMap::new(),
            b: HashMap::new(),
            n: a.len() as u64,
        };
        for (&x, &y) in a.iter().zip(b) {
            *c.joint.entry((x, y)).or_default() += 1;
            *c.a.entry(x).or_default() += 1;
            *c.b.entry(y).or_default() += 1;
        }
        c
    }
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Fowlkes-Mallows index `TP / sqrt((TP+FP)(TP+FN))` over unordered pairs;
/// 0 when no pair is co-clustered in both.
pub fn fmi(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    check(a, b)?;
    let c = Contingency::new(a, b);
    let tp: f64 = c.joint.values().map(|&v| pairs(v)).sum();
    if tp == 0.0 {
        return Ok(0.0);
    }
    let pa: f64 = c.a.values().map(|&v| pairs(v)).sum();
    let pb: f64 = c.b.values().map(|&v| pairs(v)).sum();
    Ok((tp / (pa * pb).sqrt()).min(1.0))
}

fn entropy(counts: &HashMap<usize, u64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&v| {
            let p = v as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies. When
/// either labeling has zero entropy the score is 1 if the partitions are
/// identical and 0 otherwise.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    check(a, b)?;
    let c = Contingency::new(a, b);
    let n = c.n as f64;
    let (ha, hb) = (entropy(&c.a, n), entropy(&c.b, n));
    if c.a.len() == 1 || c.b.len() == 1 {
        // identical partitions iff both are a single block
        return Ok(if c.a.len() == c.b.len() { 1.0 } else { 0.0 });
    }
    let mi: f64 = c
        .joint
        .iter()
        .map(|(&(x, y), &v)| {
            let pxy = v as f64 / n;
            let px = c.a[&x] as f64 / n;
            let py = c.b[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}
