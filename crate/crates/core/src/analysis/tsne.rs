//! Exact O(n^2) t-SNE.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};

use super::AnalysisError;
use crate::rng::{stream_rng, streams};

/// Exact t-SNE is quadratic; larger inputs must be subsampled first.
pub const MAX_POINTS: usize = 2000;

const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_SWITCH: usize = 250;
const LEARNING_RATE: f64 = 200.0;
const MIN_GAIN: f64 = 0.01;
const SEARCH_STEPS: usize = 50;
const SEARCH_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `(n, 2)` centered coordinates.
    pub embedding: Array2<f64>,
    /// KL(P || Q) against the unexaggerated P, one entry per iteration.
    pub kl_trace: Vec<f64>,
}

fn pairwise_sq(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta`; returns its
/// entropy in nats.
fn conditional_row(d: &Array2<f64>, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = d.nrows();
    // shift by the nearest neighbour so the largest weight is exp(0)
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| d[[i, j]])
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i {
            0.0
        } else {
            (-(d[[i, j]] - dmin) * beta).exp()
        };
        sum += out[j];
    }
    let mut weighted = 0.0;
    for j in 0..n {
        out[j] /= sum;
        weighted += out[j] * (d[[i, j]] - dmin);
    }
    sum.ln() + beta * weighted
}

/// Joint affinities: per-point bandwidths found by bisection on the entropy,
/// then symmetrized and normalized to sum 1.
pub fn joint_probabilities(x: ArrayView2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = pairwise_sq(x);
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..SEARCH_STEPS {
            let h = conditional_row(&d, i, beta, &mut row);
            let diff = h - target;
            if diff.abs() < SEARCH_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = if lo.is_finite() {
                    (beta + lo) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        conditional_row(&d, i, beta, &mut row);
        p.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    let sym = &p + &p.t();
    let total = sym.sum();
    sym.mapv(|v| (v / total).max(P_FLOOR))
}

/// Student-t kernel numerators `1 / (1 + |yi - yj|^2)` with a zero diagonal.
fn student_weights(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let mut w = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[[i, j]] = v;
            w[[j, i]] = v;
            sum += 2.0 * v;
        }
    }
    (w, sum)
}

fn kl(p: &Array2<f64>, w: &Array2<f64>, wsum: f64) -> f64 {
    let n = p.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (w[[i, j]] / wsum).max(P_FLOOR);
                total += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
    }
    total
}

/// Embeds the rows of `x` in two dimensions. Gradient descent with gains,
/// momentum 0.5 then 0.8 from iteration 250, early exaggeration x12 for the
/// first 250 iterations and learning rate 200; the embedding is re-centered
/// after every step.
pub fn tsne_embed(
    x: ArrayView2<f64>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<TsneResult, AnalysisError> {
    let n = x.nrows();
    if n < 5 {
        return Err(AnalysisError::TooFewPoints { n, min: 5 });
    }
    if n > MAX_POINTS {
        return Err(AnalysisError::TooManyPoints { n, max: MAX_POINTS });
    }
    if !(perplexity > 0.0 && perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(AnalysisError::PerplexityTooHigh { perplexity, n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite("t-SNE input".into()));
    }
    let p = joint_probabilities(x, perplexity);
    let mut rng = stream_rng(seed, streams::TSNE);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| init.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_trace = Vec::with_capacity(iterations);
    let mut grad = Array2::<f64>::zeros((n, 2));
    for it in 0..iterations {
        let exaggeration = if it < EXAGGERATION_ITERS {
            EXAGGERATION
        } else {
            1.0
        };
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let (w, wsum) = student_weights(&y);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coeff = 4.0 * (exaggeration * p[[i, j]] - w[[i, j]] / wsum) * w[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) {
                *gain + 0.2
            } else {
                *gain * 0.8
            };
            *gain = gain.max(MIN_GAIN);
        }
        velocity = &velocity * momentum - &(&gains * &grad) * LEARNING_RATE;
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("n >= 5");
        y -= &mean;
        let (w, wsum) = student_weights(&y);
        let cost = kl(&p, &w, wsum);
        if !cost.is_finite() {
            return Err(AnalysisError::NonFinite(format!(
                "t-SNE KL at iteration {it}"
            )));
        }
        kl_trace.push(cost);
    }
    Ok(TsneResult {
        embedding: y,
        kl_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{fmi, kmeans};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, d), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + sep * labels[i] as f64
        });
        (x, labels)
    }

    #[test]
    fn perplexity_matches_target() {
        let (x, _) = blobs(60, 4, 3.0, 1);
        let n = x.nrows();
        let d = pairwise_sq(x.view());
        // recover each conditional row from the joint matrix is lossy, so
        // recheck the bisection directly
        let mut row = vec![0.0; n];
        for perp in [5.0, 15.0] {
            for i in [0, 17, 59] {
                let (mut lo, mut hi) = (1e-6f64, 1e3);
                for _ in 0..200 {
                    let mid = (lo * hi).sqrt();
                    if conditional_row(&d, i, mid, &mut row) > f64::ln(perp) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let h = conditional_row(&d, i, lo, &mut row);
                assert!((h - f64::ln(perp)).abs() < 1e-6);
            }
        }
        let p = joint_probabilities(x.view(), 10.0);
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, _) = blobs(10, 2, 1.0, 0);
        assert!(matches!(
            tsne_embed(x.view(), 3.0, 10, 0),
            Err(AnalysisError::PerplexityTooHigh { .. })
        ));
        let small = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            tsne_embed(small.view(), 1.0, 10, 0),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn five_points_finite() {
        let (x, _) = blobs(5, 3, 2.0, 4);
        let r = tsne_embed(x.view(), 1.0, 300, 2).unwrap();
        assert!(r.embedding.iter().all(|v| v.is_finite()));
        assert!(r.kl_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn centered_and_deterministic() {
        let (x, _) = blobs(40, 5, 4.0, 2);
        let a = tsne_embed(x.view(), 8.0, 300, 3).unwrap();
        let mean = a.embedding.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-6));
        assert_eq!(a, tsne_embed(x.view(), 8.0, 300, 3).unwrap());
    }

    #[test]
    fn separates_blobs() {
        let (x, labels) = blobs(200, 10, 6.0, 3);
        let r = tsne_embed(x.view(), 30.0, 1000, 7).unwrap();
        let tail = &r.kl_trace[r.kl_trace.len() - 100..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "KL rose {} -> {}", w[0], w[1]);
        }
        let km = kmeans(r.embedding.view(), 2, 0, 300).unwrap();
        assert!(fmi(&km.labels, &labels).unwrap() > 0.9);
    }
}
