//! k-means++ seeding followed by Lloyd iterations.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::AnalysisError;
use crate::rng::{stream_rng, streams};

pub const DEFAULT_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
    pub inertia: f64,
    /// Inertia after seeding and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center for each row (lowest index on ties) and its squared distance.
fn assign(x: ArrayView2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.rows().into_iter().enumerate() {
                let d = sq_dist(row, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // every point coincides with a center already
            rng.gen_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, centers.row(c)));
        }
    }
    centers
}

/// Clusters the rows of `x` into `k` groups. Lloyd iterations stop at an
/// assignment fixpoint or after `max_iters`. A cluster left empty is moved
/// onto the point farthest from its own center.
pub fn kmeans(
    x: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult, AnalysisError> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(AnalysisError::KTooLarge { k, n });
    }
    let mut rng = stream_rng(seed, streams::KMEANS);
    let mut centers = plus_plus(x, k, &mut rng);
    let (mut labels, mut d2) = assign(x, &centers);
    let mut trace = vec![d2.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, x.ncols()));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &x.row(i));
            counts[l] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centers
                    .row_mut(j)
                    .assign(&(&sums.row(j) / counts[j] as f64));
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a free point");
            taken[far] = true;
            centers.row_mut(j).assign(&x.row(far));
        }
        let (next, next_d2) = assign(x, &centers);
        trace.push(next_d2.iter().sum());
        d2 = next_d2;
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeansResult {
        labels,
        inertia: *trace.last().unwrap(),
        centers,
        inertia_trace: trace,
        iterations,
    })
}

/// Column means; the k = 1 solution.
pub fn mean_row(x: ArrayView2<f64>) -> ndarray::Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty")
}
