use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, Axis, Zip};

use super::{Bandwidths, LossError};

fn same_shape(a: &[usize], b: &[usize]) -> Result<(), LossError> {
    if a == b {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch(a.to_vec(), b.to_vec()))
    }
}

/// Mean absolute element-wise difference of position-paired features.
pub fn l1_discrepancy(f_t: ArrayViewD<f64>, f_sr: ArrayViewD<f64>) -> Result<f64, LossError> {
    same_shape(f_t.shape(), f_sr.shape())?;
    let n = f_t.len().max(1) as f64;
    let sum = Zip::from(&f_t)
        .and(&f_sr)
        .fold(0.0, |acc, &a, &b| acc + (a - b).abs());
    Ok(sum / n)
}

/// Value plus gradients w.r.t. `f_t` and `f_sr` (subgradient 0 at ties).
pub fn l1_discrepancy_with_grad(
    f_t: ArrayViewD<f64>,
    f_sr: ArrayViewD<f64>,
) -> Result<(f64, ArrayD<f64>, ArrayD<f64>), LossError> {
    let v = l1_discrepancy(f_t.view(), f_sr.view())?;
    let n = f_t.len().max(1) as f64;
    let g_t = Zip::from(&f_t).and(&f_sr).map_collect(|&a, &b| {
        let d = a - b;
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    let g_sr = g_t.mapv(|g| -g);
    Ok((v, g_t, g_sr))
}

/// `(b, c, h, w)` -> `(b, c)` spatial mean.
pub fn global_avg_pool(x: ArrayViewD<f64>) -> Array2<f64> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "expected (b, c, h, w), got {s:?}");
    let (b, c) = (s[0], s[1]);
    let flat = x
        .to_shape((b, c, s[2] * s[3]))
        .expect("contiguous pooling input");
    flat.mean_axis(Axis(2)).expect("non-empty spatial extent")
}

/// Spreads a `(b, c)` gradient uniformly over `(b, c, h, w)`.
pub fn global_avg_pool_backward(grad: ArrayView2<f64>, shape: &[usize]) -> ArrayD<f64> {
    let hw = (shape[2] * shape[3]) as f64;
    let (b, c) = grad.dim();
    assert_eq!((b, c), (shape[0], shape[1]));
    let g = grad.mapv(|v| v / hw);
    let g4 = g.into_shape_with_order((b, c, 1, 1)).unwrap();
    g4.broadcast(shape.to_vec()).unwrap().to_owned().into_dyn()
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of pairwise squared distances over the joint sample, or 1 when the
/// median is 0.
pub fn median_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let rows: Vec<_> = x.rows().into_iter().chain(y.rows()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn resolve(bw: &Bandwidths, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Vec<f64> {
    match bw {
        Bandwidths::Fixed(v) => v.clone(),
        Bandwidths::MedianHeuristic => vec![median_bandwidth(x, y)],
    }
}

fn check_pair(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<(), LossError> {
    if x.ncols() != y.ncols() {
        return Err(LossError::ShapeMismatch(
            x.shape().to_vec(),
            y.shape().to_vec(),
        ));
    }
    let least = x.nrows().min(y.nrows());
    if least < 2 {
        return Err(LossError::TooFewSamples(least));
    }
    Ok(())
}

/// `sum_s exp(-d2 / (2 s))`.
fn kernel(d2: f64, widths: &[f64]) -> f64 {
    widths.iter().map(|&s| (-d2 / (2.0 * s)).exp()).sum()
}

/// `d kernel / d d2`.
fn kernel_slope(d2: f64, widths: &[f64]) -> f64 {
    widths
        .iter()
        .map(|&s| -(-d2 / (2.0 * s)).exp() / (2.0 * s))
        .sum()
}

/// Summed in sorted order so the result does not depend on argument order.
fn mean_kernel(a: ArrayView2<f64>, b: ArrayView2<f64>, widths: &[f64]) -> f64 {
    let mut vals = Vec::with_capacity(a.nrows() * b.nrows());
    for ra in a.rows() {
        for rb in b.rows() {
            vals.push(kernel(sq_dist(ra, rb), widths));
        }
    }
    vals.sort_by(f64::total_cmp);
    vals.iter().sum::<f64>() / (a.nrows() * b.nrows()) as f64
}

/// Biased squared MMD between pooled `(b, d)` features with a sum of
/// Gaussian kernels. The median-heuristic width is treated as a constant.
pub fn mmd_discrepancy(
    f_t: ArrayView2<f64>,
    f_sr: ArrayView2<f64>,
    bandwidths: &Bandwidths,
) -> Result<f64, LossError> {
    check_pair(&f_t, &f_sr)?;
    let w = resolve(bandwidths, f_t, f_sr);
    let v =
        mean_kernel(f_t, f_t, &w) + mean_kernel(f_sr, f_sr, &w) - 2.0 * mean_kernel(f_t, f_sr, &w);
    Ok(v.max(0.0))
}

/// Gradient contribution of one mean-kernel block to its first argument.
fn accumulate(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    widths: &[f64],
    coef: f64,
    ga: &mut Array2<f64>,
) {
    for (i, ra) in a.rows().into_iter().enumerate() {
        for rb in b.rows() {
            let s = coef * kernel_slope(sq_dist(ra, rb), widths) * 2.0;
            for ((g, &x), &y) in ga.row_mut(i).iter_mut().zip(ra).zip(rb) {
                *g += s * (x - y);
            }
        }
    }
}

pub fn mmd_discrepancy_with_grad(
    f_t: ArrayView2<f64>,
    f_sr: ArrayView2<f64>,
    bandwidths: &Bandwidths,
) -> Result<(f64, Array2<f64>, Array2<f64>), LossError> {
    check_pair(&f_t, &f_sr)?;
    let w = resolve(bandwidths, f_t, f_sr);
    let (n, m) = (f_t.nrows() as f64, f_sr.nrows() as f64);
    let raw =
        mean_kernel(f_t, f_t, &w) + mean_kernel(f_sr, f_sr, &w) - 2.0 * mean_kernel(f_t, f_sr, &w);
    let mut g_t = Array2::zeros(f_t.dim());
    let mut g_sr = Array2::zeros(f_sr.dim());
    // each symmetric within-set pair appears twice in the double sum
    accumulate(f_t, f_t, &w, 2.0 / (n * n), &mut g_t);
    accumulate(f_sr, f_sr, &w, 2.0 / (m * m), &mut g_sr);
    accumulate(f_t, f_sr, &w, -2.0 / (n * m), &mut g_t);
    accumulate(f_sr, f_t, &w, -2.0 / (n * m), &mut g_sr);
    // clamping only ever removes rounding noise around 0
    Ok((raw.max(0.0), g_t, g_sr))
}
