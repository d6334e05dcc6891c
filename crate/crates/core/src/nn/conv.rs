use super::gemm;
use crate::tensor::Tensor;

const K: usize = 3;

/// Unfolds one CHW sample into a `(c*9, h*w)` patch matrix, zero padding 1.
fn im2col(sample: &[f32], c: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &sample[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut col[((ci * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto a CHW sample gradient.
fn col2im(col: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &col[((ci * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, no bias.
///
/// `weight` is laid out `(out_ch, in_ch, 3, 3)`.
pub fn conv3x3_forward(x: &Tensor, weight: &[f32], out_ch: usize) -> Tensor {
    let [b, c, h, w] = dims4(x);
    assert_eq!(weight.len(), out_ch * c * K * K, "conv weight shape");
    let hw = h * w;
    let ck = c * K * K;
    let mut col = vec![0.0; ck * hw];
    let mut y = Tensor::zeros(&[b, out_ch, h, w]);
    let out_len = out_ch * hw;
    for n in 0..b {
        im2col(x.sample(n), c, h, w, &mut col);
        let dst = &mut y.data_mut()[n * out_len..(n + 1) * out_len];
        gemm(out_ch, ck, hw, weight, (ck, 1), &col, (hw, 1), 0.0, dst);
    }
    y
}

/// Accumulates the weight gradient into `dweight` and, when requested,
/// returns the input gradient.
pub fn conv3x3_backward(
    x: &Tensor,
    weight: &[f32],
    out_ch: usize,
    dy: &Tensor,
    dweight: &mut [f32],
    need_dx: bool,
) -> Option<Tensor> {
    let [b, c, h, w] = dims4(x);
    let hw = h * w;
    let ck = c * K * K;
    assert_eq!(dy.shape(), &[b, out_ch, h, w]);
    let mut col = vec![0.0; ck * hw];
    let mut dcol = vec![0.0; ck * hw];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let in_len = c * hw;
    for n in 0..b {
        let g = dy.sample(n);
        im2col(x.sample(n), c, h, w, &mut col);
        // dW (out, ck) += dY (out, hw) * col^T (hw, ck)
        gemm(out_ch, hw, ck, g, (hw, 1), &col, (1, hw), 1.0, dweight);
        if let Some(dx) = dx.as_mut() {
            // dcol (ck, hw) = W^T (ck, out) * dY (out, hw)
            gemm(ck, out_ch, hw, weight, (1, ck), g, (hw, 1), 0.0, &mut dcol);
            col2im(
                &dcol,
                c,
                h,
                w,
                &mut dx.data_mut()[n * in_len..(n + 1) * in_len],
            );
        }
    }
    dx
}

fn dims4(x: &Tensor) -> [usize; 4] {
    match *x.shape() {
        [b, c, h, w] => [b, c, h, w],
        ref s => panic!("expected a rank-4 tensor, got shape {s:?}"),
    }
}
