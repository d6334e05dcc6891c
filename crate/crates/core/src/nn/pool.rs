use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winning element for every output element.
    argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2 (trailing odd rows/columns are dropped).
pub fn maxpool2_forward(x: &Tensor) -> (Tensor, PoolCache) {
    let [b, c, h, w] = match *x.shape() {
        [b, c, h, w] => [b, c, h, w],
        ref s => panic!("expected a rank-4 tensor, got shape {s:?}"),
    };
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let src = x.data();
    let dst = y.data_mut();
    let mut o = 0;
    for plane in 0..b * c {
        let base = plane * h * w;
        for yy in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * yy * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * yy + dy) * w + 2 * xx + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    (
        y,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    )
}

pub fn maxpool2_backward(cache: &PoolCache, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx as usize] += g;
    }
    dx
}
