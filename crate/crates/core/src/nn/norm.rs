use crate::tensor::Tensor;

/// Saved state of an instance-norm forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// Normalized activations before the affine transform.
    pub xhat: Tensor,
    /// `1 / sqrt(var + eps)` per (sample, channel).
    pub inv_std: Vec<f32>,
}

/// Instance normalization: per sample and channel, standardize over the
/// spatial positions, then apply a per-channel affine transform.
pub fn instance_norm(x: &Tensor, eps: f32, scale: &[f32], shift: &[f32]) -> Tensor {
    instance_norm_forward(x, eps, scale, shift).0
}

pub fn instance_norm_forward(
    x: &Tensor,
    eps: f32,
    scale: &[f32],
    shift: &[f32],
) -> (Tensor, NormCache) {
    let (b, c, hw) = planes(x);
    assert_eq!(scale.len(), c);
    assert_eq!(shift.len(), c);
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(b * c);
    for plane in 0..b * c {
        let ch = plane % c;
        let src = &x.data()[plane * hw..(plane + 1) * hw];
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let var = src
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / hw as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        inv_std.push(inv as f32);
        let xh = &mut xhat.data_mut()[plane * hw..(plane + 1) * hw];
        for (o, &v) in xh.iter_mut().zip(src) {
            *o = ((v as f64 - mean) * inv) as f32;
        }
        let out = &mut y.data_mut()[plane * hw..(plane + 1) * hw];
        for (o, &v) in out
            .iter_mut()
            .zip(&xhat.data()[plane * hw..(plane + 1) * hw])
        {
            *o = scale[ch] * v + shift[ch];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Accumulates `dscale`/`dshift` and returns the input gradient.
pub fn instance_norm_backward(
    cache: &NormCache,
    scale: &[f32],
    dy: &Tensor,
    dscale: &mut [f32],
    dshift: &mut [f32],
) -> Tensor {
    let (b, c, hw) = planes(dy);
    let mut dx = Tensor::zeros(dy.shape());
    let n = hw as f64;
    for plane in 0..b * c {
        let ch = plane % c;
        let g = &dy.data()[plane * hw..(plane + 1) * hw];
        let xh = &cache.xhat.data()[plane * hw..(plane + 1) * hw];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for (&gi, &xi) in g.iter().zip(xh) {
            sum_g += gi as f64;
            sum_gx += gi as f64 * xi as f64;
        }
        dscale[ch] += sum_gx as f32;
        dshift[ch] += sum_g as f32;
        // dxhat = g * scale; dx = inv/N * (N dxhat - sum dxhat - xhat sum(dxhat xhat))
        let s = scale[ch] as f64;
        let inv = cache.inv_std[plane] as f64;
        let out = &mut dx.data_mut()[plane * hw..(plane + 1) * hw];
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            let v = inv / n * (n * gi as f64 - sum_g - xi as f64 * sum_gx) * s;
            *o = v as f32;
        }
    }
    dx
}

fn planes(x: &Tensor) -> (usize, usize, usize) {
    match *x.shape() {
        [b, c, h, w] => {
            assert!(
                h * w >= 1,
                "instance norm needs at least one spatial position"
            );
            (b, c, h * w)
        }
        ref s => panic!("expected a rank-4 tensor, got shape {s:?}"),
    }
}
