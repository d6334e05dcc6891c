//! Forward and reverse-mode kernels for the layers of the backbone.
//!
//! Every kernel works on NCHW `f32` tensors. Forward functions return the
//! output together with whatever the matching backward needs, so a single
//! layer can be traversed several times per step (once per data stream)
//! without the layer itself holding state.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::{conv3x3_backward, conv3x3_forward};
pub use linear::{linear_backward, linear_forward};
pub use norm::{instance_norm, instance_norm_backward, instance_norm_forward, NormCache};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolCache};

use crate::tensor::Tensor;

pub fn relu_forward(x: Tensor) -> Tensor {
    let shape = x.shape().to_vec();
    let data = x.into_data().into_iter().map(|v| v.max(0.0)).collect();
    Tensor::from_vec(&shape, data)
}

/// Backward through ReLU given the forward *output*.
pub fn relu_backward(output: &Tensor, mut grad: Tensor) -> Tensor {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// `c = alpha * a * b + beta * c` with explicit row/column strides.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
