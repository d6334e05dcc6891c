use super::gemm;
use crate::tensor::Tensor;

/// `y = x W^T + b` for `x` of shape `(batch, in)` and `W` of shape `(out, in)`.
pub fn linear_forward(x: &Tensor, weight: &[f32], bias: &[f32]) -> Tensor {
    let (b, fan_in) = (x.batch(), x.sample_len());
    let out = bias.len();
    assert_eq!(weight.len(), out * fan_in, "linear weight shape");
    let mut y = Tensor::zeros(&[b, out]);
    for row in y.data_mut().chunks_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(
        b,
        fan_in,
        out,
        x.data(),
        (fan_in, 1),
        weight,
        (1, fan_in),
        1.0,
        y.data_mut(),
    );
    y
}

/// Accumulates parameter gradients and returns the input gradient with the
/// input's original shape.
pub fn linear_backward(
    x: &Tensor,
    weight: &[f32],
    dy: &Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
) -> Tensor {
    let (b, fan_in) = (x.batch(), x.sample_len());
    let out = dbias.len();
    assert_eq!(dy.shape(), &[b, out]);
    for row in dy.data().chunks(out) {
        for (db, g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    // dW (out, in) += dY^T (out, b) * x (b, in)
    gemm(
        out,
        b,
        fan_in,
        dy.data(),
        (1, out),
        x.data(),
        (fan_in, 1),
        1.0,
        dweight,
    );
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        b,
        out,
        fan_in,
        dy.data(),
        (out, 1),
        weight,
        (fan_in, 1),
        0.0,
        dx.data_mut(),
    );
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_small_case() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let w = [0.5, -1.0, 2.0, 1.0, 1.0, 1.0];
        let b = [0.1, -0.2];
        let y = linear_forward(&x, &w, &b);
        assert_eq!(
            y.data(),
            &[
                0.5 - 2.0 + 6.0 + 0.1,
                6.0 - 0.2,
                -0.5 + 2.0 + 0.1,
                0.0 - 0.2
            ]
        );
        let dy = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let dx = linear_backward(&x, &w, &dy, &mut dw, &mut db);
        assert_eq!(db, [1.0, 1.0]);
        assert_eq!(dw, [1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        assert_eq!(dx.data(), &[0.5, -1.0, 2.0, 1.0, 1.0, 1.0]);
    }
}
