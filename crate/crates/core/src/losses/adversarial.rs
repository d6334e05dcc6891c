use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::ce::cross_entropy_with_grad;
use super::LossError;
use crate::model::{Gradients, ParamId, ParamSet};
use crate::rng::{stream_rng, streams};

/// Domain classifier `d -> d/2 -> 2` with ReLU, trained on pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    params: ParamSet,
    input: usize,
    hidden: usize,
    ids: [ParamId; 4],
}

impl Discriminator {
    pub fn new(input: usize, seed: u64) -> Self {
        let hidden = (input / 2).max(1);
        let mut rng = stream_rng(seed, streams::DISCRIMINATOR);
        let mut uniform = |fan_in: usize, n: usize| {
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            (0..n)
                .map(|_| rng.gen_range(-bound..bound))
                .collect::<Vec<f32>>()
        };
        let mut params = ParamSet::default();
        let w1 = params.push(
            "discriminator.fc1.weight".into(),
            vec![hidden, input],
            uniform(input, hidden * input),
        );
        let b1 = params.push(
            "discriminator.fc1.bias".into(),
            vec![hidden],
            vec![0.0; hidden],
        );
        let w2 = params.push(
            "discriminator.fc2.weight".into(),
            vec![2, hidden],
            uniform(hidden, 2 * hidden),
        );
        let b2 = params.push("discriminator.fc2.bias".into(), vec![2], vec![0.0; 2]);
        Self {
            params,
            input,
            hidden,
            ids: [w1, b1, w2, b2],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn matrix(&self, id: ParamId, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_vec(
            (rows, cols),
            self.params.data(id).iter().map(|&v| v as f64).collect(),
        )
        .unwrap()
    }

    fn vector(&self, id: ParamId) -> Array1<f64> {
        self.params.data(id).iter().map(|&v| v as f64).collect()
    }

    /// Domain logits for `(n, d)` features.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let [w1, b1, w2, b2] = self.ids;
        let h = (x.dot(&self.matrix(w1, self.hidden, self.input).t()) + self.vector(b1))
            .mapv(|v| v.max(0.0));
        h.dot(&self.matrix(w2, 2, self.hidden).t()) + self.vector(b2)
    }
}

/// Result of one adversarial evaluation.
#[derive(Debug, Clone)]
pub struct AdversarialOutput {
    /// Domain-classification cross-entropy (sr = 0, t = 1).
    pub discriminator_loss: f64,
    /// Gradients reaching the feature extractors, already reversed and scaled by `-grl_lambda`.
    pub grad_t: Array2<f64>,
    pub grad_sr: Array2<f64>,
    /// Discriminator parameter gradients of its own loss.
    pub discriminator_grads: Gradients,
}

pub fn adversarial_discrepancy<'a>(
    f_t: ArrayView2<'a, f64>,
    f_sr: ArrayView2<'a, f64>,
    disc: &Discriminator,
    grl_lambda: f64,
) -> Result<AdversarialOutput, LossError> {
    if f_t.dim() != f_sr.dim() || f_t.ncols() != disc.input {
        return Err(LossError::ShapeMismatch(
            f_t.shape().to_vec(),
            f_sr.shape().to_vec(),
        ));
    }
    let b = f_sr.nrows();
    let x = concatenate(Axis(0), &[f_sr.view(), f_t.view()]).unwrap();
    let labels: Vec<usize> = (0..2 * b).map(|i| usize::from(i >= b)).collect();
    let [w1, b1, w2, b2] = disc.ids;
    let w1m = disc.matrix(w1, disc.hidden, disc.input);
    let w2m = disc.matrix(w2, 2, disc.hidden);
    let pre = x.dot(&w1m.t()) + disc.vector(b1);
    let h = pre.mapv(|v| v.max(0.0));
    let z = h.dot(&w2m.t()) + disc.vector(b2);
    let (loss, dz) = cross_entropy_with_grad(z.view(), &labels)?;
    let dw2 = dz.t().dot(&h);
    let db2 = dz.sum_axis(Axis(0));
    let mut dh = dz.dot(&w2m);
    dh.zip_mut_with(&pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let dw1 = dh.t().dot(&x);
    let db1 = dh.sum_axis(Axis(0));
    let dx = dh.dot(&w1m);
    let mut grads = Gradients::for_params(&disc.params);
    for (id, g) in [(w1, dw1.iter()), (w2, dw2.iter())] {
        grads
            .slot(&disc.params, id)
            .iter_mut()
            .zip(g)
            .for_each(|(d, &v)| *d = v as f32);
    }
    for (id, g) in [(b1, db1), (b2, db2)] {
        grads
            .slot(&disc.params, id)
            .iter_mut()
            .zip(g)
            .for_each(|(d, v)| *d = v as f32);
    }
    let reversed = dx.mapv(|v| -grl_lambda * v);
    Ok(AdversarialOutput {
        discriminator_loss: loss,
        grad_sr: reversed.slice(s![..b, ..]).to_owned(),
        grad_t: reversed.slice(s![b.., ..]).to_owned(),
        discriminator_grads: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats(b: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((b, d), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn untrained_is_near_chance() {
        let disc = Discriminator::new(16, 3);
        let out =
            adversarial_discrepancy(feats(32, 16, 1).view(), feats(32, 16, 2).view(), &disc, 1.0)
                .unwrap();
        assert!(
            (out.discriminator_loss - 2f64.ln()).abs() < 0.3,
            "{}",
            out.discriminator_loss
        );
    }

    #[test]
    fn zero_lambda_blocks_feature_gradient() {
        let disc = Discriminator::new(8, 0);
        let out = adversarial_discrepancy(feats(4, 8, 1).view(), feats(4, 8, 2).view(), &disc, 0.0)
            .unwrap();
        assert!(out
            .grad_t
            .iter()
            .chain(out.grad_sr.iter())
            .all(|&v| v == 0.0));
        assert!(out.discriminator_grads.get(disc.ids[0]).is_some());
    }

    #[test]
    fn reversal_scales_linearly() {
        let disc = Discriminator::new(6, 5);
        let (t, s) = (feats(3, 6, 7), feats(3, 6, 8));
        let one = adversarial_discrepancy(t.view(), s.view(), &disc, 1.0).unwrap();
        let half = adversarial_discrepancy(t.view(), s.view(), &disc, 0.5).unwrap();
        for (a, b) in one.grad_t.iter().zip(&half.grad_t) {
            assert!((0.5 * a - b).abs() < 1e-15);
        }
        assert_eq!(one.discriminator_loss, half.discriminator_loss);
    }

    #[test]
    fn logits_match_forward() {
        let disc = Discriminator::new(4, 1);
        let x = feats(2, 4, 3);
        assert_eq!(disc.logits(x.view()).dim(), (2, 2));
        assert!(matches!(
            adversarial_discrepancy(feats(2, 5, 0).view(), feats(2, 5, 1).view(), &disc, 1.0),
            Err(LossError::ShapeMismatch(..))
        ));
    }
}
