//! Input synthesis by gradient ascent on one class logit.

use rand::Rng;

use super::AnalysisError;
use crate::data::{INPUT_CHANNELS, INPUT_SIZE};
use crate::model::{FeatureTap, Gradients, ModelGraph, TapGrads};
use crate::rng::{stream_rng, streams};
use crate::route::Route;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ActMaxResult {
    pub class_id: usize,
    /// `(1, 3, 32, 32)` pixels in `[0, 1]`.
    pub image: Tensor,
    /// Target logit at the initialization and after every step.
    pub logit_trace: Vec<f64>,
}

impl ActMaxResult {
    pub fn initial_logit(&self) -> f64 {
        self.logit_trace[0]
    }

    pub fn final_logit(&self) -> f64 {
        *self.logit_trace.last().unwrap()
    }
}

/// Plain gradient ascent from seeded uniform noise: `x += step_size * dlogit/dx`,
/// then clamp to `[0, 1]`. No jitter or smoothness prior.
pub fn activation_maximization(
    model: &ModelGraph,
    route: Route,
    class_id: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<ActMaxResult, AnalysisError> {
    let classes = model.classes(route.task);
    if class_id >= classes {
        return Err(AnalysisError::InvalidArgument(format!(
            "class {class_id} does not exist on route {route} ({classes} classes)"
        )));
    }
    let shape = [1, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE];
    let mut rng = stream_rng(seed, streams::ACTMAX);
    let n: usize = shape.iter().product();
    let mut x = Tensor::from_vec(&shape, (0..n).map(|_| rng.gen::<f32>()).collect());
    let mut onehot = Tensor::zeros(&[1, classes]);
    onehot.data_mut()[class_id] = 1.0;
    let mut trace = Vec::with_capacity(steps + 1);
    let mut scratch = Gradients::for_params(model.params());
    for step in 0..=steps {
        let run = model
            .forward_traced(&x, route, FeatureTap::Logits)
            .map_err(|e| AnalysisError::RouteMismatch(e.to_string()))?;
        let logit = run
            .tap(FeatureTap::Logits)
            .expect("traced to logits")
            .data()[class_id] as f64;
        if !logit.is_finite() {
            return Err(AnalysisError::NonFinite(format!(
                "logit at ascent step {step}"
            )));
        }
        trace.push(logit);
        if step == steps {
            break;
        }
        let seeds = TapGrads {
            logits: Some(onehot.clone()),
            ..TapGrads::default()
        };
        let g = model
            .backward(&run, &seeds, &mut scratch, true)
            .expect("input gradient requested");
        for (xi, gi) in x.data_mut().iter_mut().zip(g.data()) {
            *xi = (*xi as f64 + step_size * *gi as f64).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(ActMaxResult {
        class_id,
        image: x,
        logit_trace: trace,
    })
}
