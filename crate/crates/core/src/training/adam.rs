use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Gradients, ParamId, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Filled from the experiment seed; not part of the optimizer JSON.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0006,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 80,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Adam moments. Each parameter keeps its own step count so that a
/// parameter skipped on some steps gets the usual bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    param_steps: Vec<u64>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| vec![0.0; p.data.len()])
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            param_steps: vec![0; params.len()],
            step: 0,
        }
    }

    /// Number of `adam_step` calls so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param_step(&self, id: ParamId) -> u64 {
        self.param_steps[id.0]
    }
}

/// One bias-corrected Adam update. Parameters with no gradient slot are left
/// untouched, moments included.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradient slots, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps, lr) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.learning_rate);
    for i in 0..params.len() {
        let id = ParamId(i);
        let Some(g) = grads.get(id) else { continue };
        let p = params.get_mut(id);
        if g.len() != p.data.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "gradient for {} has {} entries, parameter has {}",
                p.name,
                g.len(),
                p.data.len()
            )));
        }
        state.param_steps[i] += 1;
        let t = state.param_steps[i] as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            let m_new = b1 * *mi as f64 + (1.0 - b1) * gi;
            let v_new = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}
