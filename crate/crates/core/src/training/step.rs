use std::collections::BTreeMap;

use ndarray::{ArrayD, Ix2};

use super::adam::{adam_step, AdamState, OptimizerConfig};
use super::TrainError;
use crate::data::Batch;
use crate::losses::{
    adversarial_discrepancy, classification_loss_with_grad, global_avg_pool,
    global_avg_pool_backward, l1_discrepancy_with_grad, mmd_discrepancy_with_grad, total_loss,
    Discrepancy, Discriminator, LogitSet, LossBreakdown, LossConfig,
};
use crate::model::{FeatureTap, Gradients, ModelGraph, TapGrads, Trace};
use crate::route::Route;
use crate::tensor::Tensor;

/// Which objective terms to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub classification: bool,
    pub discrepancy: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        classification: true,
        discrepancy: true,
    };
    pub const CLASSIFICATION: Terms = Terms {
        classification: true,
        discrepancy: false,
    };
    pub const DISCREPANCY: Terms = Terms {
        classification: false,
        discrepancy: true,
    };
}

/// Loss values, gradients and per-pair hit counts of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub breakdown: LossBreakdown,
    /// `(correct, seen)` per supervised pair.
    pub hits: BTreeMap<Route, (usize, usize)>,
}

#[derive(Debug)]
pub struct StepGradients {
    pub report: StepReport,
    pub model: Gradients,
    pub discriminator: Option<Gradients>,
}

/// Model plus optimizer state for joint training over the three streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelGraph,
    pub discriminator: Option<Discriminator>,
    adam: AdamState,
    disc_adam: Option<AdamState>,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

pub(crate) fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        // strict comparison keeps the lowest index on ties
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl Trainer {
    pub fn new(
        model: ModelGraph,
        loss: LossConfig,
        optimizer: OptimizerConfig,
    ) -> Result<Self, TrainError> {
        loss.validate()?;
        optimizer.validate().map_err(TrainError::Config)?;
        let discriminator =
            (loss.discrepancy == Discrepancy::Adversarial && loss.uses_discrepancy()).then(|| {
                let channels = model.tap_shape(FeatureTap::P, crate::TaskRole::Aux, 1)[1];
                Discriminator::new(channels, optimizer.seed)
            });
        let adam = AdamState::new(model.params());
        let disc_adam = discriminator.as_ref().map(|d| AdamState::new(d.params()));
        Ok(Self {
            model,
            discriminator,
            adam,
            disc_adam,
            loss,
            optimizer,
        })
    }

    pub fn into_model(self) -> ModelGraph {
        self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    fn needs_aux(&self) -> bool {
        self.loss.uses_discrepancy()
            || self.loss.cls_pairs.contains(&Route::SOURCE_AUX)
            || self.loss.cls_pairs.contains(&Route::TARGET_AUX)
    }

    /// Forward all streams, evaluate the selected terms and backpropagate them
    /// into one gradient set. Loss values always cover the full objective.
    pub fn compute_gradients(
        &self,
        main: &Batch,
        aux: Option<(&Batch, &Batch)>,
        terms: Terms,
    ) -> Result<StepGradients, TrainError> {
        if main.route != Route::SOURCE_MAIN {
            return Err(TrainError::Route(format!(
                "main batch has route {}",
                main.route
            )));
        }
        let aux = match (aux, self.needs_aux()) {
            (Some((s, t)), true) => {
                if s.route != Route::SOURCE_AUX || t.route != Route::TARGET_AUX {
                    return Err(TrainError::Route(format!(
                        "aux batches have routes {} and {}",
                        s.route, t.route
                    )));
                }
                if s.origin_indices != t.origin_indices {
                    return Err(TrainError::Route(
                        "aux batches are not position-paired".into(),
                    ));
                }
                Some((s, t))
            }
            (None, true) => {
                return Err(TrainError::Route(
                    "objective needs auxiliary batches".into(),
                ))
            }
            (_, false) => None,
        };
        let cfg = &self.loss;
        let model = &self.model;

        let depth = |route: Route| {
            if cfg.cls_pairs.contains(&route) {
                FeatureTap::Logits
            } else {
                FeatureTap::P
            }
        };
        let mut traces: Vec<(Trace, &Batch)> = vec![(
            model.forward_traced(&main.pixels, main.route, FeatureTap::Logits)?,
            main,
        )];
        if let Some((s, t)) = aux {
            traces.push((model.forward_traced(&s.pixels, s.route, depth(s.route))?, s));
            traces.push((model.forward_traced(&t.pixels, t.route, depth(t.route))?, t));
        }

        // classification
        let mut sets = BTreeMap::new();
        let mut hits = BTreeMap::new();
        for (trace, batch) in &traces {
            if !cfg.cls_pairs.contains(&batch.route) {
                continue;
            }
            let logits = trace
                .tap(FeatureTap::Logits)
                .expect("traced to logits")
                .to_f64();
            let logits = logits
                .into_dimensionality::<Ix2>()
                .expect("logits are rank 2");
            let correct = logits
                .rows()
                .into_iter()
                .zip(&batch.labels)
                .filter(|(row, &y)| argmax(row.iter().copied()) == y)
                .count();
            hits.insert(batch.route, (correct, batch.len()));
            sets.insert(
                batch.route,
                LogitSet {
                    logits,
                    labels: batch.labels.clone(),
                },
            );
        }
        let (l_cls, per_pair, cls_grads) = classification_loss_with_grad(&sets, &cfg.cls_pairs)?;

        // discrepancy at tap p
        let mut l_d = 0.0;
        let mut disc_loss = None;
        let mut p_grads: Option<(ArrayD<f64>, ArrayD<f64>)> = None;
        let mut disc_grads = None;
        if aux.is_some() && cfg.uses_discrepancy() {
            let f_sr = traces[1]
                .0
                .tap(FeatureTap::P)
                .expect("traced to p")
                .to_f64();
            let f_t = traces[2]
                .0
                .tap(FeatureTap::P)
                .expect("traced to p")
                .to_f64();
            let w = cfg.discrepancy_weight;
            let (value, g_t, g_sr) = match cfg.discrepancy {
                Discrepancy::L1 => l1_discrepancy_with_grad(f_t.view(), f_sr.view())?,
                Discrepancy::Mmd => {
                    let (pt, ps) = (global_avg_pool(f_t.view()), global_avg_pool(f_sr.view()));
                    let (v, gt, gs) =
                        mmd_discrepancy_with_grad(pt.view(), ps.view(), &cfg.mmd_bandwidths)?;
                    (
                        v,
                        global_avg_pool_backward(gt.view(), f_t.shape()),
                        global_avg_pool_backward(gs.view(), f_sr.shape()),
                    )
                }
                Discrepancy::Adversarial => {
                    let disc = self
                        .discriminator
                        .as_ref()
                        .expect("adversarial trainer owns a discriminator");
                    let (pt, ps) = (global_avg_pool(f_t.view()), global_avg_pool(f_sr.view()));
                    let out = adversarial_discrepancy(pt.view(), ps.view(), disc, cfg.grl_lambda)?;
                    disc_loss = Some(w * out.discriminator_loss);
                    let mut dg = out.discriminator_grads;
                    if w != 1.0 {
                        dg.scale(w as f32);
                    }
                    disc_grads = Some(dg);
                    (
                        out.discriminator_loss,
                        global_avg_pool_backward(out.grad_t.view(), f_t.shape()),
                        global_avg_pool_backward(out.grad_sr.view(), f_sr.shape()),
                    )
                }
            };
            l_d = w * value;
            p_grads = Some((g_t.mapv(|v| v * w), g_sr.mapv(|v| v * w)));
        }

        let breakdown = total_loss(l_cls, l_d, per_pair, disc_loss, cfg)?;

        let mut grads = Gradients::for_params(model.params());
        let gamma = cfg.gamma;
        for (i, (trace, batch)) in traces.iter().enumerate() {
            let mut seeds = TapGrads::default();
            if terms.classification {
                if let Some(g) = cls_grads.get(&batch.route) {
                    seeds.logits = Some(Tensor::from_f64(&g.mapv(|v| v * gamma)));
                }
            }
            if terms.discrepancy {
                if let Some((g_t, g_sr)) = &p_grads {
                    match i {
                        1 => seeds.p = Some(Tensor::from_f64(g_sr)),
                        2 => seeds.p = Some(Tensor::from_f64(g_t)),
                        _ => {}
                    }
                }
            }
            if seeds.p.is_some() || seeds.logits.is_some() {
                model.backward(trace, &seeds, &mut grads, false);
            }
        }
        if !grads.all_finite() {
            return Err(TrainError::NonFinite("parameter gradient".into()));
        }
        Ok(StepGradients {
            report: StepReport { breakdown, hits },
            model: grads,
            discriminator: if terms.discrepancy { disc_grads } else { None },
        })
    }

    /// One joint update: forward per stream, combined backward, Adam step.
    pub fn train_step(
        &mut self,
        main: &Batch,
        aux: Option<(&Batch, &Batch)>,
    ) -> Result<StepReport, TrainError> {
        let step = self.compute_gradients(main, aux, Terms::ALL)?;
        adam_step(
            self.model.params_mut(),
            &step.model,
            &mut self.adam,
            &self.optimizer,
        )?;
        if let (Some(disc), Some(state), Some(g)) = (
            self.discriminator.as_mut(),
            self.disc_adam.as_mut(),
            step.discriminator.as_ref(),
        ) {
            adam_step(disc.params_mut(), g, state, &self.optimizer)?;
        }
        Ok(step.report)
    }
}
