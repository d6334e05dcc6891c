//! The multi-branch network and its forward/backward routing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::{build_backbone_blocks, split_segments, ArchConfig, BlockSpec};
use super::ModelError;
use crate::data::{Batch, INPUT_CHANNELS, INPUT_SIZE};
use crate::nn::{self, NormCache, PoolCache};
use crate::rng::{stream_rng, streams};
use crate::route::{DomainRole, Route, TaskRole};
use crate::tensor::Tensor;

/// Activation taps along a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTap {
    /// Domain-segment output.
    P,
    /// Shared-segment output.
    K,
    /// Task-segment output (classifier input).
    Q,
    Logits,
}

impl FeatureTap {
    fn stage(self) -> usize {
        match self {
            FeatureTap::P => 0,
            FeatureTap::K => 1,
            FeatureTap::Q => 2,
            FeatureTap::Logits => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FeatureTap::P => "p",
            FeatureTap::K => "k",
            FeatureTap::Q => "q",
            FeatureTap::Logits => "logits",
        }
    }
}

/// Activation captured at a tap.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub tap: FeatureTap,
    pub route: Route,
    pub values: Tensor,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of parameters; order is the canonical creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f32>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, shape, data });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn data(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].data
    }
}

/// Sparse gradient buffers aligned with a [`ParamSet`]; a slot stays `None`
/// until some backward pass touches that parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn for_params(params: &ParamSet) -> Self {
        Self {
            slots: vec![None; params.len()],
        }
    }

    pub fn slot(&mut self, params: &ParamSet, id: ParamId) -> &mut [f32] {
        let len = params.get(id).data.len();
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// Two distinct slots borrowed at once.
    pub fn slot_pair(
        &mut self,
        params: &ParamSet,
        a: ParamId,
        b: ParamId,
    ) -> (&mut [f32], &mut [f32]) {
        assert_ne!(a.0, b.0);
        self.slot(params, a);
        self.slot(params, b);
        let (lo, hi, swap) = if a.0 < b.0 {
            (a.0, b.0, false)
        } else {
            (b.0, a.0, true)
        };
        let (left, right) = self.slots.split_at_mut(hi);
        let x = left[lo].as_deref_mut().unwrap();
        let y = right[0].as_deref_mut().unwrap();
        if swap {
            (y, x)
        } else {
            (x, y)
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.slots[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Element-wise sum of two gradient sets over the same parameters.
    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        self.slots
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|v| *v *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv { weight: ParamId, out_ch: usize },
    Norm { scale: ParamId, shift: ParamId },
    Relu,
    Pool,
    Flatten,
    Linear { weight: ParamId, bias: ParamId },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Segment {
    layers: Vec<Layer>,
}

enum Cache {
    Conv { input: Tensor },
    Norm(NormCache),
    Relu { output: Tensor },
    Pool(PoolCache),
    Flatten { shape: Vec<usize> },
    Linear { input: Tensor },
}

/// Everything a backward pass needs from one routed forward pass.
pub struct Trace {
    route: Route,
    stages: Vec<Vec<Cache>>,
    outputs: Vec<Tensor>,
}

impl Trace {
    pub fn route(&self) -> Route {
        self.route
    }

    /// Activation at `tap`, if the forward pass reached it.
    pub fn tap(&self, tap: FeatureTap) -> Option<&Tensor> {
        self.outputs.get(tap.stage())
    }
}

/// Upstream gradients injected at taps during backward.
#[derive(Debug, Default)]
pub struct TapGrads {
    pub p: Option<Tensor>,
    pub k: Option<Tensor>,
    pub q: Option<Tensor>,
    pub logits: Option<Tensor>,
}

impl TapGrads {
    fn at(&self, stage: usize) -> Option<&Tensor> {
        match stage {
            0 => self.p.as_ref(),
            1 => self.k.as_ref(),
            2 => self.q.as_ref(),
            _ => self.logits.as_ref(),
        }
    }
}

/// Two domain branches, a shared segment, two task branches and two
/// classifier heads over a VGG16-IN backbone.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    arch: ArchConfig,
    main_classes: usize,
    aux_classes: usize,
    params: ParamSet,
    domain: [Segment; 2],
    shared: Segment,
    task: [Segment; 2],
    classifier: [Segment; 2],
    tap_channels: [usize; 3],
}

fn domain_index(role: DomainRole) -> usize {
    match role {
        DomainRole::Source => 0,
        DomainRole::Target => 1,
    }
}

fn task_index(role: TaskRole) -> usize {
    match role {
        TaskRole::Main => 0,
        TaskRole::Aux => 1,
    }
}

struct Builder<'r, R: Rng> {
    params: ParamSet,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// Kaiming-uniform with negative slope sqrt(5), i.e. bound `1/sqrt(fan_in)`.
    fn kaiming(&mut self, fan_in: usize, len: usize) -> Vec<f32> {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        (0..len)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect()
    }

    fn blocks(&mut self, prefix: &str, blocks: &[BlockSpec]) -> Segment {
        let mut layers = Vec::new();
        for b in blocks {
            let mut in_ch = b.in_channels;
            for conv in 1..=b.convs {
                let out = b.out_channels;
                let stem = format!("{prefix}.block{}.conv{conv}", b.index);
                let w = self.kaiming(in_ch * 9, out * in_ch * 9);
                let weight = self
                    .params
                    .push(format!("{stem}.weight"), vec![out, in_ch, 3, 3], w);
                let scale = self
                    .params
                    .push(format!("{stem}.in_scale"), vec![out], vec![1.0; out]);
                let shift = self
                    .params
                    .push(format!("{stem}.in_shift"), vec![out], vec![0.0; out]);
                layers.push(Layer::Conv {
                    weight,
                    out_ch: out,
                });
                layers.push(Layer::Norm { scale, shift });
                layers.push(Layer::Relu);
                in_ch = out;
            }
            layers.push(Layer::Pool);
        }
        Segment { layers }
    }

    fn head(&mut self, prefix: &str, widths: &[usize]) -> Segment {
        let mut layers = vec![Layer::Flatten];
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, out) = (pair[0], pair[1]);
            let w = self.kaiming(fan_in, out * fan_in);
            let weight =
                self.params
                    .push(format!("{prefix}.fc{}.weight", i + 1), vec![out, fan_in], w);
            let bias = self.params.push(
                format!("{prefix}.fc{}.bias", i + 1),
                vec![out],
                vec![0.0; out],
            );
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Linear { weight, bias });
        }
        Segment { layers }
    }
}

impl ModelGraph {
    /// Builds and initializes the network (Kaiming-uniform fan-in weights,
    /// zero biases, identity instance-norm affine).
    pub fn build(
        arch: &ArchConfig,
        main_classes: usize,
        aux_classes: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if main_classes < 2 || aux_classes < 2 {
            return Err(ModelError::TooFewClasses(main_classes.min(aux_classes)));
        }
        if arch.classifier_hidden == 0 {
            return Err(ModelError::ZeroWidth {
                block: 0,
                multiplier: arch.width_multiplier,
            });
        }
        let blocks = build_backbone_blocks(arch.width_multiplier)?;
        let (dom, shared, task) = split_segments(&blocks, arch.split);
        let mut rng = stream_rng(seed, streams::INIT);
        let mut b = Builder {
            params: ParamSet::default(),
            rng: &mut rng,
        };
        let domain = [
            b.blocks("domain_branch.sr", &dom),
            b.blocks("domain_branch.t", &dom),
        ];
        let shared_seg = b.blocks("shared", &shared);
        let task_seg = [
            b.blocks("task_branch.m", &task),
            b.blocks("task_branch.a", &task),
        ];
        let last = blocks.last().unwrap();
        let spatial = INPUT_SIZE >> blocks.len();
        let flat = last.out_channels * spatial * spatial;
        let h = arch.classifier_hidden;
        let classifier = [
            b.head("classifier.m", &[flat, h, h, main_classes]),
            b.head("classifier.a", &[flat, h, h, aux_classes]),
        ];
        let tap_channels = [
            dom.last().unwrap().out_channels,
            shared.last().unwrap().out_channels,
            task.last().unwrap().out_channels,
        ];
        Ok(Self {
            arch: arch.clone(),
            main_classes,
            aux_classes,
            params: b.params,
            domain,
            shared: shared_seg,
            task: task_seg,
            classifier,
            tap_channels,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn classes(&self, task: TaskRole) -> usize {
        match task {
            TaskRole::Main => self.main_classes,
            TaskRole::Aux => self.aux_classes,
        }
    }

    /// Input width of the classifier heads (flattened tap-q size).
    pub fn classifier_input(&self) -> usize {
        let spatial = INPUT_SIZE >> 5;
        self.tap_channels[2] * spatial * spatial
    }

    /// Shape of a tap activation for a batch of `b`.
    pub fn tap_shape(&self, tap: FeatureTap, task: TaskRole, b: usize) -> Vec<usize> {
        let s = self.arch.split;
        match tap {
            FeatureTap::P => vec![
                b,
                self.tap_channels[0],
                INPUT_SIZE >> s.s1(),
                INPUT_SIZE >> s.s1(),
            ],
            FeatureTap::K => vec![
                b,
                self.tap_channels[1],
                INPUT_SIZE >> s.s2(),
                INPUT_SIZE >> s.s2(),
            ],
            FeatureTap::Q => vec![b, self.tap_channels[2], INPUT_SIZE >> 5, INPUT_SIZE >> 5],
            FeatureTap::Logits => vec![b, self.classes(task)],
        }
    }

    /// Ids of all parameters whose canonical name starts with `prefix`.
    pub fn param_ids(&self, prefix: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    fn stages(&self, route: Route) -> [&Segment; 4] {
        let dom = if self.arch.tied_domain_branches {
            DomainRole::Source
        } else {
            route.domain
        };
        let t = task_index(route.task);
        [
            &self.domain[domain_index(dom)],
            &self.shared,
            &self.task[t],
            &self.classifier[t],
        ]
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        match *x.shape() {
            [b, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE] if b >= 1 => Ok(()),
            ref s => Err(ModelError::RouteMismatch(format!(
                "expected input (b>=1, {INPUT_CHANNELS}, {INPUT_SIZE}, {INPUT_SIZE}), got {s:?}"
            ))),
        }
    }

    /// Routes a batch along its own route and stops at `tap`.
    pub fn forward(&self, batch: &Batch, tap: FeatureTap) -> Result<FeatureTensor, ModelError> {
        let values = self.forward_tensor(&batch.pixels, batch.route, tap)?;
        Ok(FeatureTensor {
            tap,
            route: batch.route,
            values,
        })
    }

    /// Inference-only forward without caching.
    pub fn forward_tensor(
        &self,
        x: &Tensor,
        route: Route,
        tap: FeatureTap,
    ) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for seg in self.stages(route).into_iter().take(tap.stage() + 1) {
            h = self.run_segment(seg, h, None);
        }
        Ok(h)
    }

    /// Applies stages after `from` up to `to` (used to compose taps).
    pub fn continue_from(
        &self,
        h: &Tensor,
        route: Route,
        from: FeatureTap,
        to: FeatureTap,
    ) -> Tensor {
        let mut h = h.clone();
        for seg in self
            .stages(route)
            .into_iter()
            .take(to.stage() + 1)
            .skip(from.stage() + 1)
        {
            h = self.run_segment(seg, h, None);
        }
        h
    }

    /// Forward pass that records everything needed by [`ModelGraph::backward`].
    pub fn forward_traced(
        &self,
        x: &Tensor,
        route: Route,
        until: FeatureTap,
    ) -> Result<Trace, ModelError> {
        self.check_input(x)?;
        let mut stages = Vec::new();
        let mut outputs = Vec::new();
        let mut h = x.clone();
        for seg in self.stages(route).into_iter().take(until.stage() + 1) {
            let mut caches = Vec::with_capacity(seg.layers.len());
            h = self.run_segment(seg, h, Some(&mut caches));
            stages.push(caches);
            outputs.push(h.clone());
        }
        Ok(Trace {
            route,
            stages,
            outputs,
        })
    }

    /// Reverse pass over a trace. Gradients injected at each tap are added
    /// as the pass crosses it; parameter gradients accumulate into `grads`.
    /// Returns the input gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        seeds: &TapGrads,
        grads: &mut Gradients,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let segs = self.stages(trace.route);
        let mut grad: Option<Tensor> = None;
        for stage in (0..trace.stages.len()).rev() {
            if let Some(seed) = seeds.at(stage) {
                assert_eq!(
                    seed.shape(),
                    trace.outputs[stage].shape(),
                    "tap gradient shape"
                );
                match grad.as_mut() {
                    Some(g) => g.add_assign(seed),
                    None => grad = Some(seed.clone()),
                }
            }
            let Some(g) = grad.take() else { continue };
            let first = stage == 0;
            grad = self.backprop_segment(
                segs[stage],
                &trace.stages[stage],
                g,
                grads,
                !first || need_input_grad,
            );
        }
        grad
    }

    fn run_segment(
        &self,
        seg: &Segment,
        mut h: Tensor,
        mut caches: Option<&mut Vec<Cache>>,
    ) -> Tensor {
        let eps = self.arch.in_norm_epsilon;
        for layer in &seg.layers {
            h = match *layer {
                Layer::Conv { weight, out_ch } => {
                    let y = nn::conv3x3_forward(&h, self.params.data(weight), out_ch);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Conv { input: h });
                    }
                    y
                }
                Layer::Norm { scale, shift } => {
                    let (y, cache) = nn::instance_norm_forward(
                        &h,
                        eps,
                        self.params.data(scale),
                        self.params.data(shift),
                    );
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Norm(cache));
                    }
                    y
                }
                Layer::Relu => {
                    let y = nn::relu_forward(h);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Relu { output: y.clone() });
                    }
                    y
                }
                Layer::Pool => {
                    let (y, cache) = nn::maxpool2_forward(&h);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Pool(cache));
                    }
                    y
                }
                Layer::Flatten => {
                    let shape = h.shape().to_vec();
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Flatten { shape });
                    }
                    let (b, n) = (h.batch(), h.sample_len());
                    h.reshape(&[b, n])
                }
                Layer::Linear { weight, bias } => {
                    let y =
                        nn::linear_forward(&h, self.params.data(weight), self.params.data(bias));
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Linear { input: h });
                    }
                    y
                }
            };
        }
        h
    }

    fn backprop_segment(
        &self,
        seg: &Segment,
        caches: &[Cache],
        mut g: Tensor,
        grads: &mut Gradients,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let p = &self.params;
        for (i, (layer, cache)) in seg.layers.iter().zip(caches).enumerate().rev() {
            let last = i == 0 && !need_input_grad;
            g = match (layer, cache) {
                (&Layer::Conv { weight, out_ch }, Cache::Conv { input }) => {
                    let dw = grads.slot(p, weight);
                    nn::conv3x3_backward(input, p.data(weight), out_ch, &g, dw, !last)?
                }
                (&Layer::Norm { scale, shift }, Cache::Norm(cache)) => {
                    let (ds, dt) = grads.slot_pair(p, scale, shift);
                    nn::instance_norm_backward(cache, p.data(scale), &g, ds, dt)
                }
                (Layer::Relu, Cache::Relu { output }) => nn::relu_backward(output, g),
                (Layer::Pool, Cache::Pool(cache)) => nn::maxpool2_backward(cache, &g),
                (Layer::Flatten, Cache::Flatten { shape }) => g.reshape(shape),
                (&Layer::Linear { weight, bias }, Cache::Linear { input }) => {
                    let (dw, db) = grads.slot_pair(p, weight, bias);
                    nn::linear_backward(input, p.data(weight), &g, dw, db)
                }
                _ => unreachable!("trace does not match segment layout"),
            };
        }
        need_input_grad.then_some(g)
    }
}
