//! Feature extraction at the p/k/q taps, t-SNE, k-means, FMI/NMI alignment
//! scores and activation maximization.

mod actmax;
mod export;
mod kmeans;
mod metrics;
mod tsne;

pub use actmax::{activation_maximization, ActMaxResult};
pub use export::{write_actmax_grid, write_embedding_csv, write_logit_traces};
pub use kmeans::{kmeans, mean_row, KMeansResult, DEFAULT_MAX_ITERS};
pub use metrics::{fmi, nmi};
pub use tsne::{joint_probabilities, tsne_embed, TsneResult, MAX_POINTS};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use thiserror::Error;

use crate::data::{Batch, LabeledImageSet};
use crate::model::{FeatureTap, ModelGraph};
use crate::route::{DomainRole, Route, TaskRole};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("route mismatch: {0}")]
    RouteMismatch(String),
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("k = {k} is outside 1..={n}")]
    KTooLarge { k: usize, n: usize },
    #[error("perplexity {perplexity} needs to be below (n - 1) / 3 for n = {n}")]
    PerplexityTooHigh { perplexity: f64, n: usize },
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("exact t-SNE is limited to {max} points, got {n}")]
    TooManyPoints { n: usize, max: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("writing {path}: {message}")]
    Export { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const EXTRACT_BATCH: usize = 256;

/// Flattened activations of one tap, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
    pub domain_roles: Vec<DomainRole>,
    pub tap: FeatureTap,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix, AnalysisError> {
        if self.tap != other.tap || self.dim() != other.dim() {
            return Err(AnalysisError::InvalidArgument(format!(
                "cannot stack {} x {} ({}) onto {} x {} ({})",
                other.len(),
                other.dim(),
                other.tap.tag(),
                self.len(),
                self.dim(),
                self.tap.tag()
            )));
        }
        let rows = ndarray::concatenate(ndarray::Axis(0), &[self.rows.view(), other.rows.view()])
            .expect("column counts checked");
        Ok(FeatureMatrix {
            rows,
            labels: [self.labels.as_slice(), &other.labels].concat(),
            domain_roles: [self.domain_roles.as_slice(), &other.domain_roles].concat(),
            tap: self.tap,
        })
    }
}

fn check_route(
    model: &ModelGraph,
    set: &LabeledImageSet,
    route: Route,
) -> Result<(), AnalysisError> {
    let classes = model.classes(route.task);
    if set.task.class_count() != classes {
        return Err(AnalysisError::RouteMismatch(format!(
            "{} has {} classes but route {route} has {classes}",
            set.task,
            set.task.class_count()
        )));
    }
    Ok(())
}

/// Activations at tap `p`, `k` or `q` for every sample of `set`, in order.
pub fn extract_features(
    model: &ModelGraph,
    set: &LabeledImageSet,
    route: Route,
    tap: FeatureTap,
) -> Result<FeatureMatrix, AnalysisError> {
    if tap == FeatureTap::Logits {
        return Err(AnalysisError::InvalidArgument(
            "features are taken at p, k or q".into(),
        ));
    }
    check_route(model, set, route)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut data = Vec::new();
    let mut dim = 0;
    for chunk in idx.chunks(EXTRACT_BATCH) {
        let batch = Batch::from_set(set, chunk, route);
        let out = model
            .forward(&batch, tap)
            .map_err(|e| AnalysisError::RouteMismatch(e.to_string()))?;
        dim = out.values.sample_len();
        data.extend(out.values.data().iter().map(|&v| v as f64));
    }
    let rows = Array2::from_shape_vec((set.len(), dim), data).expect("batch layout");
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite(format!(
            "tap {} features",
            tap.tag()
        )));
    }
    Ok(FeatureMatrix {
        rows,
        labels: set.labels.clone(),
        domain_roles: vec![route.domain; set.len()],
        tap,
    })
}

/// Raw pixels in `[0, 1]`, flattened in the same channel-major order the
/// network sees.
pub fn pixel_matrix(set: &LabeledImageSet) -> Array2<f64> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let batch = Batch::from_set(set, &idx, Route::SOURCE_MAIN);
    let d = batch.pixels.sample_len();
    Array2::from_shape_vec(
        (set.len(), d),
        batch.pixels.data().iter().map(|&v| v as f64).collect(),
    )
    .expect("batch layout")
}

/// Clustering agreement with the true classes on raw pixels and at tap q.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub fmi_raw: f64,
    pub nmi_raw: f64,
    pub fmi_q: f64,
    pub nmi_q: f64,
    pub k: usize,
    pub source_samples: usize,
    pub target_samples: usize,
}

/// Pools source- and target-domain samples, clusters them with k-means and
/// scores the clusters against the class labels: once on raw pixels and
/// once on tap-q features (route `(sr,m)` for the source set, `(t,m)` for
/// the target set). `k` defaults to the main-task class count.
pub fn alignment_report(
    model: &ModelGraph,
    main_sr: &LabeledImageSet,
    main_t: &LabeledImageSet,
    k: Option<usize>,
    seed: u64,
) -> Result<AlignmentReport, AnalysisError> {
    if main_sr.task != main_t.task {
        return Err(AnalysisError::InvalidArgument(format!(
            "source set is {} but target set is {}",
            main_sr.task, main_t.task
        )));
    }
    let k = k.unwrap_or_else(|| model.classes(TaskRole::Main));
    let labels = [main_sr.labels.as_slice(), &main_t.labels].concat();

    let raw = ndarray::concatenate(
        ndarray::Axis(0),
        &[pixel_matrix(main_sr).view(), pixel_matrix(main_t).view()],
    )
    .expect("same image size");
    let raw_clusters = kmeans(raw.view(), k, seed, DEFAULT_MAX_ITERS)?.labels;

    let q = extract_features(model, main_sr, Route::SOURCE_MAIN, FeatureTap::Q)?.concat(
        &extract_features(model, main_t, Route::TARGET_MAIN, FeatureTap::Q)?,
    )?;
    let q_clusters = kmeans(q.rows.view(), k, seed, DEFAULT_MAX_ITERS)?.labels;

    Ok(AlignmentReport {
        fmi_raw: fmi(&raw_clusters, &labels)?,
        nmi_raw: nmi(&raw_clusters, &labels)?,
        fmi_q: fmi(&q_clusters, &labels)?,
        nmi_q: nmi(&q_clusters, &labels)?,
        k,
        source_samples: main_sr.len(),
        target_samples: main_t.len(),
    })
}

/// First `n` rows of a matrix view (all rows when `n` is 0 or too large).
pub fn head_rows(x: ArrayView2<f64>, n: usize) -> ArrayView2<f64> {
    let n = if n == 0 { x.nrows() } else { n.min(x.nrows()) };
    x.slice_move(ndarray::s![..n, ..])
}
