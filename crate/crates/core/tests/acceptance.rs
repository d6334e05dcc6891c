//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion, then asserts it. Run with `--nocapture` to see the lines:
//!
//! `cargo test --release -p zda-core --test acceptance -- --nocapture`
//!
//! The desk-scale criteria need MNIST and Fashion-MNIST under
//! `$ZDA_DATA_ROOT` (falling back to `/root/zda-data`).

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zda_core::analysis::{activation_maximization, alignment_report, fmi, kmeans, nmi, tsne_embed};
use zda_core::config::{ExperimentConfig, Preset};
use zda_core::data::{expected_files, parse_idx, serialize_idx, subset, Batch, Split, TaskId};
use zda_core::experiment::{
    baseline_with_data, prepare_data, source_test_view, train_with_data, ExperimentData,
    TrainOutcome,
};
use zda_core::losses::{
    adversarial_discrepancy, cross_entropy, cross_entropy_with_grad, l1_discrepancy,
    l1_discrepancy_with_grad, median_bandwidth, mmd_discrepancy, mmd_discrepancy_with_grad,
    Bandwidths, Discrepancy, Discriminator, LossConfig,
};
use zda_core::model::{build_model, read_checkpoint, write_checkpoint, ArchConfig, Gradients};
use zda_core::nn::instance_norm_forward;
use zda_core::rng::{derive_seed, streams};
use zda_core::training::{OptimizerConfig, Terms, Trainer};
use zda_core::{Route, Tensor};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id:>2} ({name}): {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * r.sample::<f64, _>(StandardNormal))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

// ---------------------------------------------------------------- desk runs

fn data_root() -> Option<PathBuf> {
    let root = std::env::var_os("ZDA_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/zda-data"));
    let needed = [TaskId::Mnist, TaskId::Fashion]
        .into_iter()
        .flat_map(|t| [Split::Train, Split::Test].map(|s| expected_files(t, s)))
        .flat_map(|(a, b)| [a, b]);
    let present = needed.into_iter().all(|p| {
        let gz = PathBuf::from(format!("{}.gz", p.display()));
        root.join(p).exists() || root.join(gz).exists()
    });
    present.then_some(root)
}

/// Desk preset, G -> N, main D_M, aux D_F, supervising `(sr,m)` and `(sr,a)`.
fn desk_config(discrepancy: Discrepancy) -> Option<ExperimentConfig> {
    let root = data_root()?;
    let json = serde_json::json!({
        "tasks": {"main": "D_M", "aux": "D_F"},
        "domains": {"source": "G", "target": "N"},
        "loss": {"discrepancy": discrepancy, "cls_pairs": LossConfig::two_pair().cls_pairs},
        "data_root": root,
    });
    Some(ExperimentConfig::from_json(&json.to_string(), Some(Preset::Desk)).expect("desk config"))
}

struct Desk {
    cfg: ExperimentConfig,
    data: ExperimentData,
    full: TrainOutcome,
    baseline: TrainOutcome,
    seconds: f64,
}

fn desk() -> Option<&'static Desk> {
    static DESK: OnceLock<Option<Desk>> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = desk_config(Discrepancy::L1)?;
        let t = Instant::now();
        let data = prepare_data(&cfg).expect("desk data");
        let full = train_with_data(&cfg, &data, None).expect("desk training");
        let baseline = baseline_with_data(&cfg, &data, None).expect("baseline training");
        Some(Desk {
            cfg,
            data,
            full,
            baseline,
            seconds: t.elapsed().as_secs_f64(),
        })
    })
    .as_ref()
}

fn require_desk(id: u32, name: &str) -> &'static Desk {
    match desk() {
        Some(d) => d,
        None => {
            report(
                id,
                name,
                false,
                "MNIST/Fashion-MNIST IDX files not found; set ZDA_DATA_ROOT".into(),
            );
            unreachable!()
        }
    }
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_format_fidelity() {
    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();

    // synthetic label and image files
    let mut r = rng(1);
    let labels: Vec<u8> = (0..257).map(|_| r.gen_range(0..10)).collect();
    let images: Vec<u8> = (0..5 * 7 * 3).map(|_| r.gen()).collect();
    let mut files = vec![
        [&[0u8, 0, 8, 1, 0, 0, 1, 1][..], &labels].concat(),
        [
            &[0u8, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 7, 0, 0, 0, 3][..],
            &images,
        ]
        .concat(),
    ];
    if let Some(root) = data_root() {
        for split in [Split::Train, Split::Test] {
            let (img, lab) = expected_files(TaskId::Mnist, split);
            for p in [img, lab] {
                if let Ok(raw) = std::fs::read(root.join(p)) {
                    files.push(raw);
                }
            }
        }
    }
    for raw in &files {
        let a = parse_idx(raw).expect("parse");
        let bytes = serialize_idx(&a).expect("serialize");
        let b = parse_idx(&bytes).expect("reparse");
        ok &= a == b && &bytes == raw;
    }
    notes.push(format!("{} IDX files", files.len()));

    let arch = ArchConfig {
        width_multiplier: 0.125,
        ..ArchConfig::default()
    };
    for (seed, classes) in [(3u64, 10usize), (4, 26)] {
        let model = build_model(&arch, classes, 10, seed).expect("model");
        let first = write_checkpoint(&model);
        let loaded = read_checkpoint(&first).expect("load");
        let second = write_checkpoint(&loaded);
        ok &= first == second && loaded.params() == model.params();
    }
    let dir = tempfile::tempdir().unwrap();
    let model = build_model(&arch, 10, 10, 9).unwrap();
    let p = dir.path().join("m.ckpt");
    zda_core::model::save_checkpoint(&model, &p).unwrap();
    let q = dir.path().join("n.ckpt");
    zda_core::model::save_checkpoint(&zda_core::model::load_checkpoint(&p).unwrap(), &q).unwrap();
    ok &= std::fs::read(&p).unwrap() == std::fs::read(&q).unwrap();
    notes.push("3 checkpoints".into());

    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        "format fidelity",
        ok && secs < 10.0,
        format!(
            "{}, byte-identical={ok}, {secs:.2}s (limit 10s)",
            notes.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- 2

fn l1_oracle(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        s += (x - y).abs();
    }
    s / a.len() as f64
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median of all pairwise squared distances in the pooled sample.
fn median_oracle(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = x
        .rows()
        .into_iter()
        .chain(y.rows())
        .map(|r| r.to_vec())
        .collect();
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in 0..i {
            d.push(sq(&rows[i], &rows[j]));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        (d[d.len() / 2 - 1] + d[d.len() / 2]) / 2.0
    };
    if m == 0.0 {
        1.0
    } else {
        m
    }
}

fn mmd_oracle(x: &Array2<f64>, y: &Array2<f64>, widths: &[f64]) -> f64 {
    let k = |a: &[f64], b: &[f64]| -> f64 {
        let d = sq(a, b);
        widths.iter().map(|s| (-d / (2.0 * s)).exp()).sum()
    };
    let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let ys: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut s = 0.0;
        for a in p {
            for b in q {
                s += k(a, b);
            }
        }
        s / (p.len() * q.len()) as f64
    };
    mean(&xs, &xs) + mean(&ys, &ys) - 2.0 * mean(&xs, &ys)
}

#[test]
fn criterion_02_loss_oracles() {
    let mut r = rng(2);
    let mut worst_ce: f64 = 0.0;
    for k in [2usize, 3, 10, 26, 52] {
        for b in [1usize, 4, 9] {
            let c: f64 = r.gen_range(-5.0..5.0);
            let logits = Array2::from_elem((b, k), c);
            let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
            let v = cross_entropy(logits.view(), &labels).unwrap();
            worst_ce = worst_ce.max((v - (k as f64).ln()).abs());
        }
    }
    let (mut worst_l1, mut worst_mmd, mut worst_self): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..200 {
        let b = r.gen_range(2..=8);
        let d = r.gen_range(1..=5);
        let x = normal_matrix(&mut r, b, d, 1.5);
        let y = normal_matrix(&mut r, b, d, 1.0) + r.gen_range(-1.0..1.0);
        let (xd, yd) = (x.clone().into_dyn(), y.clone().into_dyn());
        worst_l1 = worst_l1
            .max((l1_discrepancy(xd.view(), yd.view()).unwrap() - l1_oracle(&xd, &yd)).abs());
        // uneven batch sizes for the fixed-width case
        let rows = r.gen_range(2..=8);
        let y2 = normal_matrix(&mut r, rows, d, 1.0);
        let widths: Vec<f64> = (0..r.gen_range(1..=3))
            .map(|_| r.gen_range(0.1..5.0))
            .collect();
        let fixed =
            mmd_discrepancy(x.view(), y2.view(), &Bandwidths::Fixed(widths.clone())).unwrap();
        worst_mmd = worst_mmd.max((fixed - mmd_oracle(&x, &y2, &widths)).abs());
        let med = mmd_discrepancy(x.view(), y.view(), &Bandwidths::MedianHeuristic).unwrap();
        worst_mmd = worst_mmd.max((med - mmd_oracle(&x, &y, &[median_oracle(&x, &y)])).abs());
        let bw = if trial % 2 == 0 {
            Bandwidths::MedianHeuristic
        } else {
            Bandwidths::Fixed(widths)
        };
        worst_self = worst_self.max(mmd_discrepancy(x.view(), x.view(), &bw).unwrap().abs());
    }
    let pass = worst_ce <= 1e-9 && worst_l1 <= 1e-9 && worst_mmd <= 1e-9 && worst_self <= 1e-9;
    report(
        2,
        "loss oracles",
        pass,
        format!(
            "max |CE-lnK|={worst_ce:.1e}, |l1-oracle|={worst_l1:.1e}, |mmd-oracle|={worst_mmd:.1e}, |mmd(X,X)|={worst_self:.1e} (tol 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------- 3

const H: f64 = 1e-5;
const PROBES: usize = 20;

fn fd_ce(r: &mut ChaCha8Rng) -> f64 {
    let b = r.gen_range(1..=6);
    let k = r.gen_range(2..=8);
    let z = normal_matrix(r, b, k, 2.0);
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
    let (_, g) = cross_entropy_with_grad(z.view(), &labels).unwrap();
    let (i, j) = (r.gen_range(0..b), r.gen_range(0..k));
    let f = |delta: f64| {
        let mut p = z.clone();
        p[[i, j]] += delta;
        cross_entropy(p.view(), &labels).unwrap()
    };
    rel_err(g[[i, j]], (f(H) - f(-H)) / (2.0 * H))
}

fn fd_l1(r: &mut ChaCha8Rng) -> f64 {
    let shape = [r.gen_range(1..=3), r.gen_range(1..=3), 2, 2];
    let n: usize = shape.iter().product();
    let a = ArrayD::from_shape_fn(IxDyn(&shape), |_| r.sample::<f64, _>(StandardNormal));
    let b = ArrayD::from_shape_fn(IxDyn(&shape), |_| r.sample::<f64, _>(StandardNormal));
    let (_, ga, gb) = l1_discrepancy_with_grad(a.view(), b.view()).unwrap();
    // probe away from the kink
    let idx = loop {
        let i = r.gen_range(0..n);
        if (a.as_slice().unwrap()[i] - b.as_slice().unwrap()[i]).abs() > 1e-3 {
            break i;
        }
    };
    let wrt_first = r.gen_bool(0.5);
    let f = |delta: f64| {
        let (mut p, mut q) = (a.clone(), b.clone());
        if wrt_first {
            p.as_slice_mut().unwrap()[idx] += delta;
        } else {
            q.as_slice_mut().unwrap()[idx] += delta;
        }
        l1_discrepancy(p.view(), q.view()).unwrap()
    };
    let analytic = if wrt_first {
        ga.as_slice().unwrap()[idx]
    } else {
        gb.as_slice().unwrap()[idx]
    };
    rel_err(analytic, (f(H) - f(-H)) / (2.0 * H))
}

fn fd_mmd(r: &mut ChaCha8Rng, probe: usize) -> f64 {
    let d = r.gen_range(1..=5);
    let (n, m) = (r.gen_range(2..=8), r.gen_range(2..=8));
    let x = normal_matrix(r, n, d, 1.0);
    let y = normal_matrix(r, m, d, 1.0) + 0.5;
    // the median width is held constant, so probe it as a fixed width
    let widths = if probe % 2 == 0 {
        vec![median_bandwidth(x.view(), y.view())]
    } else {
        (0..r.gen_range(1..=3))
            .map(|_| r.gen_range(0.2..4.0))
            .collect()
    };
    let bw = Bandwidths::Fixed(widths);
    let (_, gx, gy) = mmd_discrepancy_with_grad(x.view(), y.view(), &bw).unwrap();
    let wrt_first = r.gen_bool(0.5);
    let rows = if wrt_first { x.nrows() } else { y.nrows() };
    let (i, j) = (r.gen_range(0..rows), r.gen_range(0..d));
    let f = |delta: f64| {
        let (mut p, mut q) = (x.clone(), y.clone());
        if wrt_first {
            p[[i, j]] += delta;
        } else {
            q[[i, j]] += delta;
        }
        // unclamped V-statistic, same as the oracle
        mmd_oracle(
            &p,
            &q,
            match &bw {
                Bandwidths::Fixed(w) => w,
                Bandwidths::MedianHeuristic => unreachable!(),
            },
        )
    };
    let analytic = if wrt_first { gx[[i, j]] } else { gy[[i, j]] };
    rel_err(analytic, (f(H) - f(-H)) / (2.0 * H))
}

fn fd_reversal(r: &mut ChaCha8Rng, probe: usize) -> f64 {
    let d = r.gen_range(2..=8);
    let b = r.gen_range(2..=6);
    let disc = Discriminator::new(d, probe as u64);
    let ft = normal_matrix(r, b, d, 1.0);
    let fs = normal_matrix(r, b, d, 1.0);
    let lambda: f64 = r.gen_range(0.1..2.0);
    let out = adversarial_discrepancy(ft.view(), fs.view(), &disc, lambda).unwrap();
    let wrt_target = r.gen_bool(0.5);
    let (i, j) = (r.gen_range(0..b), r.gen_range(0..d));
    let f = |delta: f64| {
        let (mut p, mut q) = (ft.clone(), fs.clone());
        if wrt_target {
            p[[i, j]] += delta;
        } else {
            q[[i, j]] += delta;
        }
        adversarial_discrepancy(p.view(), q.view(), &disc, lambda)
            .unwrap()
            .discriminator_loss
    };
    let numeric = -lambda * (f(H) - f(-H)) / (2.0 * H);
    let analytic = if wrt_target {
        out.grad_t[[i, j]]
    } else {
        out.grad_sr[[i, j]]
    };
    rel_err(analytic, numeric)
}

#[test]
fn criterion_03_gradient_checks() {
    let t = Instant::now();
    let mut r = rng(3);
    let mut worst: HashMap<&str, f64> = HashMap::new();
    for probe in 0..PROBES {
        for (name, e) in [
            ("ce", fd_ce(&mut r)),
            ("l1", fd_l1(&mut r)),
            ("mmd", fd_mmd(&mut r, probe)),
            ("reversal", fd_reversal(&mut r, probe)),
        ] {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.values().all(|&e| e < 1e-4) && secs < 60.0;
    let mut names: Vec<_> = worst.iter().collect();
    names.sort_by_key(|(n, _)| **n);
    let detail = names
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        3,
        "gradient checks",
        pass,
        format!("max rel err over {PROBES} probes: {detail} (tol 1e-4), {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- 4

fn random_batch(r: &mut ChaCha8Rng, b: usize, route: Route, origins: &[usize]) -> Batch {
    let pixels: Vec<f32> = (0..b * 3 * 32 * 32).map(|_| r.gen()).collect();
    Batch {
        pixels: Tensor::from_vec(&[b, 3, 32, 32], pixels),
        labels: (0..b).map(|_| r.gen_range(0..10)).collect(),
        origin_indices: origins.to_vec(),
        route,
    }
}

fn grads_of(model_grads: &Gradients, ids: &[zda_core::model::ParamId]) -> Vec<f32> {
    ids.iter()
        .flat_map(|&id| model_grads.get(id).map(<[f32]>::to_vec).unwrap_or_default())
        .collect()
}

#[test]
fn criterion_04_routing_isolation() {
    let arch = ArchConfig {
        width_multiplier: 0.125,
        ..ArchConfig::default()
    };
    let model = build_model(&arch, 10, 10, 11).unwrap();
    let loss = LossConfig {
        discrepancy: Discrepancy::L1,
        ..LossConfig::two_pair()
    };
    let t_ids = model.param_ids("domain_branch.t.");
    let head_ids: Vec<_> = ["task_branch.", "classifier."]
        .iter()
        .flat_map(|p| model.param_ids(p))
        .collect();
    let trainer = Trainer::new(model, loss, OptimizerConfig::default()).unwrap();
    let mut r = rng(4);
    let origins = [0, 1, 2, 3];
    let main = random_batch(&mut r, 4, Route::SOURCE_MAIN, &[10, 11, 12, 13]);
    let s = random_batch(&mut r, 4, Route::SOURCE_AUX, &origins);
    let mut t = random_batch(&mut r, 4, Route::TARGET_AUX, &origins);
    t.labels = s.labels.clone();

    let cls = trainer
        .compute_gradients(&main, Some((&s, &t)), Terms::CLASSIFICATION)
        .unwrap();
    let disc = trainer
        .compute_gradients(&main, Some((&s, &t)), Terms::DISCREPANCY)
        .unwrap();
    let t_from_cls = grads_of(&cls.model, &t_ids);
    let t_from_d = grads_of(&disc.model, &t_ids);
    let head_from_d = grads_of(&disc.model, &head_ids);
    let cls_zero = t_from_cls.iter().all(|&g| g == 0.0);
    let d_nonzero = t_from_d.iter().filter(|&&g| g != 0.0).count();
    let head_zero = head_from_d.iter().all(|&g| g == 0.0);
    report(
        4,
        "routing isolation",
        cls_zero && d_nonzero > 0 && head_zero && !t_ids.is_empty() && !head_ids.is_empty(),
        format!(
            "t-branch grad from L_cls all zero={cls_zero}; from L_D {d_nonzero} nonzero entries; task/classifier grad from L_D all zero={head_zero} ({} t params, {} head params)",
            t_ids.len(),
            head_ids.len()
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_instance_norm_statistics() {
    let mut r = rng(5);
    let (mut worst_mean, mut worst_var): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let (b, c, h) = (r.gen_range(1..=4), r.gen_range(1..=8), r.gen_range(2..=16));
        let mut data = Vec::with_capacity(b * c * h * h);
        for _ in 0..b * c {
            let (mu, sd): (f64, f64) = (r.gen_range(-50.0..50.0), r.gen_range(1.0..20.0));
            for _ in 0..h * h {
                data.push((mu + sd * r.sample::<f64, _>(StandardNormal)) as f32);
            }
        }
        let x = Tensor::from_vec(&[b, c, h, h], data);
        let (_, cache) = instance_norm_forward(&x, 1e-5, &vec![1.0; c], &vec![0.0; c]);
        for plane in cache.xhat.data().chunks(h * h) {
            let n = plane.len() as f64;
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
    }
    report(
        5,
        "instance norm",
        worst_mean < 1e-5 && worst_var < 1e-4,
        format!("max |mean|={worst_mean:.1e} (tol 1e-5), max |var-1|={worst_var:.1e} (tol 1e-4)"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_desk_zda_effect() {
    let d = require_desk(6, "desk ZDA effect");
    let (acc, base) = (d.full.target_accuracy, d.baseline.target_accuracy);
    report(
        6,
        "desk ZDA effect",
        acc >= 0.85 && acc - base >= 0.10 && d.seconds <= 1200.0,
        format!(
            "target acc {acc:.4} (need >= 0.85), source-only {base:.4}, gap {:.4} (need >= 0.10), {:.0}s incl. baseline",
            acc - base,
            d.seconds
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_alignment_improvement() {
    let d = require_desk(7, "alignment improvement");
    let cfg = &d.cfg;
    let seed = derive_seed(cfg.seed, streams::SUBSET_TEST);
    let source = subset(&source_test_view(cfg).expect("source view"), 500, seed);
    let target = subset(&d.data.test_target, 500, seed);
    let rep = alignment_report(&d.full.model, &source, &target, Some(10), cfg.seed).unwrap();
    let (df, dn) = (rep.fmi_q - rep.fmi_raw, rep.nmi_q - rep.nmi_raw);
    report(
        7,
        "alignment improvement",
        df >= 0.2 && dn >= 0.2 && rep.source_samples == 500 && rep.target_samples == 500,
        format!(
            "raw fmi {:.3} nmi {:.3} -> q fmi {:.3} nmi {:.3}; gains {df:.3}/{dn:.3} (need >= 0.2), k={}, {}+{} samples",
            rep.fmi_raw, rep.nmi_raw, rep.fmi_q, rep.nmi_q, rep.k, rep.source_samples, rep.target_samples
        ),
    );
}

// ---------------------------------------------------------------- 8

/// Counts co-clustered unordered pairs directly.
fn fmi_pairs(a: &[usize], b: &[usize]) -> f64 {
    let (mut tp, mut pa, mut pb) = (0u64, 0u64, 0u64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let (sa, sb) = (a[i] == a[j], b[i] == b[j]);
            tp += u64::from(sa && sb);
            pa += u64::from(sa);
            pb += u64::from(sb);
        }
    }
    if tp == 0 {
        0.0
    } else {
        tp as f64 / ((pa as f64) * (pb as f64)).sqrt()
    }
}

/// Dense contingency table, entropies in bits.
fn nmi_table(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    let mut t = vec![vec![0.0f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        t[x][y] += 1.0;
    }
    let ra: Vec<f64> = t.iter().map(|row| row.iter().sum()).collect();
    let cb: Vec<f64> = (0..kb).map(|j| t.iter().map(|row| row[j]).sum()).collect();
    let h = |v: &[f64]| -> f64 {
        v.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).log2())
            .sum()
    };
    let (ha, hb) = (h(&ra), h(&cb));
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            if t[i][j] > 0.0 {
                mi += t[i][j] / n * (n * t[i][j] / (ra[i] * cb[j])).log2();
            }
        }
    }
    let used = |v: &[f64]| v.iter().filter(|&&c| c > 0.0).count();
    if used(&ra) == 1 || used(&cb) == 1 {
        return if used(&ra) == used(&cb) { 1.0 } else { 0.0 };
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

#[test]
fn criterion_08_clustering_oracles() {
    let mut r = rng(8);
    let (mut worst_fmi, mut worst_nmi): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (ka, kb) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let a: Vec<usize> = (0..50).map(|_| r.gen_range(0..ka)).collect();
        let b: Vec<usize> = (0..50).map(|_| r.gen_range(0..kb)).collect();
        worst_fmi = worst_fmi.max((fmi(&a, &b).unwrap() - fmi_pairs(&a, &b)).abs());
        worst_nmi = worst_nmi.max((nmi(&a, &b).unwrap() - nmi_table(&a, &b)).abs());
    }
    let example = fmi(&[0, 0, 0, 1], &[0, 0, 1, 1]).unwrap();
    let example_err = (example - 1.0 / 6f64.sqrt()).abs();

    let mut monotone = 0;
    for inst in 0..50u64 {
        let n = r.gen_range(20..120);
        let d = r.gen_range(1..6);
        let k = r.gen_range(2..8);
        let x = normal_matrix(&mut r, n, d, 1.0);
        let res = kmeans(x.view(), k, inst, 300).unwrap();
        let tr = &res.inertia_trace;
        if tr.windows(2).all(|w| w[1] <= w[0]) && tr.last() == Some(&res.inertia) {
            monotone += 1;
        }
    }
    report(
        8,
        "clustering oracles",
        worst_fmi <= 1e-10 && worst_nmi <= 1e-10 && example_err <= 1e-12 && monotone == 50,
        format!(
            "max |fmi-oracle|={worst_fmi:.1e}, |nmi-oracle|={worst_nmi:.1e} (tol 1e-10); example {example:.15} err {example_err:.1e}; monotone inertia {monotone}/50"
        ),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_tsne_sanity() {
    let mut r = rng(9);
    let n = 200;
    let mut x = normal_matrix(&mut r, n, 10, 1.0);
    let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for (mut row, &c) in x.rows_mut().into_iter().zip(&truth) {
        row += if c == 1 { 6.0 } else { -6.0 } / (10f64).sqrt();
    }
    let res = tsne_embed(x.view(), 30.0, 1000, 9).unwrap();
    let tail = &res.kl_trace[res.kl_trace.len() - 100..];
    let worst_rise = tail
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let clusters = kmeans(res.embedding.view(), 2, 9, 300).unwrap().labels;
    let same = clusters.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let agreement = same.max(1.0 - same);
    report(
        9,
        "t-SNE sanity",
        worst_rise <= 1e-3 && agreement >= 0.95,
        format!(
            "largest KL rise over last 100 iterations {worst_rise:.2e} (tol 1e-3), final KL {:.4}, 2-means agreement {agreement:.3} (need >= 0.95)",
            tail[tail.len() - 1]
        ),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_activation_maximization() {
    let d = require_desk(10, "activation maximization");
    let a = &d.cfg.analysis;
    let mut rising = 0;
    let mut lines = Vec::new();
    for class in 0..10 {
        let res = activation_maximization(
            &d.full.model,
            Route::TARGET_MAIN,
            class,
            200,
            a.actmax_step_size,
            d.cfg.seed,
        )
        .unwrap();
        if res.final_logit() > res.initial_logit() {
            rising += 1;
        }
        lines.push(format!(
            "{class}:{:.2}->{:.2}",
            res.initial_logit(),
            res.final_logit()
        ));
    }
    let first = activation_maximization(
        &d.full.model,
        Route::TARGET_MAIN,
        3,
        200,
        a.actmax_step_size,
        21,
    )
    .unwrap();
    let again = activation_maximization(
        &d.full.model,
        Route::TARGET_MAIN,
        3,
        200,
        a.actmax_step_size,
        21,
    )
    .unwrap();
    let identical = first
        .image
        .data()
        .iter()
        .zip(again.image.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    report(
        10,
        "activation maximization",
        rising == 10 && identical,
        format!(
            "logit rose for {rising}/10 classes [{}]; seeded rerun bit-identical={identical}",
            lines.join(" ")
        ),
    );
}

// ---------------------------------------------------------------- 11

#[test]
fn criterion_11_loss_variant_equivalence() {
    let d = require_desk(11, "loss-variant equivalence");
    let l1 = d.full.target_accuracy;
    let mut ok = true;
    let mut parts = vec![format!("l1 {l1:.4}")];
    for kind in [Discrepancy::Mmd, Discrepancy::Adversarial] {
        let cfg = desk_config(kind).unwrap();
        let run = train_with_data(&cfg, &d.data, None);
        match run {
            Ok(out) => {
                let gap = (out.target_accuracy - l1).abs();
                ok &= gap <= 0.10;
                parts.push(format!(
                    "{kind} {:.4} (|diff| {gap:.4})",
                    out.target_accuracy
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{kind} failed: {e}"));
            }
        }
    }
    report(
        11,
        "loss-variant equivalence",
        ok,
        format!("{} (need |diff| <= 0.10)", parts.join(", ")),
    );
}
