//! Tiny synthetic MNIST-layout datasets for end-to-end runs.

use std::fs;
use std::path::Path;

use zda_core::data::{expected_files, serialize_idx, IdxArray, Split, TaskId};

/// Class `c` is a bright 6x6 block at a class-specific spot plus faint noise.
fn glyph(class: usize, variant: usize, task: TaskId) -> Vec<u8> {
    let mut img = vec![0u8; 28 * 28];
    let (cy, cx) = (3 + (class / 4) * 8, 3 + (class % 4) * 6);
    let thick = if task == TaskId::Fashion { 2 } else { 0 };
    for y in cy..(cy + 6 + thick).min(28) {
        for x in cx..(cx + 6).min(28) {
            img[y * 28 + x] = 220;
        }
    }
    for (i, p) in img.iter_mut().enumerate() {
        if *p == 0 && (i * 31 + variant * 17) % 23 == 0 {
            *p = 40;
        }
    }
    img
}

fn write_split(root: &Path, task: TaskId, split: Split, n: usize) {
    let (img_rel, lbl_rel) = expected_files(task, split);
    let classes = task.class_count();
    let labels: Vec<u8> = (0..n).map(|i| (i % classes) as u8).collect();
    let pixels: Vec<u8> = (0..n).flat_map(|i| glyph(i % classes, i, task)).collect();
    for (rel, arr) in [
        (
            &img_rel,
            IdxArray {
                dims: vec![n, 28, 28],
                data: pixels,
            },
        ),
        (
            &lbl_rel,
            IdxArray {
                dims: vec![n],
                data: labels,
            },
        ),
    ] {
        let path = root.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, serialize_idx(&arr).unwrap()).unwrap();
    }
}

/// Writes MNIST and Fashion-MNIST stand-ins under `root`.
pub fn write_datasets(root: &Path, train: usize, test: usize) {
    for task in [TaskId::Mnist, TaskId::Fashion] {
        write_split(root, task, Split::Train, train);
        write_split(root, task, Split::Test, test);
    }
}

/// A fast config writing into `out`.
pub fn config_json(out: &Path, epochs: usize) -> String {
    format!(
        r#"{{
  "tasks": {{"main": "D_M", "aux": "D_F"}},
  "domains": {{"source": "G", "target": "N"}},
  "width_multiplier": 0.125,
  "optimizer": {{"epochs": {epochs}, "batch_size": 8}},
  "subset": {{"main_train": 0, "aux_train": 0, "test": 0}},
  "seed": 3,
  "output_dir": {out:?},
  "checkpoint_every": 1,
  "analysis": {{"samples_per_domain": 12, "tsne_samples": 24, "perplexity": 3.0,
               "tsne_iterations": 60, "actmax_steps": 3, "actmax_step_size": 0.05}}
}}"#
    )
}
