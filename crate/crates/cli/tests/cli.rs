mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use zda_core::config::RunManifest;
use zda_core::evaluation::read_results;

fn zda(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zda"))
        .args(args)
        .env("ZDA_DATA_ROOT", data)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _dir: TempDir,
    data: std::path::PathBuf,
    out: std::path::PathBuf,
    config: std::path::PathBuf,
}

fn fixture(epochs: usize) -> Fixture {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    common::write_datasets(&data, 48, 24);
    let out = dir.path().join("run");
    let config = dir.path().join("config.json");
    fs::write(&config, common::config_json(&out, epochs)).unwrap();
    Fixture {
        _dir: dir,
        data,
        out,
        config,
    }
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn prepare_lists_four_views() {
    let f = fixture(1);
    let o = zda(
        &f.data,
        &["prepare", "--config", f.config.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let names: Vec<&str> = lines.iter().map(|v| v["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["main-sr", "aux-sr", "aux-t", "main-t"]);
    assert_eq!(lines[0]["count"], 48);
    assert_eq!(lines[3]["count"], 24);
    // rerun reports the same checksums
    let again = zda(
        &f.data,
        &["prepare", "--config", f.config.to_str().unwrap()],
    );
    assert_eq!(stdout(&o), stdout(&again));
}

#[test]
fn missing_data_names_expected_files() {
    let f = fixture(1);
    let empty = f.data.parent().unwrap().join("nothing");
    let o = zda(&empty, &["prepare", "--config", f.config.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("train-images-idx3-ubyte"), "{err}");
    assert!(err.contains("train-labels-idx1-ubyte"), "{err}");
}

#[test]
fn train_eval_analyze_round_trip() {
    let f = fixture(2);
    let cfg = f.config.to_str().unwrap();
    let o = zda(&f.data, &["train", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    for p in [
        "manifest.json",
        "train.jsonl",
        "checkpoints/final.ckpt",
        "checkpoints/baseline.ckpt",
        "checkpoints/epoch-001.ckpt",
        "checkpoints/epoch-002.ckpt",
    ] {
        assert!(f.out.join(p).is_file(), "missing {p}");
    }
    let log = fs::read_to_string(f.out.join("train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let trained = manifest(&f.out).metrics["target_accuracy"];

    let o = zda(&f.data, &["eval", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&f.out);
    assert_eq!(m.metrics["eval_target_accuracy"], trained);
    assert_eq!(
        m.metrics["eval_baseline_accuracy"],
        m.metrics["baseline_accuracy"]
    );
    let rows = read_results(&f.out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].accuracy, trained);
    assert_eq!(rows[0].config_hash, m.config_hash);

    let o = zda(&f.data, &["analyze", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    for p in [
        "alignment.json",
        "embedding_p.csv",
        "embedding_k.csv",
        "embedding_q.csv",
        "actmax.png",
        "actmax_trace.csv",
    ] {
        assert!(f.out.join("analysis").join(p).is_file(), "missing {p}");
    }
    let emb = fs::read_to_string(f.out.join("analysis/embedding_q.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "x,y,label,domain_role,tap");
    assert_eq!(emb.lines().count(), 1 + 24);
    let m = manifest(&f.out);
    for key in [
        "alignment",
        "embedding_p",
        "actmax_grid",
        "results",
        "checkpoint",
        "train_log",
    ] {
        let path = &m.artifacts[key];
        assert!(path.exists(), "{key} -> {}", path.display());
    }
}

#[test]
fn analyze_without_checkpoint_fails() {
    let f = fixture(1);
    let o = zda(
        &f.data,
        &["analyze", "--config", f.config.to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
    let o = zda(
        &f.data,
        &[
            "eval",
            "--config",
            f.config.to_str().unwrap(),
            "--checkpoint",
            "/no/such.ckpt",
        ],
    );
    assert!(!o.status.success());
}

#[test]
fn reruns_are_identical_and_hash_tracks_config() {
    let f = fixture(1);
    let cfg = f.config.to_str().unwrap();
    assert!(zda(&f.data, &["train", "--config", cfg]).status.success());
    let first = fs::read(f.out.join("checkpoints/final.ckpt")).unwrap();
    let hash = manifest(&f.out).config_hash;

    // same config into a fresh directory
    let other = f.out.with_file_name("run2");
    let cfg2 = f.config.with_file_name("config2.json");
    fs::write(&cfg2, common::config_json(&other, 1)).unwrap();
    assert!(zda(&f.data, &["train", "--config", cfg2.to_str().unwrap()])
        .status
        .success());
    assert_eq!(
        first,
        fs::read(other.join("checkpoints/final.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(f.out.join("train.jsonl")).unwrap().len(),
        fs::read(other.join("train.jsonl")).unwrap().len()
    );
    assert_eq!(hash, manifest(&other).config_hash);

    // a different seed changes the hash
    let o = zda(
        &f.data,
        &["train", "--config", cfg2.to_str().unwrap(), "--seed", "4"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(hash, manifest(&other).config_hash);
}

#[test]
fn bad_config_is_reported() {
    let f = fixture(1);
    let bad = f.config.with_file_name("bad.json");
    fs::write(
        &bad,
        r#"{"tasks": {"main": "D_E", "aux": "D_N"}, "domains": {"source": "G", "target": "N"}}"#,
    )
    .unwrap();
    let o = zda(&f.data, &["train", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let typo = f.config.with_file_name("typo.json");
    fs::write(
        &typo,
        r#"{"tasks": {"main": "D_M", "aux": "D_F"}, "domains": {"source": "G", "target": "N"}, "loss": {"gama": 1.0}}"#,
    )
    .unwrap();
    let o = zda(&f.data, &["train", "--config", typo.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));
}
