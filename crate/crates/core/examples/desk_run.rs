//! Trains the desk preset on G -> N (main D_M, aux D_F) and prints per-epoch
//! losses with the zero-shot target accuracy.
//!
//! `cargo run --release -p zda-core --example desk_run -- [l1|mmd|adversarial] [epochs] [gamma] [pairs:2|3] [baseline:0|1]`

use std::time::Instant;

use zda_core::config::{ExperimentConfig, Preset};
use zda_core::evaluation::evaluate_accuracy;
use zda_core::experiment::{baseline_with_data, prepare_data};
use zda_core::losses::LossConfig;
use zda_core::model::build_model;
use zda_core::training::{train_model, Trainer};
use zda_core::Route;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let disc = arg(0).unwrap_or("l1");
    let json = format!(
        r#"{{"tasks":{{"main":"D_M","aux":"D_F"}},"domains":{{"source":"G","target":"N"}},"loss":{{"discrepancy":"{disc}"}}}}"#
    );
    let mut cfg = ExperimentConfig::from_json(&json, Some(Preset::Desk))?;
    if let Some(e) = arg(1) {
        cfg.optimizer.epochs = e.parse()?;
    }
    if let Some(g) = arg(2) {
        cfg.loss.gamma = g.parse()?;
    }
    if arg(3) == Some("2") {
        cfg.loss.cls_pairs = LossConfig::two_pair().cls_pairs;
    }
    let t = Instant::now();
    let data = prepare_data(&cfg)?;
    println!("data ready in {:.1}s", t.elapsed().as_secs_f64());

    let model = build_model(&cfg.arch(), 10, 10, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.loss.clone(), cfg.optimizer())?;
    let target = &data.test_target;
    train_model(&mut trainer, &data.train, |s, tr| {
        let acc = evaluate_accuracy(&tr.model, target, Route::TARGET_MAIN).unwrap();
        println!(
            "epoch {:2} l_cls {:.4} l_d {:.5} disc {:?} target {:.4} ({:.1}s)",
            s.epoch, s.l_cls, s.l_d, s.discriminator_loss, acc, s.seconds
        );
        Ok(())
    })?;
    if arg(4) == Some("1") {
        let base = baseline_with_data(&cfg, &data, None)?;
        println!("baseline: target acc {:.4}", base.target_accuracy);
    }
    Ok(())
}
