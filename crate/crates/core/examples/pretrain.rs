//! Contrastive pre-training on an unlabeled pool, printing the held-out
//! InfoNCE loss and mutual-information estimate per epoch.
//!
//! RUST_LOG=info cargo run --release --example pretrain

use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::harness::{pretrain, TrainConfig};
use mim::{MimModel, ModelConfig};

fn main() -> mim::Result<()> {
    env_logger::init();
    let pool = zscore_all(&generate_synthetic(&SynthConfig {
        subjects: 96,
        labeled: false,
        seed: 7,
        ..SynthConfig::default()
    })?)?;
    let mut model = MimModel::init(&ModelConfig::with_regions(16), 1)?;
    let cfg = TrainConfig {
        max_epochs: 12,
        learning_rate: 1e-3,
        pretrain_holdout: 0.33,
        ..TrainConfig::default()
    };
    let out = pretrain(&mut model, &pool, &cfg)?;
    println!("epoch  train_loss  held-out loss/N  held-out mi");
    for e in &out.curve {
        println!("{:>5}  {:>10.4}  {:>15.4}  {:>11.4}", e.epoch, e.train_loss, e.val_loss, e.val_mi);
    }
    println!("kept epoch {} (log 32 = {:.4})", out.best_epoch, 32f64.ln());
    Ok(())
}
