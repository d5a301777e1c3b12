//! Transfers a pre-trained model to a small labeled split and fine-tunes it
//! next to a freshly initialized model on the same subjects.

use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::harness::{finetune, pretrain, TrainConfig};
use mim::{MimModel, ModelConfig};

fn main() -> mim::Result<()> {
    let pool = zscore_all(&generate_synthetic(&SynthConfig {
        subjects: 64,
        labeled: false,
        seed: 2,
        ..SynthConfig::default()
    })?)?;
    let labeled = zscore_all(&generate_synthetic(&SynthConfig::default())?)?;
    let (train, rest) = labeled.split_at(16);
    let (val, test) = rest.split_at(34);

    let cfg = ModelConfig::with_regions(16);
    let mut pre = MimModel::init(&cfg, 3)?;
    pretrain(
        &mut pre,
        &pool,
        &TrainConfig {
            max_epochs: 4,
            patience: 2,
            ..TrainConfig::default()
        },
    )?;

    let ft = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    for (name, mut model) in [("pretrained", pre), ("fresh", MimModel::init(&cfg, 4)?)] {
        let frozen = model.params.get(model.params.id("y_head.0.weight").expect("y head")).clone();
        let out = finetune(&mut model, train, val, test, &ft)?;
        let still = model.params.get(model.params.id("y_head.0.weight").expect("y head")) == &frozen;
        println!(
            "{name:>10}: best epoch {:>2}  val AUC {:.3}  test AUC {:.3}  y head unchanged {still}",
            out.best_epoch, out.val_auc, out.test_auc
        );
    }
    Ok(())
}
