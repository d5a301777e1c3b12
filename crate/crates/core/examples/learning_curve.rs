//! Pre-trained against fresh initialization over training-set sizes, on
//! identical folds, with a Welch test per size.

use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::harness::report::curve_comparison_csv;
use mim::harness::{learning_curve, pretrain, ExperimentConfig, TrainConfig};
use mim::{MimModel, ModelConfig};

fn main() -> mim::Result<()> {
    env_logger::init();
    let pool = zscore_all(&generate_synthetic(&SynthConfig {
        subjects: 96,
        labeled: false,
        seed: 5,
        ..SynthConfig::default()
    })?)?;
    let labeled = zscore_all(&generate_synthetic(&SynthConfig::default())?)?;

    let mut model = MimModel::init(&ModelConfig::with_regions(16), 6)?;
    pretrain(
        &mut model,
        &pool,
        &TrainConfig {
            max_epochs: 6,
            patience: 3,
            ..TrainConfig::default()
        },
    )?;
    let cfg = ExperimentConfig {
        trials: 1,
        max_folds: Some(2),
        train: TrainConfig {
            max_epochs: 30,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let (rows, _) = learning_curve(&labeled, &model, &[4, 8], &cfg)?;
    print!("{}", curve_comparison_csv(&rows));
    Ok(())
}
