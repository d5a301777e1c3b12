//! Logistic regression on FNC features and on raw flattened series over the
//! same folds.

use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::harness::report::summary_table;
use mim::harness::{baseline_experiment, ExperimentConfig, FeatureKind, LrConfig};

fn main() -> mim::Result<()> {
    let data = zscore_all(&generate_synthetic(&SynthConfig::default())?)?;
    let mut reports = Vec::new();
    for (kind, k) in [(FeatureKind::Fnc, 100), (FeatureKind::Fnc, 16), (FeatureKind::Raw, 16)] {
        let cfg = ExperimentConfig {
            trials: 1,
            train_per_class: Some(k),
            ..ExperimentConfig::default()
        };
        reports.push(baseline_experiment(&data, kind, &cfg, &LrConfig::default())?);
    }
    print!("{}", summary_table(&reports));
    Ok(())
}
