mod common;

use std::collections::HashSet;

use common::{synthetic, tiny_config};
use mim::data::SubjectSeries;
use mim::harness::cv::{kfold_experiment, make_folds, ExperimentConfig, FoldSpec, InitRecipe};
use mim::harness::metrics::{auc, mean_std, welch_t_test};
use mim::harness::report::ExperimentReport;
use mim::harness::train::{finetune, pretrain, TrainConfig};
use mim::{MimError, MimModel};
use proptest::prelude::*;

/// Fraction of (positive, negative) pairs ordered correctly, ties ½.
fn pair_count(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1;
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pair_count(cells in prop::collection::vec((0i32..6, 0u8..2), 2..60)) {
        let scores: Vec<f64> = cells.iter().map(|c| f64::from(c.0) / 3.0).collect();
        let labels: Vec<u8> = cells.iter().map(|c| c.1).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        prop_assert_eq!(auc(&scores, &labels).unwrap(), pair_count(&scores, &labels));
    }

    #[test]
    fn welch_p_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 2..12), b in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let ab = welch_t_test(&a, &b);
        let ba = welch_t_test(&b, &a);
        if let (Ok(x), Ok(y)) = (ab, ba) {
            prop_assert!((x.p - y.p).abs() < 1e-12);
            prop_assert!((x.t + y.t).abs() < 1e-12);
            prop_assert!(x.p > 0.0 && x.p <= 1.0);
        }
    }
}

#[test]
fn auc_reference_cases() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auc(&[3.0, 3.0, 3.0], &[0, 1, 1]).unwrap(), 0.5);
    assert!(matches!(auc(&[1.0, 2.0], &[0, 0]), Err(MimError::Contract(_))));
}

#[test]
fn welch_reference_values() {
    let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((same.t, same.p), (0.0, 1.0));
    // Independent oracle: scipy.stats.ttest_ind(a, b, equal_var=False).
    let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
    assert!((r.t + 1.0954451150103324).abs() < 1e-9, "t = {}", r.t);
    assert!((r.p - 0.3153335962012296).abs() < 1e-6, "p = {}", r.p);
    assert!((r.dof - 6.0).abs() < 1e-12);
    // scipy.stats.ttest_ind([0.61, 0.72, 0.55, 0.8, 0.66], [0.5, 0.52, 0.49, 0.58], equal_var=False)
    let r = welch_t_test(&[0.61, 0.72, 0.55, 0.8, 0.66], &[0.5, 0.52, 0.49, 0.58]).unwrap();
    assert!((r.t - 3.0469951372290645).abs() < 1e-9);
    assert!((r.p - WELCH_UNEQUAL_P).abs() < 1e-6, "p = {}", r.p);
    assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
}

const WELCH_UNEQUAL_P: f64 = 0.024814947185417033;

fn labels(data: &[SubjectSeries]) -> Vec<u8> {
    data.iter().map(|s| s.label.unwrap()).collect()
}

#[test]
fn folds_never_leak_subjects() {
    let data = synthetic(8, 24, 90, true, 1);
    let spec = FoldSpec {
        folds: 6,
        val_size: 9,
        test_size: 15,
    };
    let folds = make_folds(&labels(&data), &spec, 4).unwrap();
    let mut tested = HashSet::new();
    for f in &folds {
        let id = |i: &usize| data[*i].subject_id.clone();
        let test: HashSet<String> = f.test.iter().map(id).collect();
        let val: HashSet<String> = f.val.iter().map(id).collect();
        let train: HashSet<String> = f.train.iter().map(id).collect();
        assert!(test.is_disjoint(&val) && test.is_disjoint(&train) && val.is_disjoint(&train));
        assert_eq!(test.len() + val.len() + train.len(), data.len());
        tested.extend(test);
    }
    assert_eq!(tested.len(), 90);
    assert!(matches!(
        make_folds(&labels(&data), &FoldSpec { folds: 7, ..spec }, 4),
        Err(MimError::Config(_))
    ));
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 6,
        patience: 3,
        seed,
        folds: FoldSpec {
            folds: 3,
            val_size: 8,
            test_size: 8,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn report_mean_is_mean_of_entries_and_reruns_match() {
    let data = synthetic(8, 24, 40, true, 2);
    let cfg = ExperimentConfig {
        train: quick(3),
        trials: 2,
        train_per_class: Some(6),
        max_folds: Some(2),
    };
    let recipe = InitRecipe::Fresh(tiny_config(8, 24));
    let a = kfold_experiment("fresh", &data, &recipe, &cfg).unwrap();
    let b = kfold_experiment("fresh", &data, &recipe, &cfg).unwrap();
    assert_eq!(a.entries.len(), 4);
    let (m, _) = mean_std(&a.test_aucs());
    assert_eq!(a.mean, m);
    assert!(a.entries.iter().all(|e| (0.0..=1.0).contains(&e.test_auc) && e.train_size == 12));
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    let parsed = ExperimentReport::from_jsonl(&a.to_jsonl().unwrap()).unwrap();
    assert_eq!(parsed, vec![a]);
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let data = synthetic(8, 24, 12, true, 5);
    let model = MimModel::init(&tiny_config(8, 24), 1).unwrap();
    let mut tuned = model.clone();
    let cfg = TrainConfig {
        max_epochs: 0,
        patience: 0,
        ..quick(0)
    };
    let out = finetune(&mut tuned, &data[..4], &data[4..8], &data[8..], &cfg).unwrap();
    assert_eq!(out.best_epoch, 0);
    for s in &data {
        assert_eq!(model.forward_classify(s).unwrap(), tuned.forward_classify(s).unwrap());
    }
}

#[test]
fn early_stopping_keeps_best_validation_epoch() {
    let data = synthetic(8, 24, 30, true, 6);
    let mut model = MimModel::init(&tiny_config(8, 24), 2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 4,
        ..quick(1)
    };
    let out = finetune(&mut model, &data[..14], &data[14..22], &data[22..], &cfg).unwrap();
    let best = out.history.iter().map(|e| e.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.val_auc, best);
    let first_best = out.history.iter().find(|e| e.val_auc == best).unwrap().epoch;
    assert_eq!(out.best_epoch, first_best);
    assert!(out.history.len() <= first_best + cfg.patience);
    assert_eq!(mim::harness::train::evaluate_auc(&model, &data[14..22]).unwrap(), best);
}

#[test]
fn single_class_training_split_is_degenerate() {
    let data = synthetic(8, 24, 12, true, 5);
    let zeros: Vec<SubjectSeries> = data.iter().filter(|s| s.label == Some(0)).cloned().collect();
    let mut model = MimModel::init(&tiny_config(8, 24), 1).unwrap();
    let r = finetune(&mut model, &zeros, &data[..4], &data[4..8], &quick(0));
    assert!(matches!(r, Err(MimError::DegenerateSplit(_))));
}

#[test]
fn memorizes_a_duplicated_subject() {
    let data = synthetic(8, 24, 8, true, 7);
    let mut model = MimModel::init(&tiny_config(8, 24), 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 60,
        patience: 59,
        finetune_batch_size: 8,
        ..quick(2)
    };
    let pair = [data[0].clone(), data[1].clone()];
    finetune(&mut model, &data, &pair, &pair, &cfg).unwrap();
    assert_eq!(mim::harness::train::evaluate_auc(&model, &pair).unwrap(), 1.0);
}

#[test]
fn pretraining_reduces_infonce() {
    let data = synthetic(8, 24, 200, false, 8);
    let mut model = MimModel::init(&tiny_config(8, 24), 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 8,
        patience: 7,
        ..quick(5)
    };
    let out = pretrain(&mut model, &data, &cfg).unwrap();
    let first = &out.curve[0];
    let last = out.curve.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    assert!(last.train_mi > first.train_mi);
}

#[test]
fn initial_loss_is_near_uniform() {
    let data = synthetic(8, 24, 32, false, 9);
    let model = MimModel::init(&tiny_config(8, 24), 4).unwrap();
    let l = mim::harness::train::pretrain_batch_loss(&model, &data).unwrap();
    let uniform = 32.0 * 32f64.ln();
    assert!((l / uniform - 1.0).abs() < 0.2, "{l} vs {uniform}");
}

#[test]
fn batch_of_one_is_allowed() {
    let data = synthetic(8, 24, 6, false, 10);
    let mut model = MimModel::init(&tiny_config(8, 24), 4).unwrap();
    let cfg = TrainConfig {
        pretrain_batch_size: 1,
        max_epochs: 2,
        patience: 1,
        pretrain_holdout: 0.0,
        ..quick(6)
    };
    let out = pretrain(&mut model, &data, &cfg).unwrap();
    assert!(out.curve.iter().all(|e| e.train_loss == 0.0));
}
