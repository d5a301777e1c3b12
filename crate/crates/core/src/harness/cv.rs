//! Stratified k-fold protocol, seeded trials and learning-curve sweeps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::welch_t_test;
use super::report::{Comparison, CurvePoint, ExperimentReport, ReportEntry};
use super::train::{finetune, TrainConfig};
use crate::data::SubjectSeries;
use crate::error::{MimError, Result};
use crate::model::{MimModel, ModelConfig};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldSpec {
    pub folds: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for FoldSpec {
    fn default() -> Self {
        Self {
            folds: 18,
            val_size: 17,
            test_size: 17,
        }
    }
}

/// Subject indices of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn labels_of(data: &[SubjectSeries]) -> Result<Vec<u8>> {
    data.iter()
        .map(|s| {
            s.label
                .ok_or_else(|| MimError::DegenerateSplit(format!("subject {:?} has no label", s.subject_id)))
        })
        .collect()
}

/// Class-interleaved ordering: within each class a seeded shuffle, then
/// classes merged by relative position so every contiguous window is
/// balanced as far as the class counts allow.
fn stratified_order(labels: &[u8], seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, "folds/order");
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(labels.len());
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        for (rank, i) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, class, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Partitions a labeled set into `folds` disjoint test blocks.
///
/// The test blocks tile the first `folds · test_size` subjects of a
/// stratified order (the held-out pool). For fold `f` the validation set is
/// the next `val_size` subjects after block `f` (wrapping), the rest train.
pub fn make_folds(labels: &[u8], spec: &FoldSpec, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = labels.len();
    let pool = spec.folds * spec.test_size;
    if spec.folds == 0 || spec.test_size == 0 || spec.val_size == 0 {
        return Err(MimError::Config("folds, val_size and test_size must be positive".into()));
    }
    if pool > n {
        return Err(MimError::Config(format!(
            "{} folds × {} test subjects exceed the {n} available",
            spec.folds, spec.test_size
        )));
    }
    if spec.test_size + spec.val_size + 2 > n {
        return Err(MimError::Config(format!(
            "test {} + val {} leaves no training data among {n} subjects",
            spec.test_size, spec.val_size
        )));
    }
    let order = stratified_order(labels, seed);
    let mut out = Vec::with_capacity(spec.folds);
    for f in 0..spec.folds {
        let test: Vec<usize> = order[f * spec.test_size..(f + 1) * spec.test_size].to_vec();
        let rest: Vec<usize> = order[(f + 1) * spec.test_size..]
            .iter()
            .chain(&order[..f * spec.test_size])
            .copied()
            .collect();
        let val = rest[..spec.val_size].to_vec();
        let train = rest[spec.val_size..].to_vec();
        out.push(FoldSplit { train, val, test });
    }
    Ok(out)
}

/// Draws `per_class` training subjects of each class from `train`.
pub fn subsample_per_class(train: &[usize], labels: &[u8], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = stream(seed, "subsample");
    let mut out = Vec::with_capacity(2 * per_class);
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.len() < per_class {
            return Err(MimError::Config(format!(
                "only {} training subjects of class {class}, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..per_class]);
    }
    out.sort_unstable();
    Ok(out)
}

/// How each fine-tuning run is initialized.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum InitRecipe<'m> {
    /// Random initialization, seeded per fold and trial.
    Fresh(ModelConfig),
    /// Copy of a pre-trained model.
    Pretrained(&'m MimModel),
}

impl InitRecipe<'_> {
    pub fn arm_name(&self) -> &'static str {
        match self {
            InitRecipe::Fresh(_) => "fresh",
            InitRecipe::Pretrained(_) => "pretrained",
        }
    }

    fn instantiate(&self, seed: u64) -> Result<MimModel> {
        match self {
            InitRecipe::Fresh(cfg) => MimModel::init(cfg, seed),
            InitRecipe::Pretrained(m) => Ok((*m).clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Seeded trials per fold.
    pub trials: usize,
    /// Training subjects per class; `None` uses every training subject.
    pub train_per_class: Option<usize>,
    /// Restrict to the first `max_folds` folds (desk-scale runs).
    pub max_folds: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            trials: 10,
            train_per_class: None,
            max_folds: None,
        }
    }
}

fn pick(data: &[SubjectSeries], idx: &[usize]) -> Vec<SubjectSeries> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

/// Fine-tunes one model per (fold, trial) and records its test AUC.
///
/// Fold partitions depend only on `cfg.train.seed`, so two recipes run with
/// the same config are evaluated on identical splits.
pub fn kfold_experiment(
    name: &str,
    data: &[SubjectSeries],
    recipe: &InitRecipe<'_>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if cfg.trials == 0 {
        return Err(MimError::Config("at least one trial is required".into()));
    }
    let labels = labels_of(data)?;
    let folds = make_folds(&labels, &cfg.train.folds, cfg.train.seed)?;
    let n_folds = cfg.max_folds.map_or(folds.len(), |m| m.min(folds.len()));
    let mut entries = Vec::with_capacity(n_folds * cfg.trials);
    for (f, split) in folds.iter().take(n_folds).enumerate() {
        for trial in 0..cfg.trials {
            let run_seed = derive_seed(cfg.train.seed, &format!("fold{f}/trial{trial}"));
            let train_idx = match cfg.train_per_class {
                Some(k) => subsample_per_class(&split.train, &labels, k, run_seed)?,
                None => split.train.clone(),
            };
            let mut model = recipe.instantiate(derive_seed(run_seed, "init"))?;
            let run_cfg = TrainConfig {
                seed: run_seed,
                ..cfg.train.clone()
            };
            let out = finetune(
                &mut model,
                &pick(data, &train_idx),
                &pick(data, &split.val),
                &pick(data, &split.test),
                &run_cfg,
            )?;
            log::info!(
                "{name} fold {f} trial {trial}: n_train {} best epoch {} val {:.3} test {:.3}",
                train_idx.len(),
                out.best_epoch,
                out.val_auc,
                out.test_auc
            );
            entries.push(ReportEntry {
                fold: f,
                trial,
                train_size: train_idx.len(),
                best_epoch: out.best_epoch,
                val_auc: out.val_auc,
                test_auc: out.test_auc,
            });
        }
    }
    Ok(ExperimentReport::new(name, cfg.train_per_class, entries))
}

/// Welch test of `report`'s test AUCs against `baseline`'s.
pub fn compare(report: &ExperimentReport, baseline: &ExperimentReport) -> Result<Comparison> {
    let t = welch_t_test(&report.test_aucs(), &baseline.test_aucs())?;
    Ok(Comparison {
        baseline: baseline.name.clone(),
        t: t.t,
        p: t.p,
    })
}

/// Both arms of one learning-curve size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub train_size: usize,
    pub pretrained: CurvePoint,
    pub fresh: CurvePoint,
    pub t: f64,
    pub p: f64,
}

/// Sweeps training sizes per class for a pre-trained and a fresh arm on
/// identical splits.
pub fn learning_curve(
    data: &[SubjectSeries],
    pretrained: &MimModel,
    sizes: &[usize],
    cfg: &ExperimentConfig,
) -> Result<(Vec<CurveRow>, Vec<ExperimentReport>)> {
    let fresh = InitRecipe::Fresh(pretrained.config().clone());
    let pre = InitRecipe::Pretrained(pretrained);
    let mut rows = Vec::with_capacity(sizes.len());
    let mut reports = Vec::with_capacity(2 * sizes.len());
    for &size in sizes {
        let c = ExperimentConfig {
            train_per_class: Some(size),
            ..cfg.clone()
        };
        let rp = kfold_experiment(&format!("pretrained@{size}"), data, &pre, &c)?;
        let rf = kfold_experiment(&format!("fresh@{size}"), data, &fresh, &c)?;
        let (t, p) = match welch_t_test(&rp.test_aucs(), &rf.test_aucs()) {
            Ok(t) => (t.t, t.p),
            Err(_) => (f64::NAN, f64::NAN),
        };
        rows.push(CurveRow {
            train_size: size,
            pretrained: rp.curve_point(),
            fresh: rf.curve_point(),
            t,
            p,
        });
        reports.push(rp);
        reports.push(rf);
    }
    Ok((rows, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labels(n0: usize, n1: usize) -> Vec<u8> {
        let mut l = vec![0; n0];
        l.extend(vec![1; n1]);
        l
    }

    #[test]
    fn folds_partition_the_pool() {
        let l = labels(160, 151);
        let spec = FoldSpec::default();
        let folds = make_folds(&l, &spec, 3).unwrap();
        assert_eq!(folds.len(), 18);
        let mut seen = HashSet::new();
        for f in &folds {
            assert_eq!(f.test.len(), 17);
            assert_eq!(f.val.len(), 17);
            assert_eq!(f.train.len() + 34, l.len());
            for &i in &f.test {
                assert!(seen.insert(i), "subject {i} in two test folds");
            }
            let t: HashSet<_> = f.test.iter().collect();
            assert!(f.val.iter().chain(&f.train).all(|i| !t.contains(i)));
            let v: HashSet<_> = f.val.iter().collect();
            assert!(f.train.iter().all(|i| !v.contains(i)));
            let ones = f.test.iter().filter(|&&i| l[i] == 1).count();
            assert!((8..=9).contains(&ones), "unbalanced test fold: {ones}");
        }
        assert_eq!(seen.len(), 18 * 17);
    }

    #[test]
    fn infeasible_spec_is_config_error() {
        let l = labels(150, 150);
        assert!(matches!(make_folds(&l, &FoldSpec::default(), 0), Err(MimError::Config(_))));
    }

    #[test]
    fn subsample_is_balanced() {
        let l = labels(30, 30);
        let train: Vec<usize> = (0..60).collect();
        let s = subsample_per_class(&train, &l, 8, 1).unwrap();
        assert_eq!(s.iter().filter(|&&i| l[i] == 1).count(), 8);
        assert_eq!(s.len(), 16);
        assert!(subsample_per_class(&train, &l, 31, 1).is_err());
    }
}
