//! L2-regularized logistic regression on FNC or raw flattened series.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cv::{make_folds, subsample_per_class, ExperimentConfig};
use super::metrics::auc;
use super::report::{ExperimentReport, ReportEntry};
use crate::data::{fnc_features, SubjectSeries};
use crate::error::{MimError, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Upper triangle of the region correlation matrix.
    Fnc,
    /// Region series flattened row-major.
    Raw,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Fnc => "fnc",
            FeatureKind::Raw => "raw",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = MimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fnc" => Ok(FeatureKind::Fnc),
            "raw" => Ok(FeatureKind::Raw),
            other => Err(MimError::Config(format!("unknown feature kind {other:?} (fnc or raw)"))),
        }
    }
}

pub fn features(data: &[SubjectSeries], kind: FeatureKind) -> Result<Vec<Vec<f64>>> {
    data.iter()
        .map(|s| match kind {
            FeatureKind::Fnc => fnc_features(s),
            FeatureKind::Raw => {
                s.check_finite()?;
                Ok(s.series.data().to_vec())
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    /// Penalty `l2/2 · ‖w‖²` added to the mean log-loss; the bias is free.
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

/// Fitted model; features are standardized with training statistics.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of `ZᵀZ` for `Z = [X | 1]`, via power iteration on
/// the smaller Gram matrix.
fn top_eigenvalue(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&x[i], &x[j]) + 1.0).collect())
        .collect();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = gram.iter().map(|row| dot(row, &v)).collect();
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|e| e / norm).collect();
        if (next - lambda).abs() <= 1e-10 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: &LrConfig) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n == 0 {
            return Err(MimError::Batch(format!("{n} feature rows for {} labels", y.len())));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(MimError::Batch("inconsistent feature dimension".into()));
        }
        if !(y.contains(&0) && y.contains(&1)) {
            return Err(MimError::DegenerateSplit("logistic regression needs both classes".into()));
        }
        let nf = n as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / nf;
            }
        }
        let mut scale = vec![0.0; d];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / nf;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();

        let lipschitz = top_eigenvalue(&z) / (4.0 * nf) + cfg.l2;
        let step = 1.0 / lipschitz;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = cfg.l2 * wi);
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(y) {
                let r = (sigmoid(dot(zi, &w) + b) - f64::from(yi)) / nf;
                gb += r;
                for (g, v) in gw.iter_mut().zip(zi) {
                    *g += r * v;
                }
            }
            let norm = (dot(&gw, &gw) + gb * gb).sqrt();
            if !norm.is_finite() {
                return Err(MimError::Divergence("logistic regression gradient".into()));
            }
            if norm < cfg.tolerance {
                converged = true;
                break;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= step * g;
            }
            b -= step * gb;
            iterations += 1;
        }
        Ok(Self {
            weights: w,
            bias: b,
            mean,
            scale,
            iterations,
            converged,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum::<f64>()
            + self.bias
    }
}

/// Trains on one split and returns the test AUC.
pub fn baseline_lr(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    test_x: &[Vec<f64>],
    test_y: &[u8],
    cfg: &LrConfig,
) -> Result<f64> {
    let model = LogisticRegression::fit(train_x, train_y, cfg)?;
    let scores: Vec<f64> = test_x.iter().map(|r| model.decision(r)).collect();
    auc(&scores, test_y)
}

/// Logistic regression on the exact splits [`super::cv::kfold_experiment`]
/// would use under the same config. `best_epoch` holds the GD iteration count.
pub fn baseline_experiment(
    data: &[SubjectSeries],
    kind: FeatureKind,
    cfg: &ExperimentConfig,
    lr: &LrConfig,
) -> Result<ExperimentReport> {
    let labels: Vec<u8> = data
        .iter()
        .map(|s| s.label.ok_or_else(|| MimError::DegenerateSplit(format!("subject {:?} has no label", s.subject_id))))
        .collect::<Result<_>>()?;
    let x = features(data, kind)?;
    let folds = make_folds(&labels, &cfg.train.folds, cfg.train.seed)?;
    let n_folds = cfg.max_folds.map_or(folds.len(), |m| m.min(folds.len()));
    let rows = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<u8>) {
        (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let mut entries = Vec::new();
    for (f, split) in folds.iter().take(n_folds).enumerate() {
        for trial in 0..cfg.trials {
            let run_seed = derive_seed(cfg.train.seed, &format!("fold{f}/trial{trial}"));
            let train_idx = match cfg.train_per_class {
                Some(k) => subsample_per_class(&split.train, &labels, k, run_seed)?,
                None => split.train.clone(),
            };
            let (tx, ty) = rows(&train_idx);
            let model = LogisticRegression::fit(&tx, &ty, lr)?;
            let score = |idx: &[usize]| -> Result<f64> {
                let (ex, ey) = rows(idx);
                let s: Vec<f64> = ex.iter().map(|r| model.decision(r)).collect();
                auc(&s, &ey)
            };
            entries.push(ReportEntry {
                fold: f,
                trial,
                train_size: train_idx.len(),
                best_epoch: model.iterations,
                val_auc: score(&split.val)?,
                test_auc: score(&split.test)?,
            });
        }
    }
    let name = match cfg.train_per_class {
        Some(k) => format!("lr-{kind}@{k}"),
        None => format!("lr-{kind}"),
    };
    Ok(ExperimentReport::new(&name, cfg.train_per_class, entries))
}
