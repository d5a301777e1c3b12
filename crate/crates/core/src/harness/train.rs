//! Pre-training and fine-tuning loops.
//!
//! Both loops expect subjects that were already z-scored at ingestion
//! (see [`crate::data::zscore_all`]).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cv::FoldSpec;
use super::metrics::auc;
use super::optim::Adam;
use crate::autodiff::{Tape, Tensor};
use crate::data::SubjectSeries;
use crate::error::{MimError, Result};
use crate::model::{Heads, MimModel};
use crate::objective::{infonce_with_grads, mi_lower_bound};
use crate::params::{accumulate, zero_grads};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub pretrain_batch_size: usize,
    pub finetune_batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Fraction of the unlabeled pool held out to monitor InfoNCE.
    pub pretrain_holdout: f64,
    pub seed: u64,
    pub folds: FoldSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            pretrain_batch_size: 32,
            finetune_batch_size: 16,
            max_epochs: 200,
            patience: 10,
            pretrain_holdout: 0.1,
            seed: 0,
            folds: FoldSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MimError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.pretrain_batch_size == 0 || self.finetune_batch_size == 0 {
            return Err(MimError::Config("batch sizes must be positive".into()));
        }
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(MimError::Config(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.pretrain_holdout) {
            return Err(MimError::Config("pretrain_holdout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// InfoNCE loss of one batch and the gradient of every parameter.
///
/// Each subject is traced on its own tape; the contrastive loss couples them
/// only through `(C, Y)`, so its gradient is computed once and pushed back
/// through every subject's tape.
pub fn pretrain_batch_grads(model: &MimModel, batch: &[&SubjectSeries]) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.len();
    let d = model.config().embedding_dim();
    let mut traces = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n * d);
    for s in batch {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let tr = model.trace(&mut tape, &p, s, Heads::Pretrain)?;
        let yv = tr.y.expect("pretrain head requested");
        c.extend_from_slice(tape.value(tr.c));
        y.extend_from_slice(tape.value(yv));
        traces.push((tape, p, tr.c, yv));
    }
    let c = Tensor::new(vec![n, d], c)?;
    let y = Tensor::new(vec![n, d], y)?;
    let (loss, dc, dy) = infonce_with_grads(&c, &y)?;
    let mut grads = zero_grads(&model.params);
    for (i, (tape, p, cv, yv)) in traces.iter().enumerate() {
        let seeds = [
            (*cv, dc.row(i).to_vec()),
            (*yv, dy.row(i).to_vec()),
        ];
        let g = tape.backward_from(&seeds)?;
        accumulate(&mut grads, &p.collect(&g, &model.params));
    }
    Ok((loss, grads))
}

/// InfoNCE loss of one batch without gradients.
pub fn pretrain_batch_loss(model: &MimModel, batch: &[SubjectSeries]) -> Result<f64> {
    let (c, y) = model.forward_pretrain(batch)?;
    crate::objective::infonce_loss(&crate::objective::critic_scores(&c, &y)?)
}

fn label_of(s: &SubjectSeries) -> Result<u8> {
    s.label
        .ok_or_else(|| MimError::DegenerateSplit(format!("subject {:?} has no label", s.subject_id)))
}

/// Mean cross-entropy of one labeled batch and its parameter gradients.
pub fn classify_batch_grads(model: &MimModel, batch: &[&SubjectSeries]) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.len() as f64;
    let mut grads = zero_grads(&model.params);
    let mut total = 0.0;
    for s in batch {
        let label = label_of(s)? as usize;
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let tr = model.trace(&mut tape, &p, s, Heads::Classify)?;
        let logits = tr.logits.expect("classify heads requested");
        let k = tape.shape(logits)[0];
        let row = tape.reshape(logits, vec![1, k])?;
        let ls = tape.log_softmax_rows(row)?;
        let picked = tape.slice(ls, 1, label, 1)?;
        let loss = tape.scale(picked, -1.0 / n);
        total += tape.value(loss)[0];
        let g = tape.backward(loss)?;
        accumulate(&mut grads, &p.collect(&g, &model.params));
    }
    Ok((total, grads))
}

/// One epoch's pre-training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    /// Mean over batches of the summed batch InfoNCE loss.
    pub train_loss: f64,
    /// Mean over batches of `log N − L/N`.
    pub train_mi: f64,
    /// Held-out loss per subject (`L/N` averaged over batches).
    pub val_loss: f64,
    pub val_mi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub curve: Vec<PretrainEpoch>,
    pub best_epoch: usize,
}

fn batches<T: Clone>(items: &[T], size: usize) -> Vec<Vec<T>> {
    items.chunks(size).map(<[T]>::to_vec).collect()
}

fn eval_infonce(model: &MimModel, data: &[SubjectSeries], batch: usize) -> Result<(f64, f64)> {
    let mut per_sample = 0.0;
    let mut mi = 0.0;
    let chunks: Vec<&[SubjectSeries]> = data.chunks(batch).collect();
    for chunk in &chunks {
        let l = pretrain_batch_loss(model, chunk)?;
        per_sample += l / chunk.len() as f64;
        mi += mi_lower_bound(l, chunk.len());
    }
    let k = chunks.len().max(1) as f64;
    Ok((per_sample / k, mi / k))
}

/// Self-supervised pre-training on an unlabeled pool (labels are ignored).
///
/// Leaves `model` at the epoch with the lowest held-out InfoNCE loss.
pub fn pretrain(model: &mut MimModel, data: &[SubjectSeries], cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(MimError::Batch("pre-training needs at least 2 subjects".into()));
    }
    if cfg.pretrain_batch_size == 1 {
        log::warn!("batch size 1: InfoNCE is degenerate (loss 0, no gradient)");
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream(cfg.seed, "pretrain/holdout"));
    let n_hold = ((data.len() as f64) * cfg.pretrain_holdout).round() as usize;
    let n_hold = if n_hold >= 2 && data.len() - n_hold >= 2 { n_hold } else { 0 };
    let holdout: Vec<SubjectSeries> = order[..n_hold].iter().map(|&i| data[i].clone()).collect();
    let train: Vec<&SubjectSeries> = order[n_hold..].iter().map(|&i| &data[i]).collect();

    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut shuffle = stream(cfg.seed, "pretrain/batching");
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut curve = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut ep = train.clone();
        ep.shuffle(&mut shuffle);
        let mut chunks = batches(&ep, cfg.pretrain_batch_size);
        if cfg.pretrain_batch_size > 1 && chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            chunks.pop();
        }
        let (mut loss_sum, mut mi_sum) = (0.0, 0.0);
        for chunk in &chunks {
            let (loss, grads) = pretrain_batch_grads(model, chunk)?;
            if !loss.is_finite() {
                return Err(MimError::Divergence(format!("InfoNCE loss {loss} at epoch {epoch}")));
            }
            opt.step(&mut model.params, &grads, None)?;
            loss_sum += loss;
            mi_sum += mi_lower_bound(loss, chunk.len());
        }
        let k = chunks.len().max(1) as f64;
        let (val_loss, val_mi) = if holdout.is_empty() {
            (loss_sum / k, mi_sum / k)
        } else {
            eval_infonce(model, &holdout, cfg.pretrain_batch_size)?
        };
        log::info!(
            "pretrain epoch {epoch}: loss {:.4} mi {:.4} | held-out loss/N {val_loss:.4} mi {val_mi:.4}",
            loss_sum / k,
            mi_sum / k
        );
        curve.push(PretrainEpoch {
            epoch,
            train_loss: loss_sum / k,
            train_mi: mi_sum / k,
            val_loss,
            val_mi,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if best.1 > 0 {
        model.params = best.2;
    }
    Ok(PretrainOutcome {
        curve,
        best_epoch: best.1,
    })
}

/// Ranking scores (`logit₁ − logit₀`) and labels for a labeled set.
pub fn score_set(model: &MimModel, data: &[SubjectSeries]) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for s in data {
        scores.push(model.positive_score(s)?);
        labels.push(label_of(s)?);
    }
    Ok((scores, labels))
}

pub fn evaluate_auc(model: &MimModel, data: &[SubjectSeries]) -> Result<f64> {
    let (s, l) = score_set(model, data)?;
    auc(&s, &l)
}

fn require_both_classes(data: &[SubjectSeries], what: &str) -> Result<()> {
    let mut seen = [false; 2];
    for s in data {
        let l = label_of(s)?;
        if l > 1 {
            return Err(MimError::DegenerateSplit(format!("label {l} is not binary")));
        }
        seen[l as usize] = true;
    }
    if seen != [true, true] {
        return Err(MimError::DegenerateSplit(format!("{what} split holds a single class")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    /// Epoch whose parameters were kept; 0 means the initial model.
    pub best_epoch: usize,
    pub val_auc: f64,
    pub test_auc: f64,
    pub history: Vec<FinetuneEpoch>,
}

/// Supervised fine-tuning with early stopping on validation AUC.
///
/// The pre-training head is frozen. On return `model` holds the parameters
/// of the best validation epoch and `test_auc` is measured with them.
pub fn finetune(
    model: &mut MimModel,
    train: &[SubjectSeries],
    val: &[SubjectSeries],
    test: &[SubjectSeries],
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    require_both_classes(train, "training")?;
    require_both_classes(val, "validation")?;
    require_both_classes(test, "test")?;
    let mask = model.finetune_mask();
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut shuffle = stream(cfg.seed, "finetune/batching");
    let mut best: Option<(f64, usize, crate::params::ParamStore)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let refs: Vec<&SubjectSeries> = train.iter().collect();
    for epoch in 1..=cfg.max_epochs {
        let mut ep = refs.clone();
        ep.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let chunks = batches(&ep, cfg.finetune_batch_size);
        for chunk in &chunks {
            let (loss, grads) = classify_batch_grads(model, chunk)?;
            if !loss.is_finite() {
                return Err(MimError::Divergence(format!("cross-entropy {loss} at epoch {epoch}")));
            }
            opt.step(&mut model.params, &grads, Some(&mask))?;
            loss_sum += loss;
        }
        let val_auc = evaluate_auc(model, val)?;
        log::debug!("finetune epoch {epoch}: loss {:.4} val auc {val_auc:.4}", loss_sum / chunks.len() as f64);
        history.push(FinetuneEpoch {
            epoch,
            train_loss: loss_sum / chunks.len() as f64,
            val_auc,
        });
        if best.as_ref().is_none_or(|b| val_auc > b.0) {
            best = Some((val_auc, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (val_auc, best_epoch) = match best {
        Some((v, e, params)) => {
            model.params = params;
            (v, e)
        }
        None => (evaluate_auc(model, val)?, 0),
    };
    let test_auc = evaluate_auc(model, test)?;
    Ok(FinetuneOutcome {
        best_epoch,
        val_auc,
        test_auc,
        history,
    })
}
