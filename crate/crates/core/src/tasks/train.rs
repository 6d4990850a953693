//! Self-supervised link-prediction training.
//!
//! Each epoch replays the training span from a cold state in chronological
//! batches. A batch is scored against negatives sampled from the destination
//! pool, the binary cross entropy over all scores is backpropagated, Adam
//! updates every parameter, and only then is the batch buffered so its
//! messages land at the next flush. Gradients therefore never cross a batch
//! boundary.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::graph::sampling::{destination_pool, sample_negatives};
use crate::graph::{LogView, NodeId};
use crate::model::Model;
use crate::tensor::tape::{Tape, Var};

use super::eval::{evaluate_link_prediction, EvalOptions, EvalSetting};
use super::TaskError;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Negative destinations scored against each positive during training
    /// (evaluation always uses one).
    pub n_neg: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation AP improvement.
    pub patience: usize,
    /// Seed for negative sampling (training draws vary by epoch on top of
    /// it; evaluation draws use it verbatim).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 200,
            n_neg: 5,
            epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ap: f64,
    pub val_auc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ap: f64,
}

/// Binary cross entropy from a logit, `softplus(x) - y * x`, which never
/// overflows and never takes `ln` of a rounded-to-zero sigmoid.
pub fn bce_from_logit(tape: &mut Tape, logit: Var, label: f64) -> Result<Var, TaskError> {
    let sp = tape.softplus(logit);
    let neg = tape.scale(logit, -label);
    Ok(tape.add(sp, neg)?)
}

/// Trains on `train`, scoring `val` after every epoch (transductive with
/// respect to `unseen`, which is empty outside inductive experiments). The
/// model is left at the end-of-epoch state of the best validation epoch.
pub fn train_link_prediction(
    model: &mut Model,
    train: LogView<'_>,
    val: LogView<'_>,
    unseen: &BTreeSet<NodeId>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TaskError> {
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.n_neg == 0 {
        return Err(TaskError::Invalid(
            "batch_size, epochs, and n_neg must be positive".into(),
        ));
    }
    if train.is_empty() {
        return Err(TaskError::Invalid("training log is empty".into()));
    }
    let pool = destination_pool(train);
    let val_opts = EvalOptions {
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        pool: &pool,
        setting: EvalSetting::Transductive,
        unseen,
        warmup: None,
    };
    let mut outcome = TrainOutcome {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_ap: f64::NEG_INFINITY,
    };
    let mut best_state = None;
    for epoch in 0..cfg.epochs {
        let train_loss = run_epoch(model, train, &pool, cfg, epoch)?;
        let val_metrics = evaluate_link_prediction(model, val, &val_opts)?;
        outcome.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_ap: val_metrics.ap,
            val_auc: val_metrics.auc,
        });
        if val_metrics.ap > outcome.best_val_ap {
            outcome.best_val_ap = val_metrics.ap;
            outcome.best_epoch = epoch;
            best_state = Some(model.snapshot_state());
        } else if epoch - outcome.best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some(best) = best_state {
        model.restore_state(&best);
    }
    Ok(outcome)
}

/// One full pass over the training span; returns the mean per-score loss.
fn run_epoch(
    model: &mut Model,
    train: LogView<'_>,
    pool: &[NodeId],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64, TaskError> {
    model.reset_state();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
    let mut loss_sum = 0.0;
    let mut n_scores = 0usize;
    for batch in train.events.chunks(cfg.batch_size) {
        let negs = sample_negatives(batch, cfg.n_neg, pool, &mut rng)?;
        let mut seeds: Vec<(NodeId, f64)> = Vec::new();
        for (ev, neg_row) in batch.iter().zip(&negs) {
            seeds.push((ev.src, ev.t));
            seeds.push((ev.dst, ev.t));
            for &n in neg_row {
                seeds.push((n, ev.t));
            }
        }
        let closure = model.embedding_closure(&seeds);
        model.prepare_nodes(&closure, batch[0].t)?;

        let mut tape = Tape::new();
        let vars = model.flush(&mut tape)?;
        let mut cache = crate::embedding::EmbedCache::new();
        let mut losses = Vec::with_capacity((1 + cfg.n_neg) * batch.len());
        for (ev, neg_row) in batch.iter().zip(&negs) {
            let src = model.embed(&mut tape, &vars, &mut cache, ev.src, ev.t)?;
            let dst = model.embed(&mut tape, &vars, &mut cache, ev.dst, ev.t)?;
            let pos_logit = model.link_logit(&mut tape, src, dst)?;
            losses.push(bce_from_logit(&mut tape, pos_logit, 1.0)?);
            for &n in neg_row {
                let ngh = model.embed(&mut tape, &vars, &mut cache, n, ev.t)?;
                let neg_logit = model.link_logit(&mut tape, src, ngh)?;
                losses.push(bce_from_logit(&mut tape, neg_logit, 0.0)?);
            }
        }
        let total = tape.add_all(&losses)?;
        let batch_loss = tape.scale(total, 1.0 / losses.len() as f64);
        tape.backward(batch_loss, &mut model.params)?;
        model.params.adam_step(cfg.lr);

        loss_sum += tape.value(batch_loss).values()[0] * losses.len() as f64;
        n_scores += losses.len();
        for ev in batch {
            model.buffer_event(ev);
        }
    }
    Ok(loss_sum / n_scores as f64)
}
