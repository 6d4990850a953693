//! Event-time node classification on top of the streaming embeddings.
//!
//! The default protocol is a linear-probe style fit: the trunk that produced
//! the embeddings stays frozen and only the classifier head moves. With
//! `joint` set, the whole parameter set trains end to end instead.

use crate::graph::{LogView, NodeId};
use crate::model::Model;
use crate::tensor::tape::Tape;

use super::metrics::roc_auc;
use super::train::bce_from_logit;
use super::TaskError;

#[derive(Debug, Clone)]
pub struct NodeClassConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Train every parameter instead of only the classifier head.
    pub joint: bool,
}

impl Default for NodeClassConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 3,
            joint: false,
        }
    }
}

#[derive(Debug)]
pub struct NodeClassOutcome {
    /// Mean per-example training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// ROC AUC over the labeled events of the evaluation span.
    pub auc: f64,
    pub n_scored: usize,
}

const HEAD_PREFIX: &str = "node_head";

/// Fits the source-node label predictor on `train`, then scores the labeled
/// events of `eval` in one chronological pass that continues from the end of
/// the training span. The model is left in that post-evaluation state.
pub fn train_node_classifier(
    model: &mut Model,
    train: LogView<'_>,
    eval: LogView<'_>,
    cfg: &NodeClassConfig,
) -> Result<NodeClassOutcome, TaskError> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(TaskError::Invalid(
            "batch_size and epochs must be positive".into(),
        ));
    }
    if !train.events.iter().any(|e| e.label.is_some()) {
        return Err(TaskError::Invalid(
            "training span has no labeled events".into(),
        ));
    }
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        model.reset_state();
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for batch in train.events.chunks(cfg.batch_size) {
            let labeled: Vec<_> = batch.iter().filter(|e| e.label.is_some()).collect();
            let seeds: Vec<(NodeId, f64)> = labeled.iter().map(|e| (e.src, e.t)).collect();
            let closure = model.embedding_closure(&seeds);
            model.prepare_nodes(&closure, batch[0].t)?;

            let mut tape = Tape::new();
            let vars = model.flush(&mut tape)?;
            let mut cache = crate::embedding::EmbedCache::new();
            let mut losses = Vec::with_capacity(labeled.len());
            for ev in &labeled {
                let emb = model.embed(&mut tape, &vars, &mut cache, ev.src, ev.t)?;
                let logit = model.node_logit(&mut tape, emb)?;
                let y = if ev.label.unwrap() { 1.0 } else { 0.0 };
                losses.push(bce_from_logit(&mut tape, logit, y)?);
            }
            if !losses.is_empty() {
                let total = tape.add_all(&losses)?;
                let batch_loss = tape.scale(total, 1.0 / losses.len() as f64);
                tape.backward(batch_loss, &mut model.params)?;
                if cfg.joint {
                    model.params.adam_step(cfg.lr);
                } else {
                    model
                        .params
                        .adam_step_filtered(cfg.lr, |name| name.starts_with(HEAD_PREFIX));
                }
                loss_sum += tape.value(batch_loss).values()[0] * losses.len() as f64;
                n += losses.len();
            }
            for ev in batch {
                model.buffer_event(ev);
            }
        }
        epoch_losses.push(loss_sum / n as f64);
    }

    let mut scores = Vec::new();
    let mut truths = Vec::new();
    for batch in eval.events.chunks(cfg.batch_size) {
        let labeled: Vec<_> = batch.iter().filter(|e| e.label.is_some()).collect();
        let seeds: Vec<(NodeId, f64)> = labeled.iter().map(|e| (e.src, e.t)).collect();
        let closure = model.embedding_closure(&seeds);
        model.prepare_nodes(&closure, batch[0].t)?;
        let mut tape = Tape::new();
        let vars = model.flush(&mut tape)?;
        let mut cache = crate::embedding::EmbedCache::new();
        for ev in &labeled {
            let emb = model.embed(&mut tape, &vars, &mut cache, ev.src, ev.t)?;
            let logit = model.node_logit(&mut tape, emb)?;
            scores.push(tape.value(logit).values()[0]);
            truths.push(ev.label.unwrap());
        }
        for ev in batch {
            model.buffer_event(ev);
        }
    }
    let auc = roc_auc(&scores, &truths)?;
    Ok(NodeClassOutcome {
        epoch_losses,
        auc,
        n_scored: scores.len(),
    })
}
