//! Streaming link-prediction evaluation.
//!
//! Evaluation replays a span of the log in chronological batches. Per batch
//! the model first flushes everything buffered so far, then scores each held
//! event against one sampled negative destination, then buffers the batch so
//! its effect lands at the next flush. Model state is snapshotted on entry
//! and restored on exit, so evaluating never disturbs training.
//!
//! The transductive setting scores only events between nodes seen in
//! training; the inductive setting scores only events touching a held-out
//! node. The two settings partition the evaluation events exactly, and
//! either way every event (scored or not) updates the streamed state.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::graph::sampling::sample_negatives;
use crate::graph::{EdgeEvent, LogView, NodeId};
use crate::model::Model;
use crate::tensor::tape::Tape;

use super::metrics::{link_metrics, LinkMetrics};
use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    Transductive,
    Inductive,
}

impl EvalSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSetting::Transductive => "transductive",
            EvalSetting::Inductive => "inductive",
        }
    }
}

impl std::str::FromStr for EvalSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transductive" => Ok(EvalSetting::Transductive),
            "inductive" => Ok(EvalSetting::Inductive),
            other => Err(format!("unknown evaluation setting `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub batch_size: usize,
    /// Seed for the negative-destination draws; fixed seed, fixed metrics.
    pub seed: u64,
    /// Candidate negative destinations, pre-sorted by the caller.
    pub pool: &'a [NodeId],
    pub setting: EvalSetting,
    /// Nodes withheld from training. Transductive scoring skips events that
    /// touch one; inductive scoring keeps exactly those events.
    pub unseen: &'a BTreeSet<NodeId>,
    /// Events streamed through the model before scoring starts, e.g. the
    /// validation span when scoring test.
    pub warmup: Option<LogView<'a>>,
}

/// Scores `view` without leaving a trace in the model. Returns AP and AUC
/// over `2 * n_scored` scores (each positive paired with one negative).
pub fn evaluate_link_prediction(
    model: &mut Model,
    view: LogView<'_>,
    opts: &EvalOptions<'_>,
) -> Result<LinkMetrics, TaskError> {
    if opts.batch_size == 0 {
        return Err(TaskError::Invalid("batch_size must be positive".into()));
    }
    if opts.setting == EvalSetting::Inductive && opts.unseen.is_empty() {
        return Err(TaskError::Invalid(
            "inductive evaluation needs a non-empty unseen-node set".into(),
        ));
    }
    let snap = model.snapshot_state();
    let result = run_eval(model, view, opts);
    model.restore_state(&snap);
    result
}

fn run_eval(
    model: &mut Model,
    view: LogView<'_>,
    opts: &EvalOptions<'_>,
) -> Result<LinkMetrics, TaskError> {
    if let Some(warmup) = opts.warmup {
        for batch in warmup.events.chunks(opts.batch_size) {
            let mut tape = Tape::new();
            model.flush(&mut tape)?;
            for ev in batch {
                model.buffer_event(ev);
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for batch in view.events.chunks(opts.batch_size) {
        let scored: Vec<&EdgeEvent> = batch
            .iter()
            .filter(|ev| {
                let touches_unseen =
                    opts.unseen.contains(&ev.src) || opts.unseen.contains(&ev.dst);
                match opts.setting {
                    EvalSetting::Transductive => !touches_unseen,
                    EvalSetting::Inductive => touches_unseen,
                }
            })
            .collect();
        let scored_events: Vec<EdgeEvent> = scored.iter().map(|&e| e.clone()).collect();
        let negs = sample_negatives(&scored_events, 1, opts.pool, &mut rng)?;

        // Register every node the attention recursion can reach before any
        // tape reads the id table, so the table only grows between batches.
        let mut seeds: Vec<(NodeId, f64)> = Vec::new();
        for (ev, neg) in scored.iter().zip(&negs) {
            seeds.push((ev.src, ev.t));
            seeds.push((ev.dst, ev.t));
            seeds.push((neg[0], ev.t));
        }
        if let Some(first) = batch.first() {
            let closure = model.embedding_closure(&seeds);
            model.prepare_nodes(&closure, first.t)?;
        }

        let mut tape = Tape::new();
        let vars = model.flush(&mut tape)?;
        let mut cache = crate::embedding::EmbedCache::new();
        for (ev, neg) in scored.iter().zip(&negs) {
            let src = model.embed(&mut tape, &vars, &mut cache, ev.src, ev.t)?;
            let dst = model.embed(&mut tape, &vars, &mut cache, ev.dst, ev.t)?;
            let ngh = model.embed(&mut tape, &vars, &mut cache, neg[0], ev.t)?;
            let pos_logit = model.link_logit(&mut tape, src, dst)?;
            let neg_logit = model.link_logit(&mut tape, src, ngh)?;
            scores.push(tape.value(pos_logit).values()[0]);
            labels.push(true);
            scores.push(tape.value(neg_logit).values()[0]);
            labels.push(false);
        }
        for ev in batch {
            model.buffer_event(ev);
        }
    }
    Ok(link_metrics(&scores, &labels)?)
}
