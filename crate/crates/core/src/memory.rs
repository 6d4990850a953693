//! Recurrent node-state stream.
//!
//! Each node carries a state vector advanced by a shared GRU whenever its
//! buffered interactions are flushed. Raw interactions are buffered first
//! and applied lazily so a batch never reads states that already include its
//! own events: flush what happened before the batch, embed, then buffer the
//! batch.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::checkpoint::{section, CheckpointError, SectionReader, SectionWriter};
use crate::graph::NodeId;
use crate::tensor::nn::{gru_cell, GruParams};
use crate::tensor::params::ParameterSet;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("node {node}: buffered event at t={event_t} is newer than flush time {now}")]
    FutureEvent { node: NodeId, event_t: f64, now: f64 },
    #[error("negative elapsed time {0}")]
    NegativeElapsed(f64),
}

/// How multiple buffered interactions of one node collapse into a single
/// state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageAggregation {
    /// Keep only the newest interaction (the default).
    MostRecent,
    /// Average the per-interaction messages.
    Mean,
}

impl MessageAggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MostRecent => "most-recent",
            Self::Mean => "mean",
        }
    }
}

impl std::str::FromStr for MessageAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "most-recent" => Ok(Self::MostRecent),
            "mean" => Ok(Self::Mean),
            other => Err(format!(
                "unknown message aggregation `{other}` (expected most-recent or mean)"
            )),
        }
    }
}

/// Learnable time encoding `phi(dt) = cos(dt * omega + phase)`.
#[derive(Debug, Clone)]
pub struct TimeEncoder {
    prefix: String,
    pub d_time: usize,
}

impl TimeEncoder {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        d_time: usize,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Result<Self, TensorError> {
        params.define_uniform(&format!("{prefix}.omega"), 1, d_time, rng)?;
        params.define_uniform(&format!("{prefix}.phase"), 1, d_time, rng)?;
        Ok(Self {
            prefix: prefix.to_string(),
            d_time,
        })
    }

    /// Encodes a non-negative elapsed time as a `[1, d_time]` feature row.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        dt: f64,
    ) -> Result<Var, MemoryError> {
        if dt < 0.0 {
            return Err(MemoryError::NegativeElapsed(dt));
        }
        let omega = tape.param(params, &format!("{}.omega", self.prefix))?;
        let phase = tape.param(params, &format!("{}.phase", self.prefix))?;
        let scaled = tape.scale(omega, dt);
        let shifted = tape.add(scaled, phase)?;
        Ok(tape.cos(shifted))
    }
}

/// Per-node state vectors plus the timestamp of each node's last update.
/// Storage is exactly `num_nodes * d` floats plus one timestamp per node.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    d: usize,
    states: Vec<Tensor>,
    last_update: Vec<f64>,
}

impl MemoryStore {
    pub fn new(num_nodes: usize, d: usize) -> Self {
        Self {
            d,
            states: vec![Tensor::zeros(vec![1, d]); num_nodes],
            last_update: vec![0.0; num_nodes],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    /// Grows to cover `node`, zero-initializing the new entries.
    pub fn ensure_node(&mut self, node: NodeId) {
        if node.idx() >= self.states.len() {
            self.states
                .resize(node.idx() + 1, Tensor::zeros(vec![1, self.d]));
            self.last_update.resize(node.idx() + 1, 0.0);
        }
    }

    pub fn state(&self, node: NodeId) -> &Tensor {
        &self.states[node.idx()]
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node.idx()]
    }

    pub fn set_state(&mut self, node: NodeId, value: Tensor, t: f64) {
        self.states[node.idx()] = value;
        self.last_update[node.idx()] = t;
    }

    pub fn reset(&mut self) {
        for s in &mut self.states {
            s.values_mut().fill(0.0);
        }
        self.last_update.fill(0.0);
    }

    /// Serializes states, timestamps, and d into a tagged snapshot payload.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = SectionWriter::new(1);
        w.u64(self.states.len() as u64);
        w.u32(self.d as u32);
        for s in &self.states {
            w.f64_slice(s.values());
        }
        for t in &self.last_update {
            w.f64(*t);
        }
        w.out
    }

    pub fn restore(&mut self, payload: &[u8]) -> Result<(), MemoryError> {
        let mut r = SectionReader::new(payload, section::MEMORY, 1)?;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let vals = r.f64_vec()?;
            states.push(Tensor::new(vec![1, d], vals).map_err(|e| {
                CheckpointError::Malformed {
                    tag: section::MEMORY.into(),
                    msg: e.to_string(),
                }
            })?);
        }
        let mut last_update = Vec::with_capacity(n);
        for _ in 0..n {
            last_update.push(r.f64()?);
        }
        self.d = d;
        self.states = states;
        self.last_update = last_update;
        Ok(())
    }
}

/// A buffered interaction awaiting a state update.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMessage {
    pub counterpart: NodeId,
    pub t: f64,
    pub features: Vec<f64>,
}

/// Per-node queues of unprocessed interactions, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct RawMessageBuffer {
    per_node: Vec<Vec<RawMessage>>,
}

impl RawMessageBuffer {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            per_node: vec![Vec::new(); num_nodes],
        }
    }

    pub fn ensure_node(&mut self, node: NodeId) {
        if node.idx() >= self.per_node.len() {
            self.per_node.resize(node.idx() + 1, Vec::new());
        }
    }

    pub fn push(&mut self, node: NodeId, msg: RawMessage) {
        self.ensure_node(node);
        self.per_node[node.idx()].push(msg);
    }

    pub fn pending(&self, node: NodeId) -> &[RawMessage] {
        self.per_node
            .get(node.idx())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Nodes that currently have at least one buffered interaction.
    pub fn nodes_with_pending(&self) -> BTreeSet<NodeId> {
        self.per_node
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    fn drain(&mut self, node: NodeId) -> Vec<RawMessage> {
        self.per_node
            .get_mut(node.idx())
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn clear(&mut self) {
        for v in &mut self.per_node {
            v.clear();
        }
    }

}

/// Builds the update input `[s_i | s_j | phi(dt) | features]` for one
/// interaction.
pub fn compute_message(
    tape: &mut Tape,
    params: &ParameterSet,
    te: &TimeEncoder,
    s_own: Var,
    s_counterpart: Var,
    dt: f64,
    features: &[f64],
) -> Result<Var, MemoryError> {
    if dt < 0.0 {
        return Err(MemoryError::NegativeElapsed(dt));
    }
    let phi = te.encode(tape, params, dt)?;
    let mut parts = vec![s_own, s_counterpart, phi];
    if !features.is_empty() {
        parts.push(tape.constant_row(features));
    }
    Ok(tape.concat_last(&parts)?)
}

/// Flushes buffered interactions for `nodes` and advances their states by
/// one GRU step each. Messages are built from pre-flush states for every
/// node in the set (all reads happen before any write), then updates apply
/// in ascending node order. Returns the on-tape state vars so callers can
/// keep gradients flowing through this flush.
#[allow(clippy::too_many_arguments)]
pub fn flush_and_update(
    tape: &mut Tape,
    params: &ParameterSet,
    memory: &mut MemoryStore,
    buffer: &mut RawMessageBuffer,
    nodes: &BTreeSet<NodeId>,
    now: f64,
    gru: &GruParams,
    te: &TimeEncoder,
    agg: MessageAggregation,
) -> Result<BTreeMap<NodeId, Var>, MemoryError> {
    // Phase one: read states and assemble update inputs.
    let mut staged: Vec<(NodeId, Var, f64)> = Vec::new();
    for &node in nodes {
        memory.ensure_node(node);
        let msgs = buffer.drain(node);
        if msgs.is_empty() {
            continue;
        }
        for m in &msgs {
            if m.t > now {
                return Err(MemoryError::FutureEvent {
                    node,
                    event_t: m.t,
                    now,
                });
            }
            memory.ensure_node(m.counterpart);
        }
        let s_own = tape.constant(memory.state(node).clone());
        let last = memory.last_update(node);
        let build = |tape: &mut Tape, m: &RawMessage| -> Result<Var, MemoryError> {
            let s_other = tape.constant(memory.state(m.counterpart).clone());
            let dt = (m.t - last).max(0.0);
            compute_message(tape, params, te, s_own, s_other, dt, &m.features)
        };
        let (input, t_new) = match agg {
            MessageAggregation::MostRecent => {
                let newest = msgs
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| a.t.total_cmp(&b.t).then(ia.cmp(ib)))
                    .map(|(_, m)| m)
                    .expect("non-empty");
                (build(tape, newest)?, newest.t)
            }
            MessageAggregation::Mean => {
                let vars: Vec<Var> = msgs
                    .iter()
                    .map(|m| build(tape, m))
                    .collect::<Result<_, _>>()?;
                let total = tape.add_all(&vars)?;
                let mean = tape.scale(total, 1.0 / vars.len() as f64);
                let t_new = msgs.iter().map(|m| m.t).fold(f64::NEG_INFINITY, f64::max);
                (mean, t_new)
            }
        };
        staged.push((node, input, t_new));
    }

    // Phase two: apply the GRU steps.
    let mut out = BTreeMap::new();
    for (node, input, t_new) in staged {
        let h_prev = tape.constant(memory.state(node).clone());
        let h_new = gru_cell(tape, params, gru, input, h_prev)?;
        memory.set_state(node, tape.value(h_new).clone(), t_new);
        out.insert(node, h_new);
    }
    Ok(out)
}
