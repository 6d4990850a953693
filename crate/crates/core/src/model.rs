//! The assembled model: a recurrent memory stream and a decaying trajectory
//! stream over the same event log, fused into attention embeddings with link
//! and node prediction heads.
//!
//! Callers drive it batch by batch: [`Model::buffer_event`] queues raw
//! interactions, [`Model::flush`] turns everything queued into state updates
//! on a tape (returning the live vars so the current batch stays
//! differentiable), and [`Model::embed`] builds embeddings on top. Earlier
//! batches contribute through stored state values only, so gradients
//! truncate at batch boundaries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::checkpoint::{
    params_from_bytes, params_to_bytes, section, CheckpointError, Container,
};
use crate::embedding::{
    embed_node, EmbedCache, EmbeddingConfig, EmbeddingError, EmbeddingInputs, EmbeddingParams,
    FeatureLookup, TrajectoryMode,
};
use crate::graph::neighborhood::TemporalNeighborhoodStore;
use crate::graph::{EdgeEvent, LogView, NodeId};
use crate::memory::{
    flush_and_update, MemoryError, MemoryStore, MessageAggregation, RawMessage, RawMessageBuffer,
    TimeEncoder,
};
use crate::tensor::nn::{mlp_forward, Activation, GruParams, MlpParams};
use crate::tensor::params::ParameterSet;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::TensorError;
use crate::trajectory::{
    aggregate_trajectory, decay_message, make_trajectory_message, update_tp, IdTable, TeParams,
    TrajectoryError, TrajectoryStore,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("bad manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub d_mem: usize,
    pub d_time: usize,
    pub d_traj: usize,
    pub d_emb: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_neighbors: usize,
    pub te: TeParams,
    pub msg_agg: MessageAggregation,
    pub mode: TrajectoryMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_dim: 0,
            d_mem: 100,
            d_time: 100,
            d_traj: 100,
            d_emb: 100,
            heads: 2,
            layers: 1,
            n_neighbors: 10,
            te: TeParams { alpha: 2.0, beta: 0.1 },
            msg_agg: MessageAggregation::MostRecent,
            mode: TrajectoryMode::Full,
            seed: 0,
        }
    }
}

/// Neighbor adjacency and edge features the embedding layers read. Swappable
/// so training can run against a restricted event log while evaluation sees
/// everything.
#[derive(Debug, Clone, Default)]
pub struct GraphContext {
    pub neighbors: TemporalNeighborhoodStore,
    pub features: FeatureLookup,
}

impl GraphContext {
    pub fn build(view: LogView<'_>) -> Self {
        Self {
            features: FeatureLookup::build(view.events),
            neighbors: TemporalNeighborhoodStore::build(view),
        }
    }
}

/// An interaction queued for the trajectory stream.
#[derive(Debug, Clone, Copy)]
struct PendingInteraction {
    src: NodeId,
    dst: NodeId,
    t: f64,
}

/// Live tape vars produced by one flush; embeddings built on the same tape
/// route gradients through them.
#[derive(Debug, Default)]
pub struct BatchVars {
    pub memory: BTreeMap<NodeId, Var>,
    pub trajectory: BTreeMap<NodeId, Var>,
}

/// Full mutable state for exact rollback (evaluation probes, best-epoch
/// restores). Held in memory only; the on-disk format is [`Model::save`].
#[derive(Clone)]
pub struct StateSnapshot {
    params: ParameterSet,
    memory: MemoryStore,
    trajectory: TrajectoryStore,
    id_table: IdTable,
    buffer: RawMessageBuffer,
    pending: Vec<PendingInteraction>,
    clock: f64,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParameterSet,
    gru: GruParams,
    time: TimeEncoder,
    emb: EmbeddingParams,
    link_head: MlpParams,
    node_head: MlpParams,
    pub id_table: IdTable,
    pub memory: MemoryStore,
    pub trajectory: TrajectoryStore,
    buffer: RawMessageBuffer,
    pending: Vec<PendingInteraction>,
    context: GraphContext,
    clock: f64,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        let mut params = ParameterSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let time = TimeEncoder::init(&mut params, "time", cfg.d_time, &mut rng)?;
        let gru = GruParams::init(
            &mut params,
            "memory_gru",
            2 * cfg.d_mem + cfg.d_time + cfg.feat_dim,
            cfg.d_mem,
            &mut rng,
        )?;
        let id_table = IdTable::init(
            &mut params,
            "id_table",
            &[cfg.d_traj, 2 * cfg.d_traj, cfg.d_traj],
            cfg.seed.wrapping_add(1),
            &mut rng,
        )?;
        let emb = EmbeddingParams::init(
            &mut params,
            "emb",
            cfg.d_mem,
            cfg.d_traj,
            cfg.feat_dim,
            &time,
            EmbeddingConfig {
                layers: cfg.layers,
                heads: cfg.heads,
                n_neighbors: cfg.n_neighbors,
                d_emb: cfg.d_emb,
            },
            &mut rng,
        )?;
        let link_head = MlpParams::init(
            &mut params,
            "link_head",
            &[2 * cfg.d_emb, cfg.d_emb, 1],
            Activation::Relu,
            &mut rng,
        )?;
        let node_head = MlpParams::init(
            &mut params,
            "node_head",
            &[cfg.d_emb, cfg.d_emb, 1],
            Activation::Relu,
            &mut rng,
        )?;
        Ok(Self {
            cfg,
            params,
            gru,
            time,
            emb,
            link_head,
            node_head,
            id_table,
            memory: MemoryStore::new(0, cfg.d_mem),
            trajectory: TrajectoryStore::new(0, cfg.d_traj),
            buffer: RawMessageBuffer::new(0),
            pending: Vec::new(),
            context: GraphContext::default(),
            clock: 0.0,
        })
    }

    pub fn set_context(&mut self, ctx: GraphContext) {
        self.context = ctx;
    }

    pub fn context(&self) -> &GraphContext {
        &self.context
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn time_encoder(&self) -> &TimeEncoder {
        &self.time
    }

    /// Queues one interaction for both state streams; no math happens until
    /// the next [`Model::flush`].
    pub fn buffer_event(&mut self, ev: &EdgeEvent) {
        for node in [ev.src, ev.dst] {
            self.memory.ensure_node(node);
            self.trajectory.ensure_node(node);
            self.buffer.ensure_node(node);
        }
        self.buffer.push(
            ev.src,
            RawMessage {
                counterpart: ev.dst,
                t: ev.t,
                features: ev.features.clone(),
            },
        );
        self.buffer.push(
            ev.dst,
            RawMessage {
                counterpart: ev.src,
                t: ev.t,
                features: ev.features.clone(),
            },
        );
        if self.cfg.mode != TrajectoryMode::Disabled {
            self.pending.push(PendingInteraction {
                src: ev.src,
                dst: ev.dst,
                t: ev.t,
            });
        }
        self.clock = self.clock.max(ev.t);
    }

    /// Applies every queued interaction to both streams, on `tape`.
    pub fn flush(&mut self, tape: &mut Tape) -> Result<BatchVars, ModelError> {
        let nodes = self.buffer.nodes_with_pending();
        let memory = flush_and_update(
            tape,
            &self.params,
            &mut self.memory,
            &mut self.buffer,
            &nodes,
            self.clock,
            &self.gru,
            &self.time,
            self.cfg.msg_agg,
        )?;
        let trajectory = self.flush_trajectory(tape)?;
        Ok(BatchVars { memory, trajectory })
    }

    /// Processes queued interactions through the trajectory stream in event
    /// order. Both endpoints of an interaction read pre-update state, so the
    /// update is symmetric; the map keeps each node's latest aggregate.
    ///
    /// All table registrations happen before any math: a parameter recorded
    /// on the tape must keep its shape until backward, so the table may not
    /// grow once the first row has been read.
    fn flush_trajectory(&mut self, tape: &mut Tape) -> Result<BTreeMap<NodeId, Var>, ModelError> {
        let pending = std::mem::take(&mut self.pending);
        let mut out = BTreeMap::new();
        match self.cfg.mode {
            TrajectoryMode::Disabled => return Ok(out),
            TrajectoryMode::RawId => {
                for ev in &pending {
                    self.id_table.ensure_node(&mut self.params, ev.src, ev.t)?;
                    self.id_table.ensure_node(&mut self.params, ev.dst, ev.t)?;
                }
                return Ok(out);
            }
            TrajectoryMode::Full => {}
        }
        let staged: Vec<(PendingInteraction, Vec<NodeId>, Vec<NodeId>)> = pending
            .into_iter()
            .map(|ev| {
                let src_senders = self.pick_senders(ev.src, ev.dst, ev.t);
                let dst_senders = self.pick_senders(ev.dst, ev.src, ev.t);
                (ev, src_senders, dst_senders)
            })
            .collect();
        for (ev, src_senders, dst_senders) in &staged {
            for node in [ev.src, ev.dst]
                .iter()
                .chain(src_senders)
                .chain(dst_senders)
            {
                self.id_table.ensure_node(&mut self.params, *node, ev.t)?;
                self.trajectory.ensure_node(*node);
            }
        }
        // Nodes touched earlier in this batch keep their live tape value so
        // gradients flow through the whole batch; the stored copy only takes
        // over at the next batch boundary.
        let mut live_tp: BTreeMap<NodeId, Var> = BTreeMap::new();
        for (ev, src_senders, dst_senders) in staged {
            let v_src = self.aggregate_endpoint(tape, &live_tp, ev.src, &src_senders, ev.t)?;
            let v_dst = self.aggregate_endpoint(tape, &live_tp, ev.dst, &dst_senders, ev.t)?;
            let tp_src = update_tp(
                tape,
                &self.params,
                &self.id_table,
                &mut self.trajectory,
                ev.src,
                ev.t,
                v_src,
            )?;
            let tp_dst = update_tp(
                tape,
                &self.params,
                &self.id_table,
                &mut self.trajectory,
                ev.dst,
                ev.t,
                v_dst,
            )?;
            live_tp.insert(ev.src, tp_src);
            live_tp.insert(ev.dst, tp_dst);
            out.insert(ev.src, v_src);
            out.insert(ev.dst, v_dst);
        }
        Ok(out)
    }

    /// The interaction partner always contributes; distinct past neighbors
    /// fill the remaining `n_neighbors - 1` slots, most recent first.
    fn pick_senders(&self, node: NodeId, partner: NodeId, t: f64) -> Vec<NodeId> {
        let mut senders = vec![partner];
        let mut seen: BTreeSet<NodeId> = [node, partner].into_iter().collect();
        let extra = self.cfg.n_neighbors.saturating_sub(1);
        for e in self
            .context
            .neighbors
            .neighbors_before(node, t, self.cfg.n_neighbors)
        {
            if senders.len() > extra {
                break;
            }
            if seen.insert(e.neighbor) {
                senders.push(e.neighbor);
            }
        }
        senders
    }

    /// `v' = decayed own feature + sum of the senders' decayed features`,
    /// all read from pre-update state.
    fn aggregate_endpoint(
        &self,
        tape: &mut Tape,
        live_tp: &BTreeMap<NodeId, Var>,
        node: NodeId,
        senders: &[NodeId],
        t: f64,
    ) -> Result<Var, ModelError> {
        let own = self.sender_message(tape, live_tp, node, t)?;
        let mut msgs = Vec::with_capacity(senders.len());
        for &s in senders {
            msgs.push(self.sender_message(tape, live_tp, s, t)?);
        }
        Ok(aggregate_trajectory(tape, own, &msgs)?)
    }

    fn sender_message(
        &self,
        tape: &mut Tape,
        live_tp: &BTreeMap<NodeId, Var>,
        sender: NodeId,
        t: f64,
    ) -> Result<Var, ModelError> {
        let msg = match live_tp.get(&sender) {
            Some(&tp) => decay_message(
                tape,
                tp,
                sender,
                self.trajectory.last_update(sender),
                t,
                &self.cfg.te,
            )?,
            None => make_trajectory_message(
                tape,
                &self.params,
                &self.id_table,
                &self.trajectory,
                sender,
                t,
                &self.cfg.te,
            )?,
        };
        Ok(msg)
    }

    /// Registers nodes that are about to be embedded (negative samples,
    /// first-seen evaluation nodes). Table growth is recorded in the
    /// extension log.
    ///
    /// Call this before [`Model::flush`] when the tape will be
    /// backpropagated: the table parameter must not change shape between a
    /// tape read and backward.
    pub fn prepare_nodes(&mut self, nodes: &[NodeId], t: f64) -> Result<(), ModelError> {
        for &n in nodes {
            self.memory.ensure_node(n);
            self.trajectory.ensure_node(n);
            self.buffer.ensure_node(n);
            if self.cfg.mode != TrajectoryMode::Disabled {
                self.id_table.ensure_node(&mut self.params, n, t)?;
            }
        }
        Ok(())
    }

    /// Every node the embedding recursion can touch when embedding `seeds`:
    /// the seeds themselves plus neighbors reachable within the configured
    /// attention depth. Sorted, so registration order is deterministic.
    pub fn embedding_closure(&self, seeds: &[(NodeId, f64)]) -> Vec<NodeId> {
        let mut nodes = BTreeSet::new();
        let mut visited = BTreeSet::new();
        let mut stack: Vec<(NodeId, f64, usize)> = seeds
            .iter()
            .map(|&(n, t)| (n, t, self.cfg.layers))
            .collect();
        while let Some((node, t, depth)) = stack.pop() {
            if !visited.insert((node, t.to_bits(), depth)) {
                continue;
            }
            nodes.insert(node);
            if depth == 0 {
                continue;
            }
            for e in self
                .context
                .neighbors
                .neighbors_before(node, t, self.cfg.n_neighbors)
            {
                stack.push((e.neighbor, e.t, depth - 1));
            }
        }
        nodes.into_iter().collect()
    }

    pub fn embed(
        &self,
        tape: &mut Tape,
        vars: &BatchVars,
        cache: &mut EmbedCache,
        node: NodeId,
        t: f64,
    ) -> Result<Var, ModelError> {
        let inputs = EmbeddingInputs {
            memory: &self.memory,
            memory_vars: &vars.memory,
            trajectory: &self.trajectory,
            trajectory_vars: &vars.trajectory,
            id_table: &self.id_table,
            neighbors: &self.context.neighbors,
            features: &self.context.features,
            mode: self.cfg.mode,
        };
        Ok(embed_node(
            tape,
            &self.params,
            &self.emb,
            &inputs,
            cache,
            node,
            t,
        )?)
    }

    /// Link score logit from two embeddings.
    pub fn link_logit(&self, tape: &mut Tape, src: Var, dst: Var) -> Result<Var, ModelError> {
        let joined = tape.concat_last(&[src, dst])?;
        Ok(mlp_forward(tape, &self.params, &self.link_head, joined)?)
    }

    /// Node label logit from one embedding.
    pub fn node_logit(&self, tape: &mut Tape, emb: Var) -> Result<Var, ModelError> {
        Ok(mlp_forward(tape, &self.params, &self.node_head, emb)?)
    }

    pub fn snapshot_state(&self) -> StateSnapshot {
        StateSnapshot {
            params: self.params.clone(),
            memory: self.memory.clone(),
            trajectory: self.trajectory.clone(),
            id_table: self.id_table.clone(),
            buffer: self.buffer.clone(),
            pending: self.pending.clone(),
            clock: self.clock,
        }
    }

    pub fn restore_state(&mut self, snap: &StateSnapshot) {
        self.params = snap.params.clone();
        self.memory = snap.memory.clone();
        self.trajectory = snap.trajectory.clone();
        self.id_table = snap.id_table.clone();
        self.buffer = snap.buffer.clone();
        self.pending = snap.pending.clone();
        self.clock = snap.clock;
    }

    /// Zeroes both state streams (parameters stay). Used when replaying a
    /// log from the beginning.
    pub fn reset_state(&mut self) {
        self.memory.reset();
        self.trajectory.reset();
        self.buffer.clear();
        self.pending.clear();
        self.clock = 0.0;
    }

    fn manifest_text(&self) -> String {
        let c = &self.cfg;
        format!(
            "format=1\nfeat_dim={}\nd_mem={}\nd_time={}\nd_traj={}\nd_emb={}\nheads={}\n\
             layers={}\nn_neighbors={}\nalpha={}\nbeta={}\nmsg_agg={}\nmode={}\nseed={}\nclock={}\n",
            c.feat_dim,
            c.d_mem,
            c.d_time,
            c.d_traj,
            c.d_emb,
            c.heads,
            c.layers,
            c.n_neighbors,
            c.te.alpha,
            c.te.beta,
            c.msg_agg.as_str(),
            c.mode.as_str(),
            c.seed,
            self.clock,
        )
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push(section::MANIFEST, self.manifest_text().into_bytes());
        c.push(section::PARAMS, params_to_bytes(&self.params));
        c.push(section::MEMORY, self.memory.snapshot());
        c.push(section::TRAJECTORY, self.trajectory.snapshot());
        c.push(section::ID_TABLE, self.id_table.snapshot());
        c
    }

    /// Writes a checkpoint. Queued interactions are flushed first so the
    /// saved state is complete; parameter values are stored without
    /// optimizer moments.
    pub fn save(&mut self, path: &Path) -> Result<(), ModelError> {
        if !self.buffer.nodes_with_pending().is_empty() || !self.pending.is_empty() {
            let mut scratch = Tape::new();
            self.flush(&mut scratch)?;
        }
        self.to_container().write_to(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let c = Container::read_from(path)?;
        Self::from_container(&c)
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        let manifest = std::str::from_utf8(c.get(section::MANIFEST)?)
            .map_err(|_| ModelError::Manifest("manifest is not UTF-8".into()))?;
        let (cfg, clock) = parse_manifest(manifest)?;
        let mut model = Model::new(cfg)?;
        model.clock = clock;
        for (name, value) in params_from_bytes(c.get(section::PARAMS)?)? {
            model.params.set_value(&name, value)?;
        }
        model.memory.restore(c.get(section::MEMORY)?)?;
        model.trajectory.restore(c.get(section::TRAJECTORY)?)?;
        model.id_table.restore(c.get(section::ID_TABLE)?)?;
        model.buffer = RawMessageBuffer::new(model.memory.num_nodes());
        Ok(model)
    }
}

fn parse_manifest(text: &str) -> Result<(ModelConfig, f64), ModelError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Manifest(format!("line {}: missing `=`", i + 1)))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String, ModelError> {
        map.get(k)
            .cloned()
            .ok_or_else(|| ModelError::Manifest(format!("missing key `{k}`")))
    };
    let parse_usize = |k: &str| -> Result<usize, ModelError> {
        get(k)?
            .parse()
            .map_err(|_| ModelError::Manifest(format!("key `{k}` is not an integer")))
    };
    let parse_f64 = |k: &str| -> Result<f64, ModelError> {
        get(k)?
            .parse()
            .map_err(|_| ModelError::Manifest(format!("key `{k}` is not a number")))
    };
    let format = parse_usize("format")?;
    if format != 1 {
        return Err(ModelError::Manifest(format!(
            "unsupported manifest format {format}"
        )));
    }
    let cfg = ModelConfig {
        feat_dim: parse_usize("feat_dim")?,
        d_mem: parse_usize("d_mem")?,
        d_time: parse_usize("d_time")?,
        d_traj: parse_usize("d_traj")?,
        d_emb: parse_usize("d_emb")?,
        heads: parse_usize("heads")?,
        layers: parse_usize("layers")?,
        n_neighbors: parse_usize("n_neighbors")?,
        te: TeParams {
            alpha: parse_f64("alpha")?,
            beta: parse_f64("beta")?,
        },
        msg_agg: get("msg_agg")?.parse().map_err(ModelError::Manifest)?,
        mode: get("mode")?.parse().map_err(ModelError::Manifest)?,
        seed: get("seed")?
            .parse()
            .map_err(|_| ModelError::Manifest("key `seed` is not an integer".into()))?,
    };
    Ok((cfg, parse_f64("clock")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EventLog;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feat_dim: 1,
            d_mem: 4,
            d_time: 4,
            d_traj: 4,
            d_emb: 4,
            heads: 2,
            layers: 1,
            n_neighbors: 5,
            te: TeParams { alpha: 2.0, beta: 0.1 },
            msg_agg: MessageAggregation::MostRecent,
            mode: TrajectoryMode::Full,
            seed: 3,
        }
    }

    fn tiny_log() -> EventLog {
        let events = vec![
            EdgeEvent { src: NodeId(0), dst: NodeId(2), t: 1.0, features: vec![0.5], label: None, seq: 0 },
            EdgeEvent { src: NodeId(1), dst: NodeId(3), t: 2.0, features: vec![-0.5], label: None, seq: 1 },
            EdgeEvent { src: NodeId(0), dst: NodeId(3), t: 3.0, features: vec![1.0], label: None, seq: 2 },
            EdgeEvent { src: NodeId(1), dst: NodeId(2), t: 4.0, features: vec![0.0], label: None, seq: 3 },
            EdgeEvent { src: NodeId(0), dst: NodeId(1), t: 5.0, features: vec![0.25], label: None, seq: 4 },
        ];
        EventLog::from_events(events, 4, 1).unwrap()
    }

    fn run_stream(model: &mut Model, log: &EventLog) {
        model.set_context(GraphContext::build(log.view()));
        for ev in log.events() {
            model.buffer_event(ev);
        }
        let mut tape = Tape::new();
        model.flush(&mut tape).unwrap();
    }

    #[test]
    fn end_to_end_gradients_reach_every_component() {
        let log = tiny_log();
        let mut model = Model::new(tiny_cfg()).unwrap();
        model.set_context(GraphContext::build(log.view()));

        // First four events as history, the last as the training example;
        // both endpoints then have two distinct past neighbors, so the
        // attention scores carry gradient (a single key makes the softmax
        // output constant).
        for ev in &log.events()[..4] {
            model.buffer_event(ev);
        }
        let mut tape = Tape::new();
        let vars = model.flush(&mut tape).unwrap();
        let ev = &log.events()[4];
        model.prepare_nodes(&[ev.src, ev.dst], ev.t).unwrap();
        let mut cache = EmbedCache::new();
        let zs = model.embed(&mut tape, &vars, &mut cache, ev.src, ev.t).unwrap();
        let zd = model.embed(&mut tape, &vars, &mut cache, ev.dst, ev.t).unwrap();
        let logit = model.link_logit(&mut tape, zs, zd).unwrap();
        let loss = tape.softplus(logit);
        let loss = tape.mean(loss);
        tape.backward(loss, &mut model.params).unwrap();

        for name in [
            "time.omega",
            "id_table.rows",
            "emb.fuse.w0",
            "emb.l0.attn.wq",
            "link_head.w0",
        ] {
            let grad = model.params.get(name).unwrap().grad.values();
            assert!(
                grad.iter().any(|g| *g != 0.0),
                "no gradient reached {name}"
            );
        }
        // The memory GRU only gets gradients when a flushed var feeds the
        // embedding; the flush above covers events 0..3 and the embedding
        // reads node states through constants plus this batch's vars.
        let gru_grad = model.params.get("memory_gru.w_z").unwrap().grad.values();
        assert!(gru_grad.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn same_seed_same_stream_is_bit_identical() {
        let log = tiny_log();
        let mut a = Model::new(tiny_cfg()).unwrap();
        let mut b = Model::new(tiny_cfg()).unwrap();
        run_stream(&mut a, &log);
        run_stream(&mut b, &log);

        let embed_at = |m: &Model| {
            let mut tape = Tape::new();
            let vars = BatchVars::default();
            let z = m
                .embed(&mut tape, &vars, &mut EmbedCache::new(), NodeId(2), 5.0)
                .unwrap();
            tape.value(z).values().to_vec()
        };
        assert_eq!(embed_at(&a), embed_at(&b));

        let mut c = Model::new(ModelConfig { seed: 4, ..tiny_cfg() }).unwrap();
        run_stream(&mut c, &log);
        assert_ne!(embed_at(&a), embed_at(&c));
    }

    #[test]
    fn snapshot_restore_rolls_back_exactly() {
        let log = tiny_log();
        let mut model = Model::new(tiny_cfg()).unwrap();
        model.set_context(GraphContext::build(log.view()));
        for ev in &log.events()[..2] {
            model.buffer_event(ev);
        }
        let mut tape = Tape::new();
        model.flush(&mut tape).unwrap();

        let embed_now = |m: &Model| {
            let mut tape = Tape::new();
            let z = m
                .embed(&mut tape, &BatchVars::default(), &mut EmbedCache::new(), NodeId(0), 2.5)
                .unwrap();
            tape.value(z).values().to_vec()
        };

        let snap = model.snapshot_state();
        let before = embed_now(&model);

        for ev in &log.events()[2..] {
            model.buffer_event(ev);
        }
        let mut tape = Tape::new();
        model.flush(&mut tape).unwrap();
        assert_ne!(embed_now(&model), before);

        model.restore_state(&snap);
        assert_eq!(embed_now(&model), before);
    }

    #[test]
    fn checkpoint_roundtrip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let log = tiny_log();
        let mut model = Model::new(tiny_cfg()).unwrap();
        run_stream(&mut model, &log);
        model.save(&path).unwrap();

        let mut loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.clock(), model.clock());
        for (name, p) in model.params.iter() {
            assert_eq!(
                loaded.params.value(name).unwrap().values(),
                p.value.values(),
                "restored values differ for {name}"
            );
        }
        let embed_at = |m: &Model| {
            let mut tape = Tape::new();
            let z = m
                .embed(&mut tape, &BatchVars::default(), &mut EmbedCache::new(), NodeId(1), 5.0)
                .unwrap();
            tape.value(z).values().to_vec()
        };
        loaded.set_context(GraphContext::build(log.view()));
        assert_eq!(embed_at(&model), embed_at(&loaded));

        // Saving the loaded model reproduces the original bytes.
        let second = dir.path().join("again.bin");
        loaded.save(&second).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn disabled_mode_never_touches_the_id_table() {
        let log = tiny_log();
        let mut model = Model::new(ModelConfig {
            mode: TrajectoryMode::Disabled,
            ..tiny_cfg()
        })
        .unwrap();
        run_stream(&mut model, &log);
        model.prepare_nodes(&[NodeId(0), NodeId(3)], 10.0).unwrap();
        assert_eq!(model.id_table.rows(), 0);
        assert!(model.trajectory.tp(NodeId(0)).is_none());
    }

    #[test]
    fn manifest_rejects_unknown_format_and_bad_values() {
        assert!(matches!(
            parse_manifest("format=2\n"),
            Err(ModelError::Manifest(_))
        ));
        assert!(matches!(
            parse_manifest("format=1\nfeat_dim=zero\n"),
            Err(ModelError::Manifest(_))
        ));
        let model = Model::new(tiny_cfg()).unwrap();
        let (cfg, clock) = parse_manifest(&model.manifest_text()).unwrap();
        assert_eq!(cfg, model.cfg);
        assert_eq!(clock, 0.0);
    }
}
