//! Fused node embeddings: memory state and trajectory aggregate are combined
//! by an MLP, then refined by layers of temporal attention over each node's
//! most recent prior interactions.
//!
//! Layer `l` embeds node `i` at time `t` by attending from its layer `l-1`
//! embedding (paired with a zero-lag time feature) over keys built from each
//! neighbor's layer `l-1` embedding at the interaction time, the edge
//! features, and the encoded time gap. Neighbor embeddings recurse with a
//! strictly earlier timestamp, so results never depend on events at or after
//! `t`. A per-batch cache collapses the recursion's shared subproblems.

use std::collections::BTreeMap;

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::graph::neighborhood::TemporalNeighborhoodStore;
use crate::graph::{EdgeEvent, NodeId};
use crate::memory::{MemoryError, MemoryStore, TimeEncoder};
use crate::tensor::nn::{
    mlp_forward, multi_head_attention, Activation, AttentionParams, MlpParams,
};
use crate::tensor::params::ParameterSet;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use crate::trajectory::{IdTable, TrajectoryError, TrajectoryStore};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("no event with sequence number {0} in the feature lookup")]
    UnknownEvent(u32),
}

/// How the trajectory stream feeds the fusion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMode {
    /// Decayed, recursively aggregated trajectory features.
    Full,
    /// Static learnable ID vectors with no aggregation or decay.
    RawId,
    /// No trajectory input; the fusion sees a zero vector.
    Disabled,
}

impl TrajectoryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::RawId => "raw-id",
            Self::Disabled => "disabled",
        }
    }
}

impl std::str::FromStr for TrajectoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "raw-id" => Ok(Self::RawId),
            "disabled" => Ok(Self::Disabled),
            other => Err(format!(
                "unknown trajectory mode `{other}` (expected full, raw-id, or disabled)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingConfig {
    pub layers: usize,
    pub heads: usize,
    pub n_neighbors: usize,
    pub d_emb: usize,
}

/// Parameter handles for the fusion MLPs and the attention layers.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub cfg: EmbeddingConfig,
    d_mem: usize,
    feat_dim: usize,
    time: TimeEncoder,
    traj_proj: MlpParams,
    fuse: MlpParams,
    layer_attn: Vec<AttentionParams>,
    layer_update: Vec<MlpParams>,
}

impl EmbeddingParams {
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        d_mem: usize,
        d_traj: usize,
        feat_dim: usize,
        time: &TimeEncoder,
        cfg: EmbeddingConfig,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, EmbeddingError> {
        if cfg.layers == 0 {
            return Err(TensorError::InvalidArgument {
                op: "embedding_init",
                msg: "need at least one attention layer".into(),
            }
            .into());
        }
        let d = cfg.d_emb;
        let traj_proj =
            MlpParams::init(params, &format!("{prefix}.traj_proj"), &[d_traj, d], Activation::Relu, rng)?;
        let fuse = MlpParams::init(
            params,
            &format!("{prefix}.fuse"),
            &[d_mem + d, d, d],
            Activation::Relu,
            rng,
        )?;
        let mut layer_attn = Vec::with_capacity(cfg.layers);
        let mut layer_update = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layer_attn.push(AttentionParams::init(
                params,
                &format!("{prefix}.l{l}.attn"),
                d + time.d_time,
                d + feat_dim + time.d_time,
                d,
                cfg.heads,
                rng,
            )?);
            layer_update.push(MlpParams::init(
                params,
                &format!("{prefix}.l{l}.update"),
                &[2 * d, d, d],
                Activation::Relu,
                rng,
            )?);
        }
        Ok(Self {
            cfg,
            d_mem,
            feat_dim,
            time: time.clone(),
            traj_proj,
            fuse,
            layer_attn,
            layer_update,
        })
    }

    pub fn d_emb(&self) -> usize {
        self.cfg.d_emb
    }
}

/// Edge features addressable by event sequence number.
#[derive(Debug, Clone, Default)]
pub struct FeatureLookup {
    by_seq: BTreeMap<u32, Vec<f64>>,
}

impl FeatureLookup {
    pub fn build(events: &[EdgeEvent]) -> Self {
        Self {
            by_seq: events
                .iter()
                .map(|e| (e.seq, e.features.clone()))
                .collect(),
        }
    }

    pub fn get(&self, seq: u32) -> Option<&[f64]> {
        self.by_seq.get(&seq).map(|f| f.as_slice())
    }
}

/// Everything the embedding recursion reads. `memory_vars` and
/// `trajectory_vars` carry this batch's freshly flushed states as live tape
/// vars; older state comes from the stores as constants.
pub struct EmbeddingInputs<'a> {
    pub memory: &'a MemoryStore,
    pub memory_vars: &'a BTreeMap<NodeId, Var>,
    pub trajectory: &'a TrajectoryStore,
    pub trajectory_vars: &'a BTreeMap<NodeId, Var>,
    pub id_table: &'a IdTable,
    pub neighbors: &'a TemporalNeighborhoodStore,
    pub features: &'a FeatureLookup,
    pub mode: TrajectoryMode,
}

/// Memo of `(node, time bits, layer) -> Var`, valid for one tape.
pub type EmbedCache = BTreeMap<(u32, u64, usize), Var>;

/// Embeds `node` at time `t` through all configured attention layers.
pub fn embed_node(
    tape: &mut Tape,
    params: &ParameterSet,
    emb: &EmbeddingParams,
    inputs: &EmbeddingInputs<'_>,
    cache: &mut EmbedCache,
    node: NodeId,
    t: f64,
) -> Result<Var, EmbeddingError> {
    compute_embedding(tape, params, emb, inputs, cache, node, t, emb.cfg.layers)
}

fn compute_embedding(
    tape: &mut Tape,
    params: &ParameterSet,
    emb: &EmbeddingParams,
    inputs: &EmbeddingInputs<'_>,
    cache: &mut EmbedCache,
    node: NodeId,
    t: f64,
    layer: usize,
) -> Result<Var, EmbeddingError> {
    let key = (node.0, t.to_bits(), layer);
    if let Some(&v) = cache.get(&key) {
        return Ok(v);
    }
    let out = if layer == 0 {
        fused_base(tape, params, emb, inputs, node)?
    } else {
        let own = compute_embedding(tape, params, emb, inputs, cache, node, t, layer - 1)?;
        let entries = inputs
            .neighbors
            .neighbors_before(node, t, emb.cfg.n_neighbors);
        let attended = if entries.is_empty() {
            tape.constant(Tensor::zeros(vec![1, emb.cfg.d_emb]))
        } else {
            let mut rows = Vec::with_capacity(entries.len());
            for e in &entries {
                let h = compute_embedding(
                    tape, params, emb, inputs, cache, e.neighbor, e.t, layer - 1,
                )?;
                let phi = emb.time.encode(tape, params, t - e.t)?;
                let row = if emb.feat_dim > 0 {
                    let feats = inputs
                        .features
                        .get(e.event)
                        .ok_or(EmbeddingError::UnknownEvent(e.event))?;
                    let fv = tape.constant_row(feats);
                    tape.concat_last(&[h, fv, phi])?
                } else {
                    tape.concat_last(&[h, phi])?
                };
                rows.push(row);
            }
            let keys = tape.stack_rows(&rows)?;
            let phi0 = emb.time.encode(tape, params, 0.0)?;
            let query = tape.concat_last(&[own, phi0])?;
            multi_head_attention(
                tape,
                params,
                &emb.layer_attn[layer - 1],
                query,
                keys,
                &vec![true; entries.len()],
            )?
        };
        let joined = tape.concat_last(&[own, attended])?;
        mlp_forward(tape, params, &emb.layer_update[layer - 1], joined)?
    };
    cache.insert(key, out);
    Ok(out)
}

/// Layer-0 representation: `fuse([memory_state || proj(trajectory)])`.
fn fused_base(
    tape: &mut Tape,
    params: &ParameterSet,
    emb: &EmbeddingParams,
    inputs: &EmbeddingInputs<'_>,
    node: NodeId,
) -> Result<Var, EmbeddingError> {
    let mem = match inputs.memory_vars.get(&node) {
        Some(&v) => v,
        None if node.idx() < inputs.memory.num_nodes() => {
            tape.constant(inputs.memory.state(node).clone())
        }
        None => tape.constant(Tensor::zeros(vec![1, emb.d_mem])),
    };
    let traj = match inputs.mode {
        TrajectoryMode::Disabled => tape.constant(Tensor::zeros(vec![1, emb.cfg.d_emb])),
        TrajectoryMode::RawId => {
            let id = inputs.id_table.id_vector(tape, params, node)?;
            mlp_forward(tape, params, &emb.traj_proj, id)?
        }
        TrajectoryMode::Full => {
            let v = match inputs.trajectory_vars.get(&node) {
                Some(&v) => v,
                None => match inputs.trajectory.vprime(node) {
                    Some(stored) => tape.constant(stored.clone()),
                    None => inputs.id_table.id_vector(tape, params, node)?,
                },
            };
            mlp_forward(tape, params, &emb.traj_proj, v)?
        }
    };
    let joined = tape.concat_last(&[mem, traj])?;
    Ok(mlp_forward(tape, params, &emb.fuse, joined)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EventLog;
    use rand::SeedableRng;

    struct Fixture {
        params: ParameterSet,
        emb: EmbeddingParams,
        table: IdTable,
        memory: MemoryStore,
        trajectory: TrajectoryStore,
        neighbors: TemporalNeighborhoodStore,
        features: FeatureLookup,
    }

    fn event(src: u32, dst: u32, t: f64, feat: f64, seq: u32) -> EdgeEvent {
        EdgeEvent {
            src: NodeId(src),
            dst: NodeId(dst),
            t,
            features: vec![feat],
            label: None,
            seq,
        }
    }

    fn fixture(events: Vec<EdgeEvent>, num_nodes: usize) -> Fixture {
        let log = EventLog::from_events(events, num_nodes, 1).unwrap();
        let mut params = ParameterSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let time = TimeEncoder::init(&mut params, "time", 4, &mut rng).unwrap();
        let mut table = IdTable::init(&mut params, "id", &[3, 3], 17, &mut rng).unwrap();
        for n in 0..num_nodes {
            table
                .ensure_node(&mut params, NodeId(n as u32), 0.0)
                .unwrap();
        }
        let cfg = EmbeddingConfig {
            layers: 2,
            heads: 2,
            n_neighbors: 5,
            d_emb: 6,
        };
        let emb = EmbeddingParams::init(&mut params, "emb", 4, 3, 1, &time, cfg, &mut rng)
            .unwrap();
        Fixture {
            params,
            emb,
            table,
            memory: MemoryStore::new(num_nodes, 4),
            trajectory: TrajectoryStore::new(num_nodes, 3),
            neighbors: TemporalNeighborhoodStore::build(log.view()),
            features: FeatureLookup::build(log.events()),
        }
    }

    static EMPTY: std::sync::OnceLock<BTreeMap<NodeId, Var>> = std::sync::OnceLock::new();

    fn empty_vars() -> &'static BTreeMap<NodeId, Var> {
        EMPTY.get_or_init(BTreeMap::new)
    }

    fn make_inputs<'a>(f: &'a Fixture, mode: TrajectoryMode) -> EmbeddingInputs<'a> {
        EmbeddingInputs {
            memory: &f.memory,
            memory_vars: empty_vars(),
            trajectory: &f.trajectory,
            trajectory_vars: empty_vars(),
            id_table: &f.table,
            neighbors: &f.neighbors,
            features: &f.features,
            mode,
        }
    }

    #[test]
    fn shape_and_finiteness_with_history() {
        let f = fixture(
            vec![event(0, 1, 1.0, 0.5, 0), event(1, 2, 2.0, -0.25, 1)],
            3,
        );
        let ins = make_inputs(&f, TrajectoryMode::Full);
        let mut tape = Tape::new();
        let mut cache = EmbedCache::new();
        let z = embed_node(&mut tape, &f.params, &f.emb, &ins, &mut cache, NodeId(1), 3.0)
            .unwrap();
        assert_eq!(tape.value(z).shape(), &[1, 6]);
        assert!(tape.value(z).values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cache_returns_the_same_var_for_repeat_queries() {
        let f = fixture(vec![event(0, 1, 1.0, 0.5, 0)], 2);
        let ins = make_inputs(&f, TrajectoryMode::Full);
        let mut tape = Tape::new();
        let mut cache = EmbedCache::new();
        let a = embed_node(&mut tape, &f.params, &f.emb, &ins, &mut cache, NodeId(0), 2.0)
            .unwrap();
        let len_after_first = tape.len();
        let b = embed_node(&mut tape, &f.params, &f.emb, &ins, &mut cache, NodeId(0), 2.0)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(tape.len(), len_after_first);
    }

    #[test]
    fn future_events_do_not_change_past_embeddings() {
        let base = vec![event(0, 1, 1.0, 0.5, 0)];
        let mut extended = base.clone();
        extended.push(event(1, 2, 10.0, 9.9, 1));

        let fa = fixture(base, 3);
        let fb = fixture(extended, 3);
        let ia = make_inputs(&fa, TrajectoryMode::Disabled);
        let ib = make_inputs(&fb, TrajectoryMode::Disabled);

        let mut ta = Tape::new();
        let mut tb = Tape::new();
        let za = embed_node(&mut ta, &fa.params, &fa.emb, &ia, &mut EmbedCache::new(), NodeId(1), 5.0)
            .unwrap();
        let zb = embed_node(&mut tb, &fb.params, &fb.emb, &ib, &mut EmbedCache::new(), NodeId(1), 5.0)
            .unwrap();
        assert_eq!(ta.value(za).values(), tb.value(zb).values());
    }

    #[test]
    fn trajectory_modes_produce_distinct_embeddings() {
        let f = fixture(vec![event(0, 1, 1.0, 0.5, 0)], 2);
        let mut outs = Vec::new();
        for mode in [
            TrajectoryMode::Full,
            TrajectoryMode::RawId,
            TrajectoryMode::Disabled,
        ] {
            let ins = make_inputs(&f, mode);
            let mut tape = Tape::new();
            let z = embed_node(
                &mut tape, &f.params, &f.emb, &ins, &mut EmbedCache::new(), NodeId(0), 2.0,
            )
            .unwrap();
            outs.push(tape.value(z).values().to_vec());
        }
        // Full on a never-updated node falls back to the ID vector, which
        // matches RawId here; both must differ from the zeroed variant.
        assert_eq!(outs[0], outs[1]);
        assert_ne!(outs[0], outs[2]);
    }

    #[test]
    fn gradients_reach_the_id_table_through_fusion() {
        let f = fixture(vec![event(0, 1, 1.0, 0.5, 0)], 2);
        let ins = make_inputs(&f, TrajectoryMode::Full);
        let mut params = f.params.clone();
        let mut tape = Tape::new();
        let z = embed_node(&mut tape, &params, &f.emb, &ins, &mut EmbedCache::new(), NodeId(0), 2.0)
            .unwrap();
        let loss = tape.sum(z);
        tape.backward(loss, &mut params).unwrap();
        let grad = params.get("id.rows").unwrap().grad.values();
        assert!(grad.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn edge_features_influence_attention_keys() {
        let fa = fixture(vec![event(0, 1, 1.0, 0.5, 0)], 2);
        let fb = fixture(vec![event(0, 1, 1.0, -2.0, 0)], 2);
        let ia = make_inputs(&fa, TrajectoryMode::Disabled);
        let ib = make_inputs(&fb, TrajectoryMode::Disabled);
        let mut ta = Tape::new();
        let mut tb = Tape::new();
        let za = embed_node(&mut ta, &fa.params, &fa.emb, &ia, &mut EmbedCache::new(), NodeId(0), 2.0)
            .unwrap();
        let zb = embed_node(&mut tb, &fb.params, &fb.emb, &ib, &mut EmbedCache::new(), NodeId(0), 2.0)
            .unwrap();
        assert_ne!(ta.value(za).values(), tb.value(zb).values());
    }
}
