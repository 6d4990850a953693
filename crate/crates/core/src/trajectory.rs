//! Trajectory stream: learnable node identities and exponentially decaying
//! trajectory features.
//!
//! Every registered node owns one learnable row in a growable table; a
//! projection MLP turns rows into ID vectors. A node's temporal positional
//! feature starts as its ID vector and, on each interaction, becomes
//! `ID + v'` where `v'` sums its own decayed feature with decayed features
//! of temporal neighbors. The decay `x -> alpha * x * exp(-beta * dt)`
//! composes along paths: nesting two hops equals `alpha` times one hop over
//! the summed elapsed time, which is what lets depth count hops.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::checkpoint::{section, CheckpointError, SectionReader, SectionWriter};
use crate::graph::NodeId;
use crate::tensor::nn::{mlp_forward, Activation, MlpParams};
use crate::tensor::params::ParameterSet;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Stored temporal positional features are rescaled onto this L2 ball
/// whenever an update pushes them past it; with `alpha > 1` and tiny decay
/// the recursion otherwise grows without bound.
pub const TP_NORM_CLAMP: f64 = 1e4;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("node {node}: event at t={t} precedes last trajectory update at {last}")]
    OutOfOrder { node: NodeId, t: f64, last: f64 },
    #[error("node {0} has no row in the id table")]
    UnregisteredNode(NodeId),
    #[error("invalid decay settings: {0}")]
    InvalidParams(String),
    #[error("table holds {current} rows, cannot shrink to {requested}")]
    ShrinkingTable { current: usize, requested: usize },
}

/// Decay settings: `alpha` is the per-hop gain, `beta` the decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeParams {
    pub alpha: f64,
    pub beta: f64,
}

impl TeParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, TrajectoryError> {
        if !(alpha > 0.0) {
            return Err(TrajectoryError::InvalidParams(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(beta >= 0.0) {
            return Err(TrajectoryError::InvalidParams(format!(
                "beta must be non-negative, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    fn factor(&self, dt: f64) -> f64 {
        self.alpha * (-self.beta * dt).exp()
    }
}

/// Differentiable decay `alpha * x * exp(-beta * dt)` for `dt >= 0`.
pub fn te_encode(
    tape: &mut Tape,
    x: Var,
    dt: f64,
    p: &TeParams,
) -> Result<Var, TrajectoryError> {
    if dt < 0.0 {
        return Err(TrajectoryError::InvalidParams(format!(
            "elapsed time must be non-negative, got {dt}"
        )));
    }
    Ok(tape.scale(x, p.factor(dt)))
}

/// Value-level twin of [`te_encode`] for diagnostics and property checks.
pub fn te_encode_value(x: &Tensor, dt: f64, p: &TeParams) -> Tensor {
    let f = p.factor(dt);
    Tensor::new(x.shape().to_vec(), x.values().iter().map(|v| f * v).collect())
        .expect("scale preserves shape")
}

/// Returns `(nested, single)` where `nested` applies the decay twice
/// (`dt1` then `dt2`) and `single` applies it once over `dt1 + dt2`.
/// The composition law says `nested == alpha * single` componentwise.
pub fn te_compose_check(x: &Tensor, dt1: f64, dt2: f64, p: &TeParams) -> (Tensor, Tensor) {
    let nested = te_encode_value(&te_encode_value(x, dt1, p), dt2, p);
    let single = te_encode_value(x, dt1 + dt2, p);
    (nested, single)
}

/// One row appended to the table, for run logs.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TableExtension {
    pub node: u32,
    pub t: f64,
    pub rows: usize,
}

/// Growable matrix of learnable per-node rows plus the projection MLP that
/// turns a row into an ID vector.
#[derive(Debug, Clone)]
pub struct IdTable {
    rows_param: String,
    d_id: usize,
    projection: MlpParams,
    node_to_row: Vec<u32>,
    rows: usize,
    init_seed: u64,
    init_rng: ChaCha12Rng,
    extensions: Vec<TableExtension>,
}

const NO_ROW: u32 = u32::MAX;

impl IdTable {
    /// Registers the table parameter (empty) and its projection MLP.
    /// `proj_dims` runs from `d_id` to the ID vector width; row draws come
    /// from a dedicated stream seeded with `row_seed` so extensions continue
    /// it deterministically.
    pub fn init(
        params: &mut ParameterSet,
        prefix: &str,
        proj_dims: &[usize],
        row_seed: u64,
        model_rng: &mut ChaCha12Rng,
    ) -> Result<Self, TrajectoryError> {
        let d_id = proj_dims[0];
        let rows_param = format!("{prefix}.rows");
        params.define(&rows_param, Tensor::new(vec![0, d_id], vec![])?)?;
        let projection = MlpParams::init(
            params,
            &format!("{prefix}.proj"),
            proj_dims,
            Activation::Relu,
            model_rng,
        )?;
        Ok(Self {
            rows_param,
            d_id,
            projection,
            node_to_row: Vec::new(),
            rows: 0,
            init_seed: row_seed,
            init_rng: ChaCha12Rng::seed_from_u64(row_seed),
            extensions: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn d_id(&self) -> usize {
        self.d_id
    }

    pub fn rows_param_name(&self) -> &str {
        &self.rows_param
    }

    pub fn projection(&self) -> &MlpParams {
        &self.projection
    }

    pub fn row_of(&self, node: NodeId) -> Option<u32> {
        match self.node_to_row.get(node.idx()) {
            Some(&r) if r != NO_ROW => Some(r),
            _ => None,
        }
    }

    pub fn is_registered(&self, node: NodeId) -> bool {
        self.row_of(node).is_some()
    }

    /// Extensions recorded since construction (or restore), oldest first.
    pub fn extensions(&self) -> &[TableExtension] {
        &self.extensions
    }

    pub fn take_extensions(&mut self) -> Vec<TableExtension> {
        std::mem::take(&mut self.extensions)
    }

    /// Appends fresh rows until the table holds `new_count`. Existing rows
    /// and their optimizer moments are untouched; new rows draw from the
    /// table's own seeded stream.
    pub fn extend_table(
        &mut self,
        params: &mut ParameterSet,
        new_count: usize,
    ) -> Result<(), TrajectoryError> {
        if new_count < self.rows {
            return Err(TrajectoryError::ShrinkingTable {
                current: self.rows,
                requested: new_count,
            });
        }
        let extra = new_count - self.rows;
        if extra == 0 {
            return Ok(());
        }
        let limit = (6.0 / (1 + self.d_id) as f64).sqrt();
        let values: Vec<f64> = (0..extra * self.d_id)
            .map(|_| self.init_rng.gen_range(-limit..limit))
            .collect();
        params.append_rows(
            &self.rows_param,
            Tensor::new(vec![extra, self.d_id], values)?,
        )?;
        self.rows = new_count;
        Ok(())
    }

    /// Gives `node` a row, appending one if needed; the `t` is recorded in
    /// the extension log when a new row is created.
    pub fn ensure_node(
        &mut self,
        params: &mut ParameterSet,
        node: NodeId,
        t: f64,
    ) -> Result<u32, TrajectoryError> {
        if let Some(row) = self.row_of(node) {
            return Ok(row);
        }
        if node.idx() >= self.node_to_row.len() {
            self.node_to_row.resize(node.idx() + 1, NO_ROW);
        }
        let row = self.rows as u32;
        self.extend_table(params, self.rows + 1)?;
        self.node_to_row[node.idx()] = row;
        self.extensions.push(TableExtension {
            node: node.0,
            t,
            rows: self.rows,
        });
        Ok(row)
    }

    /// Projects the node's row into its ID vector, differentiably.
    pub fn id_vector(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        node: NodeId,
    ) -> Result<Var, TrajectoryError> {
        let row = self
            .row_of(node)
            .ok_or(TrajectoryError::UnregisteredNode(node))?;
        let table = tape.param(params, &self.rows_param)?;
        let picked = tape.select_row(table, row as usize)?;
        Ok(mlp_forward(tape, params, &self.projection, picked)?)
    }

    /// Serializes the node-to-row map and the row-draw stream position (the
    /// rows themselves live with the other parameters).
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = SectionWriter::new(1);
        w.u32(self.d_id as u32);
        w.u64(self.rows as u64);
        w.u64(self.init_seed);
        let pos = self.init_rng.get_word_pos();
        w.u64((pos >> 64) as u64);
        w.u64(pos as u64);
        w.u64(self.node_to_row.len() as u64);
        for r in &self.node_to_row {
            w.u32(*r);
        }
        w.out
    }

    pub fn restore(&mut self, payload: &[u8]) -> Result<(), TrajectoryError> {
        let mut r = SectionReader::new(payload, section::ID_TABLE, 1)?;
        let d_id = r.u32()? as usize;
        if d_id != self.d_id {
            return Err(TrajectoryError::InvalidParams(format!(
                "table width {d_id} in snapshot, model has {}",
                self.d_id
            )));
        }
        self.rows = r.u64()? as usize;
        self.init_seed = r.u64()?;
        let hi = r.u64()? as u128;
        let lo = r.u64()? as u128;
        self.init_rng = ChaCha12Rng::seed_from_u64(self.init_seed);
        self.init_rng.set_word_pos((hi << 64) | lo);
        let n = r.u64()? as usize;
        self.node_to_row = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
        self.extensions.clear();
        Ok(())
    }
}

/// Per-node temporal positional features and their latest aggregates.
/// Nodes start unset; an unset node's feature is its current ID vector.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    d: usize,
    tp: Vec<Option<Tensor>>,
    vprime: Vec<Option<Tensor>>,
    last_update: Vec<f64>,
}

impl TrajectoryStore {
    pub fn new(num_nodes: usize, d: usize) -> Self {
        Self {
            d,
            tp: vec![None; num_nodes],
            vprime: vec![None; num_nodes],
            last_update: vec![0.0; num_nodes],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ensure_node(&mut self, node: NodeId) {
        if node.idx() >= self.tp.len() {
            self.tp.resize(node.idx() + 1, None);
            self.vprime.resize(node.idx() + 1, None);
            self.last_update.resize(node.idx() + 1, 0.0);
        }
    }

    pub fn tp(&self, node: NodeId) -> Option<&Tensor> {
        self.tp.get(node.idx()).and_then(|t| t.as_ref())
    }

    pub fn vprime(&self, node: NodeId) -> Option<&Tensor> {
        self.vprime.get(node.idx()).and_then(|t| t.as_ref())
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update.get(node.idx()).copied().unwrap_or(0.0)
    }

    /// Current feature as a tape var: the stored value if the node has been
    /// updated, otherwise its (differentiable) ID vector.
    pub fn resolve_tp(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        table: &IdTable,
        node: NodeId,
    ) -> Result<Var, TrajectoryError> {
        match self.tp(node) {
            Some(t) => Ok(tape.constant(t.clone())),
            None => table.id_vector(tape, params, node),
        }
    }

    pub fn reset(&mut self) {
        for t in &mut self.tp {
            *t = None;
        }
        for v in &mut self.vprime {
            *v = None;
        }
        self.last_update.fill(0.0);
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = SectionWriter::new(1);
        w.u64(self.tp.len() as u64);
        w.u32(self.d as u32);
        let write_opt = |w: &mut SectionWriter, slot: &Option<Tensor>| match slot {
            Some(t) => {
                w.u8(1);
                w.f64_slice(t.values());
            }
            None => w.u8(0),
        };
        for t in &self.tp {
            write_opt(&mut w, t);
        }
        for v in &self.vprime {
            write_opt(&mut w, v);
        }
        for t in &self.last_update {
            w.f64(*t);
        }
        w.out
    }

    pub fn restore(&mut self, payload: &[u8]) -> Result<(), TrajectoryError> {
        let mut r = SectionReader::new(payload, section::TRAJECTORY, 1)?;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        let read_opt = |r: &mut SectionReader<'_>| -> Result<Option<Tensor>, TrajectoryError> {
            let flag = r.u8()?;
            if flag == 0 {
                return Ok(None);
            }
            let vals = r.f64_vec()?;
            Ok(Some(Tensor::new(vec![1, d], vals).map_err(|e| {
                CheckpointError::Malformed {
                    tag: section::TRAJECTORY.into(),
                    msg: e.to_string(),
                }
            })?))
        };
        let mut tp = Vec::with_capacity(n);
        for _ in 0..n {
            tp.push(read_opt(&mut r)?);
        }
        let mut vprime = Vec::with_capacity(n);
        for _ in 0..n {
            vprime.push(read_opt(&mut r)?);
        }
        let mut last_update = Vec::with_capacity(n);
        for _ in 0..n {
            last_update.push(r.f64()?);
        }
        self.d = d;
        self.tp = tp;
        self.vprime = vprime;
        self.last_update = last_update;
        Ok(())
    }
}

/// Decays an already-resolved feature from its `last_update` to `t`. Split
/// out so batch processing can pass a live tape var for nodes updated
/// earlier in the same batch instead of the store's detached value.
pub fn decay_message(
    tape: &mut Tape,
    tp: Var,
    sender: NodeId,
    last_update: f64,
    t: f64,
    p: &TeParams,
) -> Result<Var, TrajectoryError> {
    if t < last_update {
        return Err(TrajectoryError::OutOfOrder {
            node: sender,
            t,
            last: last_update,
        });
    }
    te_encode(tape, tp, t - last_update, p)
}

/// The sender's current feature decayed from its last update to `t`, i.e.
/// the one-hop trajectory message it contributes at time `t`.
pub fn make_trajectory_message(
    tape: &mut Tape,
    params: &ParameterSet,
    table: &IdTable,
    store: &TrajectoryStore,
    sender: NodeId,
    t: f64,
    p: &TeParams,
) -> Result<Var, TrajectoryError> {
    let tp = store.resolve_tp(tape, params, table, sender)?;
    decay_message(tape, tp, sender, store.last_update(sender), t, p)
}

/// `v' = own + sum(messages)` in the given order; an empty message list
/// returns `own` unchanged.
pub fn aggregate_trajectory(
    tape: &mut Tape,
    own: Var,
    messages: &[Var],
) -> Result<Var, TrajectoryError> {
    let mut acc = own;
    for &m in messages {
        acc = tape.add(acc, m)?;
    }
    Ok(acc)
}

/// Commits `TP = ID + v'` for a node at time `t`. The returned var carries
/// gradients into the ID table and everything feeding `v'`; the stored copy
/// is detached and, if its norm exceeds [`TP_NORM_CLAMP`], rescaled onto the
/// clamp sphere.
pub fn update_tp(
    tape: &mut Tape,
    params: &ParameterSet,
    table: &IdTable,
    store: &mut TrajectoryStore,
    node: NodeId,
    t: f64,
    vprime: Var,
) -> Result<Var, TrajectoryError> {
    store.ensure_node(node);
    let last = store.last_update(node);
    if t < last {
        return Err(TrajectoryError::OutOfOrder { node, t, last });
    }
    let id = table.id_vector(tape, params, node)?;
    let tp = tape.add(id, vprime)?;

    let mut stored = tape.value(tp).clone();
    let norm = stored.l2_norm();
    if norm > TP_NORM_CLAMP {
        let scale = TP_NORM_CLAMP / norm;
        for v in stored.values_mut() {
            *v *= scale;
        }
    }
    let idx = node.idx();
    store.tp[idx] = Some(stored);
    store.vprime[idx] = Some(tape.value(vprime).clone());
    store.last_update[idx] = t;
    Ok(tp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d4_setup() -> (ParameterSet, IdTable) {
        let mut params = ParameterSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut table = IdTable::init(&mut params, "id", &[4, 8, 4], 99, &mut rng).unwrap();
        for n in 0..3u32 {
            table.ensure_node(&mut params, NodeId(n), 0.0).unwrap();
        }
        (params, table)
    }

    /// Square single-layer projection pinned to the identity, so ID == row.
    fn identity_setup(d: usize) -> (ParameterSet, IdTable) {
        let mut params = ParameterSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut table =
            IdTable::init(&mut params, "id", &[d, d], 7, &mut rng).unwrap();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        params
            .set_value("id.proj.w0", Tensor::new(vec![d, d], eye).unwrap())
            .unwrap();
        for n in 0..2u32 {
            table.ensure_node(&mut params, NodeId(n), 0.0).unwrap();
        }
        (params, table)
    }

    #[test]
    fn decay_matches_closed_form() {
        let p = TeParams::new(2.0, 0.1).unwrap();
        let out = te_encode_value(&Tensor::row(vec![1.0]), 10.0, &p);
        assert!((out.values()[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((out.values()[0] - 0.7357588823428847).abs() < 1e-12);
    }

    #[test]
    fn nested_decay_is_alpha_times_single() {
        let p = TeParams::new(2.0, 0.1).unwrap();
        let (nested, single) = te_compose_check(&Tensor::row(vec![1.0]), 5.0, 5.0, &p);
        assert!((nested.values()[0] - 4.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((nested.values()[0] - p.alpha * single.values()[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_elapsed_nesting_counts_hops_exactly() {
        let p = TeParams::new(2.0, 0.7).unwrap();
        let x = Tensor::row(vec![0.3, -1.2]);
        let mut nested = x.clone();
        for _ in 0..4 {
            nested = te_encode_value(&nested, 0.0, &p);
        }
        let expected: Vec<f64> = x.values().iter().map(|v| 16.0 * v).collect();
        assert_eq!(nested.values(), expected.as_slice());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(TeParams::new(0.0, 0.1).is_err());
        assert!(TeParams::new(1.0, -0.5).is_err());
        let p = TeParams::new(1.0, 0.5).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_row(&[1.0]);
        assert!(te_encode(&mut tape, x, -1.0, &p).is_err());
    }

    #[test]
    fn identity_projection_returns_the_raw_row() {
        let (params, table) = identity_setup(3);
        let mut tape = Tape::new();
        let id = table.id_vector(&mut tape, &params, NodeId(1)).unwrap();
        let expected = &params.value("id.rows").unwrap().values()[3..6];
        assert_eq!(tape.value(id).values(), expected);
    }

    #[test]
    fn distinct_nodes_have_distinct_ids() {
        let (params, table) = d4_setup();
        let mut tape = Tape::new();
        let a = table.id_vector(&mut tape, &params, NodeId(0)).unwrap();
        let b = table.id_vector(&mut tape, &params, NodeId(1)).unwrap();
        assert_ne!(tape.value(a).values(), tape.value(b).values());
    }

    #[test]
    fn id_gradient_touches_only_that_row() {
        let (mut params, table) = d4_setup();
        let mut tape = Tape::new();
        let id = table.id_vector(&mut tape, &params, NodeId(1)).unwrap();
        let loss = tape.sum(id);
        tape.backward(loss, &mut params).unwrap();
        let grad = params.get("id.rows").unwrap().grad.values();
        assert!(grad[..4].iter().all(|g| *g == 0.0));
        assert!(grad[4..8].iter().any(|g| *g != 0.0));
        assert!(grad[8..].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn extension_preserves_existing_rows_and_logs() {
        let (mut params, mut table) = d4_setup();
        let before = params.value("id.rows").unwrap().values().to_vec();
        table.ensure_node(&mut params, NodeId(7), 42.0).unwrap();
        let after = params.value("id.rows").unwrap().values();
        assert_eq!(&after[..before.len()], before.as_slice());
        assert_eq!(table.rows(), 4);
        assert_eq!(
            table.extensions().last().unwrap(),
            &TableExtension { node: 7, t: 42.0, rows: 4 }
        );
        assert!(matches!(
            table.extend_table(&mut params, 1),
            Err(TrajectoryError::ShrinkingTable { .. })
        ));
    }

    #[test]
    fn fresh_sender_message_is_alpha_times_id() {
        let (params, table) = d4_setup();
        let store = TrajectoryStore::new(3, 4);
        let p = TeParams::new(2.0, 0.1).unwrap();
        let mut tape = Tape::new();
        let msg =
            make_trajectory_message(&mut tape, &params, &table, &store, NodeId(0), 0.0, &p)
                .unwrap();
        let id = table.id_vector(&mut tape, &params, NodeId(0)).unwrap();
        let expected: Vec<f64> = tape.value(id).values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(msg).values(), expected.as_slice());
    }

    #[test]
    fn update_with_zero_aggregate_stores_the_id() {
        let (params, table) = d4_setup();
        let mut store = TrajectoryStore::new(3, 4);
        let p = TeParams::new(2.0, 0.0).unwrap();
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(vec![1, 4]));
        let tp = update_tp(&mut tape, &params, &table, &mut store, NodeId(0), 3.0, zero)
            .unwrap();
        let id = table.id_vector(&mut tape, &params, NodeId(0)).unwrap();
        assert_eq!(tape.value(tp).values(), tape.value(id).values());
        assert_eq!(store.last_update(NodeId(0)), 3.0);

        // A message at the same timestamp sees no decay: alpha * TP.
        let msg =
            make_trajectory_message(&mut tape, &params, &table, &store, NodeId(0), 3.0, &p)
                .unwrap();
        let expected: Vec<f64> = tape.value(tp).values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(msg).values(), expected.as_slice());

        // Going backwards in time is rejected.
        let zero2 = tape.constant(Tensor::zeros(vec![1, 4]));
        assert!(matches!(
            update_tp(&mut tape, &params, &table, &mut store, NodeId(0), 2.0, zero2),
            Err(TrajectoryError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn repeated_self_feedback_grows_geometrically_until_the_clamp() {
        // With beta = 0 and the node's own decayed feature fed back through
        // one self-message, TP obeys TP_{k+1} = ID + 2 * alpha * TP_k. The
        // closed form against an independently evaluated recurrence must
        // match until the norm cap engages, after which the norm stays put.
        let (params, table) = identity_setup(2);
        let mut store = TrajectoryStore::new(2, 2);
        let p = TeParams::new(2.0, 0.0).unwrap();
        let id_vals: Vec<f64> = params.value("id.rows").unwrap().values()[..2].to_vec();

        let mut expected: Vec<f64> = id_vals.clone();
        let mut clamped = false;
        for step in 1..=30 {
            let t = step as f64;
            let mut tape = Tape::new();
            let own = store
                .resolve_tp(&mut tape, &params, &table, NodeId(0))
                .unwrap();
            let own = te_encode(&mut tape, own, 0.0, &p).unwrap();
            let msg = make_trajectory_message(
                &mut tape, &params, &table, &store, NodeId(0), t, &p,
            )
            .unwrap();
            let agg = aggregate_trajectory(&mut tape, own, &[msg]).unwrap();
            update_tp(&mut tape, &params, &table, &mut store, NodeId(0), t, agg).unwrap();

            let got = store.tp(NodeId(0)).unwrap();
            if !clamped {
                // Recurrence: ID + 2*alpha*TP (own and self-message both
                // contribute alpha * TP with no decay).
                expected = id_vals
                    .iter()
                    .zip(&expected)
                    .map(|(id, tp)| id + 2.0 * p.alpha * tp)
                    .collect();
                let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > TP_NORM_CLAMP {
                    clamped = true;
                } else {
                    for (g, e) in got.values().iter().zip(&expected) {
                        assert!((g - e).abs() <= 1e-9 * e.abs().max(1.0), "step {step}");
                    }
                }
            }
            if clamped {
                assert!((got.l2_norm() - TP_NORM_CLAMP).abs() < 1e-6, "step {step}");
            }
        }
        assert!(clamped, "the cap should engage within 30 steps");
    }

    #[test]
    fn store_snapshot_roundtrip() {
        let mut store = TrajectoryStore::new(3, 2);
        store.tp[1] = Some(Tensor::row(vec![1.5, -2.5]));
        store.vprime[1] = Some(Tensor::row(vec![0.5, 0.25]));
        store.last_update[1] = 9.0;
        let payload = store.snapshot();
        let mut other = TrajectoryStore::new(3, 2);
        other.restore(&payload).unwrap();
        assert_eq!(other.tp(NodeId(1)).unwrap().values(), &[1.5, -2.5]);
        assert_eq!(other.vprime(NodeId(1)).unwrap().values(), &[0.5, 0.25]);
        assert_eq!(other.last_update(NodeId(1)), 9.0);
        assert!(other.tp(NodeId(0)).is_none());
    }

    #[test]
    fn table_snapshot_restores_mapping_and_draw_stream() {
        let (mut params, mut table) = d4_setup();
        table.ensure_node(&mut params, NodeId(5), 1.0).unwrap();
        let payload = table.snapshot();

        let mut params2 = ParameterSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut table2 = IdTable::init(&mut params2, "id", &[4, 8, 4], 99, &mut rng).unwrap();
        table2.restore(&payload).unwrap();
        assert_eq!(table2.rows(), table.rows());
        assert_eq!(table2.row_of(NodeId(5)), table.row_of(NodeId(5)));

        // The restored draw stream continues where the original left off.
        params2
            .set_value("id.rows", params.value("id.rows").unwrap().clone())
            .unwrap();
        table.ensure_node(&mut params, NodeId(6), 2.0).unwrap();
        table2.ensure_node(&mut params2, NodeId(6), 2.0).unwrap();
        assert_eq!(
            params.value("id.rows").unwrap().values(),
            params2.value("id.rows").unwrap().values()
        );
    }
}
