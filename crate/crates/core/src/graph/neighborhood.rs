//! Time-indexed adjacency with strict-past queries.
//!
//! Edges are treated as undirected for neighborhood purposes: an event
//! contributes the counterpart to both endpoints' lists. Entries are kept
//! sorted by `(t, event seq)` per node, so a query binary-searches the time
//! boundary and walks backwards for the most recent entries.

use super::{LogView, NodeId};

/// One adjacency entry: who, when, and which event it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub t: f64,
    /// `seq` of the originating event; indexes the owning log's features.
    pub event: u32,
}

#[derive(Debug, Clone, Default)]
pub struct TemporalNeighborhoodStore {
    per_node: Vec<Vec<NeighborEntry>>,
}

impl TemporalNeighborhoodStore {
    /// Indexes every event of the view. The store is immutable afterwards;
    /// causality comes from the strict `t' < t` query bound.
    pub fn build(view: LogView<'_>) -> Self {
        let mut per_node: Vec<Vec<NeighborEntry>> = vec![Vec::new(); view.num_nodes];
        for ev in view.events {
            per_node[ev.src.idx()].push(NeighborEntry {
                neighbor: ev.dst,
                t: ev.t,
                event: ev.seq,
            });
            // A self-loop is a single interaction, not two.
            if ev.src != ev.dst {
                per_node[ev.dst.idx()].push(NeighborEntry {
                    neighbor: ev.src,
                    t: ev.t,
                    event: ev.seq,
                });
            }
        }
        for list in &mut per_node {
            list.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.event.cmp(&b.event)));
        }
        Self { per_node }
    }

    pub fn num_nodes(&self) -> usize {
        self.per_node.len()
    }

    /// Up to `limit` interactions of `node` strictly before `t`, most recent
    /// first. Ties on `t'` order by descending event seq (the later-listed
    /// event is "more recent"). Unknown nodes have no history.
    pub fn neighbors_before(&self, node: NodeId, t: f64, limit: usize) -> Vec<NeighborEntry> {
        let Some(list) = self.per_node.get(node.idx()) else {
            return Vec::new();
        };
        let boundary = list.partition_point(|e| e.t < t);
        let take = boundary.min(limit);
        let mut out = Vec::with_capacity(take);
        for i in (boundary - take..boundary).rev() {
            out.push(list[i]);
        }
        out
    }

    /// Every interaction of `node` strictly before `t`, most recent first.
    pub fn all_before(&self, node: NodeId, t: f64) -> Vec<NeighborEntry> {
        self.neighbors_before(node, t, usize::MAX)
    }

    /// Count of interactions of `node` strictly before `t`.
    pub fn degree_before(&self, node: NodeId, t: f64) -> usize {
        self.per_node
            .get(node.idx())
            .map(|list| list.partition_point(|e| e.t < t))
            .unwrap_or(0)
    }
}
