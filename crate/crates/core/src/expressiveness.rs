//! Temporal computation trees and a distinguishability report.
//!
//! A temporal computation tree (TCT) unrolls the message-passing recursion
//! around one `(node, time)` query: each level expands every strictly
//! earlier interaction of the current node. Two nodes whose TCTs are
//! isomorphic as anonymous trees (structure and timestamps only) are
//! indistinguishable to any model that ignores node identity, whatever its
//! parameters. Attaching learned per-node payloads breaks such ties, and the
//! report below measures exactly that on a live model: embedding distance of
//! a node pair next to the isomorphism verdicts with and without payloads.

use serde::Serialize;
use thiserror::Error;

use crate::graph::neighborhood::TemporalNeighborhoodStore;
use crate::graph::{EventLog, NodeId};
use crate::model::{GraphContext, Model, ModelConfig, ModelError};
use crate::tensor::tape::Tape;
use crate::embedding::{EmbedCache, TrajectoryMode};

#[derive(Debug, Error)]
pub enum ExprError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("node pair ({0}, {1}) must be distinct")]
    SamePair(u32, u32),
}

/// One position of a temporal computation tree. The root's `t` is the query
/// time; a child's `t` is the timestamp of the interaction that created it,
/// which is also the query time of its own expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct TctNode {
    pub node: NodeId,
    pub t: f64,
    pub payload: Vec<f64>,
    pub children: Vec<TctNode>,
}

impl TctNode {
    pub fn count(&self) -> usize {
        1 + self.children.iter().map(TctNode::count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.children
            .iter()
            .map(|c| 1 + c.depth())
            .max()
            .unwrap_or(0)
    }
}

/// Expands `levels` layers of strictly-earlier interactions below
/// `(node, t)`, without any branching cap. `payload` supplies the feature
/// attached to every occurrence of a node.
pub fn build_tct(
    index: &TemporalNeighborhoodStore,
    payload: &dyn Fn(NodeId) -> Vec<f64>,
    node: NodeId,
    t: f64,
    levels: usize,
) -> TctNode {
    let children = if levels == 0 {
        Vec::new()
    } else {
        index
            .all_before(node, t)
            .iter()
            .map(|e| build_tct(index, payload, e.neighbor, e.t, levels - 1))
            .collect()
    };
    TctNode {
        node,
        t,
        payload: payload(node),
        children,
    }
}

/// Timestamps and payload entries are compared after rounding to 12 decimal
/// places, so float noise below that scale cannot flip a verdict.
fn round_key(x: f64) -> i128 {
    (x * 1e12).round() as i128
}

/// Order-insensitive canonical form: children are canonicalized recursively
/// and sorted, so any two isomorphic trees serialize identically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Canon {
    t: i128,
    payload: Option<Vec<i128>>,
    children: Vec<Canon>,
}

fn canonicalize(tree: &TctNode, anonymous: bool) -> Canon {
    let mut children: Vec<Canon> = tree
        .children
        .iter()
        .map(|c| canonicalize(c, anonymous))
        .collect();
    children.sort();
    Canon {
        t: round_key(tree.t),
        payload: if anonymous {
            None
        } else {
            Some(tree.payload.iter().copied().map(round_key).collect())
        },
        children,
    }
}

/// One matched pair of tree positions in an isomorphism witness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WitnessPair {
    pub left: (u32, f64),
    pub right: (u32, f64),
}

/// Result of an isomorphism test; `witness` pairs every position of the
/// left tree with one of the right tree when the verdict is positive.
#[derive(Debug, Clone, Serialize)]
pub struct IsomorphismCertificate {
    pub verdict: bool,
    pub witness: Vec<WitnessPair>,
}

/// Exact isomorphism by canonical form. With `anonymous` set, node payloads
/// are ignored and only structure plus timestamps count.
pub fn tct_isomorphic(a: &TctNode, b: &TctNode, anonymous: bool) -> IsomorphismCertificate {
    if canonicalize(a, anonymous) != canonicalize(b, anonymous) {
        return IsomorphismCertificate {
            verdict: false,
            witness: Vec::new(),
        };
    }
    let mut witness = Vec::with_capacity(a.count());
    pair_up(a, b, anonymous, &mut witness);
    IsomorphismCertificate {
        verdict: true,
        witness,
    }
}

/// Walks both trees with children in canonical order and records the
/// position pairing. Canonical equality of the parents guarantees the
/// sorted child lists align one-to-one.
fn pair_up(a: &TctNode, b: &TctNode, anonymous: bool, out: &mut Vec<WitnessPair>) {
    out.push(WitnessPair {
        left: (a.node.0, a.t),
        right: (b.node.0, b.t),
    });
    let sorted = |tree: &TctNode| {
        let mut kids: Vec<(Canon, TctNode)> = tree
            .children
            .iter()
            .map(|c| (canonicalize(c, anonymous), c.clone()))
            .collect();
        kids.sort_by(|x, y| x.0.cmp(&y.0));
        kids
    };
    for ((_, ca), (_, cb)) in sorted(a).into_iter().zip(sorted(b)) {
        pair_up(&ca, &cb, anonymous, out);
    }
}

/// Reference implementation: recursively searches for any bijection between
/// child lists. Exponential, intended for cross-checking small trees.
pub fn brute_force_isomorphic(a: &TctNode, b: &TctNode, anonymous: bool) -> bool {
    if round_key(a.t) != round_key(b.t) {
        return false;
    }
    if !anonymous {
        let pa: Vec<i128> = a.payload.iter().copied().map(round_key).collect();
        let pb: Vec<i128> = b.payload.iter().copied().map(round_key).collect();
        if pa != pb {
            return false;
        }
    }
    if a.children.len() != b.children.len() {
        return false;
    }
    let mut used = vec![false; b.children.len()];
    fn assign(
        a_kids: &[TctNode],
        b_kids: &[TctNode],
        used: &mut [bool],
        i: usize,
        anonymous: bool,
    ) -> bool {
        if i == a_kids.len() {
            return true;
        }
        for j in 0..b_kids.len() {
            if !used[j] && brute_force_isomorphic(&a_kids[i], &b_kids[j], anonymous) {
                used[j] = true;
                if assign(a_kids, b_kids, used, i + 1, anonymous) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    assign(&a.children, &b.children, &mut used, 0, anonymous)
}

/// One line of the distinguishability report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub variant: String,
    pub pair: (u32, u32),
    /// Euclidean distance between the two nodes' embeddings at the probe
    /// time, after streaming the whole log.
    pub distance: f64,
    pub anon_isomorphic: bool,
    pub nonanon_isomorphic: bool,
}

/// Streams `log` through a fresh model per variant, embeds the pair at `t`,
/// and pairs the distance with the TCT verdicts at depth `levels`. Payloads
/// are the variant's per-node feature: zero vectors when the variant has no
/// node identities, otherwise the node's identity vector.
pub fn distinguishability_report(
    log: &EventLog,
    base: &ModelConfig,
    variants: &[TrajectoryMode],
    pair: (NodeId, NodeId),
    t: f64,
    levels: usize,
    batch_size: usize,
) -> Result<Vec<ReportEntry>, ExprError> {
    if pair.0 == pair.1 {
        return Err(ExprError::SamePair(pair.0 .0, pair.1 .0));
    }
    let mut entries = Vec::with_capacity(variants.len());
    for &mode in variants {
        let mut cfg = base.clone();
        cfg.mode = mode;
        let mut model = Model::new(cfg)?;
        model.set_context(GraphContext::build(log.view()));
        for batch in log.events().chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            model.flush(&mut tape)?;
            for ev in batch {
                model.buffer_event(ev);
            }
        }
        let closure = model.embedding_closure(&[(pair.0, t), (pair.1, t)]);
        model.prepare_nodes(&closure, t)?;
        let mut tape = Tape::new();
        let vars = model.flush(&mut tape)?;
        let mut cache = EmbedCache::new();
        let za = model.embed(&mut tape, &vars, &mut cache, pair.0, t)?;
        let zb = model.embed(&mut tape, &vars, &mut cache, pair.1, t)?;
        let distance = euclidean(tape.value(za).values(), tape.value(zb).values());

        let payload = |n: NodeId| -> Vec<f64> {
            if mode == TrajectoryMode::Disabled {
                return vec![0.0; model.cfg.d_traj];
            }
            let mut id_tape = Tape::new();
            match model.id_table.id_vector(&mut id_tape, &model.params, n) {
                Ok(v) => id_tape.value(v).values().to_vec(),
                Err(_) => vec![0.0; model.cfg.d_traj],
            }
        };
        let ta = build_tct(&model.context().neighbors, &payload, pair.0, t, levels);
        let tb = build_tct(&model.context().neighbors, &payload, pair.1, t, levels);
        entries.push(ReportEntry {
            variant: mode.as_str().to_string(),
            pair: (pair.0 .0, pair.1 .0),
            distance,
            anon_isomorphic: tct_isomorphic(&ta, &tb, true).verdict,
            nonanon_isomorphic: tct_isomorphic(&ta, &tb, false).verdict,
        });
    }
    Ok(entries)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::gen_symmetric_cycle;
    use crate::graph::EdgeEvent;
    use crate::trajectory::TeParams;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn zero_payload(_: NodeId) -> Vec<f64> {
        vec![0.0]
    }

    fn id_payload(n: NodeId) -> Vec<f64> {
        vec![n.0 as f64 + 1.0]
    }

    fn cycle_index() -> TemporalNeighborhoodStore {
        TemporalNeighborhoodStore::build(gen_symmetric_cycle().view())
    }

    #[test]
    fn isolated_node_gives_a_single_root() {
        let index = cycle_index();
        let tct = build_tct(&index, &zero_payload, NodeId(0), 0.5, 3);
        assert_eq!(tct.count(), 1);
        assert_eq!(tct.depth(), 0);
    }

    #[test]
    fn cycle_hub_has_two_children_and_mirrored_grandchildren() {
        let index = cycle_index();
        let tct = build_tct(&index, &zero_payload, NodeId(1), 3.0, 2);
        assert_eq!(tct.children.len(), 2);
        // Node 1 interacted with 0 at t=1 and 2 at t=2; only the t=2 branch
        // has an earlier interaction to expand.
        assert_eq!(tct.count(), 4);
        for child in &tct.children {
            assert!(child.t < 3.0);
        }
    }

    #[test]
    fn mirrored_hubs_are_anonymous_isomorphic_but_not_with_ids() {
        let index = cycle_index();
        let a = build_tct(&index, &id_payload, NodeId(1), 3.0, 2);
        let b = build_tct(&index, &id_payload, NodeId(3), 3.0, 2);
        let anon = tct_isomorphic(&a, &b, true);
        assert!(anon.verdict);
        assert_eq!(anon.witness.len(), a.count());
        assert!(!tct_isomorphic(&a, &b, false).verdict);
        assert!(brute_force_isomorphic(&a, &b, true));
        assert!(!brute_force_isomorphic(&a, &b, false));
    }

    #[test]
    fn witness_pairs_preserve_timestamps_and_anonymous_structure() {
        let index = cycle_index();
        let a = build_tct(&index, &zero_payload, NodeId(1), 3.0, 2);
        let b = build_tct(&index, &zero_payload, NodeId(3), 3.0, 2);
        let cert = tct_isomorphic(&a, &b, true);
        assert!(cert.verdict);
        for p in &cert.witness {
            assert_eq!(round_key(p.left.1), round_key(p.right.1));
        }
        let lefts: std::collections::BTreeSet<_> = cert
            .witness
            .iter()
            .map(|p| (p.left.0, round_key(p.left.1)))
            .collect();
        assert_eq!(lefts.len(), cert.witness.len(), "left side is injective");
    }

    #[test]
    fn a_tree_is_isomorphic_to_itself() {
        let index = cycle_index();
        let a = build_tct(&index, &id_payload, NodeId(1), 3.0, 2);
        assert!(tct_isomorphic(&a, &a, false).verdict);
        assert!(tct_isomorphic(&a, &a, true).verdict);
    }

    /// Random small trees with controlled duplication: canonical equality
    /// must agree with the brute-force bijection search in both modes.
    fn arb_tree(depth: usize) -> impl Strategy<Value = TctNode> {
        let leaf = (0u32..4, 0u32..4, 0u32..3).prop_map(|(n, t, p)| TctNode {
            node: NodeId(n),
            t: t as f64,
            payload: vec![p as f64],
            children: vec![],
        });
        leaf.prop_recursive(depth as u32, 9, 3, |inner| {
            (
                0u32..4,
                0u32..4,
                0u32..3,
                prop::collection::vec(inner, 0..3),
            )
                .prop_map(|(n, t, p, children)| TctNode {
                    node: NodeId(n),
                    t: t as f64,
                    payload: vec![p as f64],
                    children,
                })
        })
    }

    proptest! {
        #[test]
        fn canonical_verdict_matches_brute_force(
            a in arb_tree(3),
            b in arb_tree(3),
            anonymous in any::<bool>()
        ) {
            let fast = tct_isomorphic(&a, &b, anonymous).verdict;
            let slow = brute_force_isomorphic(&a, &b, anonymous);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn shuffling_children_never_changes_the_canonical_form(
            a in arb_tree(3),
            seed in any::<u64>()
        ) {
            fn shuffle(t: &TctNode, rng: &mut ChaCha12Rng) -> TctNode {
                let mut children: Vec<TctNode> =
                    t.children.iter().map(|c| shuffle(c, rng)).collect();
                children.shuffle(rng);
                TctNode { children, ..t.clone() }
            }
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let shuffled = shuffle(&a, &mut rng);
            prop_assert_eq!(
                canonicalize(&a, false),
                canonicalize(&shuffled, false)
            );
            prop_assert!(tct_isomorphic(&a, &shuffled, false).verdict);
        }
    }

    fn report_config() -> ModelConfig {
        ModelConfig {
            feat_dim: 0,
            d_mem: 4,
            d_time: 4,
            d_traj: 4,
            d_emb: 4,
            heads: 2,
            layers: 1,
            n_neighbors: 5,
            te: TeParams::new(2.0, 0.1).unwrap(),
            seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn report_separates_the_variants_on_the_symmetric_cycle() {
        let log = gen_symmetric_cycle();
        let entries = distinguishability_report(
            &log,
            &report_config(),
            &[TrajectoryMode::Disabled, TrajectoryMode::Full],
            (NodeId(1), NodeId(3)),
            3.0,
            2,
            8,
        )
        .unwrap();
        assert_eq!(entries.len(), 2);
        let no_id = &entries[0];
        assert_eq!(no_id.variant, "disabled");
        assert!(
            no_id.distance < 1e-9,
            "anonymous computation must not separate mirrored nodes, got {}",
            no_id.distance
        );
        assert!(no_id.anon_isomorphic);
        let full = &entries[1];
        assert!(
            full.distance > 1e-3,
            "identity payloads should separate the pair, got {}",
            full.distance
        );
        assert!(full.anon_isomorphic, "structure stays symmetric");
        assert!(!full.nonanon_isomorphic, "payloads break the tie");
    }

    #[test]
    fn asymmetric_control_graph_separates_even_without_ids() {
        // Same cycle plus one extra hit on node 1, so the mirror symmetry
        // between 1 and 3 is broken structurally.
        let mut events: Vec<EdgeEvent> = gen_symmetric_cycle().events().to_vec();
        events.push(EdgeEvent {
            src: NodeId(0),
            dst: NodeId(1),
            t: 2.5,
            features: vec![],
            label: None,
            seq: 4,
        });
        let log = EventLog::from_events(events, 4, 0).unwrap();
        let entries = distinguishability_report(
            &log,
            &report_config(),
            &[TrajectoryMode::Disabled],
            (NodeId(1), NodeId(3)),
            3.0,
            2,
            8,
        )
        .unwrap();
        assert!(entries[0].distance > 0.0);
        assert!(!entries[0].anon_isomorphic);
    }

    #[test]
    fn node_count_respects_the_degree_bound() {
        let log = crate::graph::synthetic::SyntheticSpec {
            sources: 4,
            targets: 8,
            events: 40,
            seed: 3,
            ..crate::graph::synthetic::SyntheticSpec::default()
        }
        .generate()
        .unwrap();
        let index = TemporalNeighborhoodStore::build(log.view());
        let max_degree = (0..log.num_nodes() as u32)
            .map(|n| index.all_before(NodeId(n), f64::INFINITY).len())
            .max()
            .unwrap() as usize;
        let levels = 2;
        let bound: usize = (0..=levels).map(|l| max_degree.pow(l as u32)).sum();
        let t = log.events().last().unwrap().t + 1.0;
        for n in 0..log.num_nodes() as u32 {
            let tct = build_tct(&index, &zero_payload, NodeId(n), t, levels);
            assert!(tct.count() <= bound, "node {n}: {} > {bound}", tct.count());
        }
    }
}
