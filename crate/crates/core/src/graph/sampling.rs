//! Seeded negative sampling for link prediction.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{EdgeEvent, GraphError, LogView, NodeId};

/// Draws `n_neg` candidate destinations per event, uniformly with
/// replacement from `pool`. The pool slice must already be in a fixed order
/// (callers sort it once), so identical seeds give identical draws.
pub fn sample_negatives(
    batch: &[EdgeEvent],
    n_neg: usize,
    pool: &[NodeId],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<NodeId>>, GraphError> {
    if pool.is_empty() {
        return Err(GraphError::EmptyPool);
    }
    Ok(batch
        .iter()
        .map(|_| {
            (0..n_neg)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        })
        .collect())
}

/// Sorted distinct destination-side nodes of a view, the candidate pool for
/// negative draws.
pub fn destination_pool(view: LogView<'_>) -> Vec<NodeId> {
    let mut pool: Vec<NodeId> = view.events.iter().map(|e| e.dst).collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EventLog;
    use rand::SeedableRng;

    fn batch(n: usize) -> Vec<EdgeEvent> {
        (0..n)
            .map(|i| EdgeEvent {
                src: NodeId(0),
                dst: NodeId(1),
                t: i as f64,
                features: vec![],
                label: None,
                seq: i as u32,
            })
            .collect()
    }

    #[test]
    fn shape_and_membership() {
        let pool: Vec<NodeId> = (5..9).map(NodeId).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let draws = sample_negatives(&batch(7), 5, &pool, &mut rng).unwrap();
        assert_eq!(draws.len(), 7);
        for row in &draws {
            assert_eq!(row.len(), 5);
            assert!(row.iter().all(|n| pool.contains(n)));
        }
    }

    #[test]
    fn identical_seeds_reproduce_draws() {
        let pool: Vec<NodeId> = (0..100).map(NodeId).collect();
        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        assert_eq!(
            sample_negatives(&batch(20), 3, &pool, &mut a).unwrap(),
            sample_negatives(&batch(20), 3, &pool, &mut b).unwrap()
        );
    }

    #[test]
    fn empty_pool_is_an_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&batch(1), 1, &[], &mut rng),
            Err(GraphError::EmptyPool)
        ));
    }

    #[test]
    fn destination_pool_is_sorted_and_deduped() {
        let events = vec![
            EdgeEvent { src: NodeId(0), dst: NodeId(7), t: 0.0, features: vec![], label: None, seq: 0 },
            EdgeEvent { src: NodeId(1), dst: NodeId(3), t: 1.0, features: vec![], label: None, seq: 1 },
            EdgeEvent { src: NodeId(2), dst: NodeId(7), t: 2.0, features: vec![], label: None, seq: 2 },
        ];
        let log = EventLog::from_events(events, 8, 0).unwrap();
        assert_eq!(destination_pool(log.view()), vec![NodeId(3), NodeId(7)]);
    }
}
