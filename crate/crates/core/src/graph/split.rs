//! Chronological splits and inductive node masking.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{EventLog, GraphError, LogView, NodeId};

/// Fractions of the log given to train and validation; the rest is test.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction: 0.15,
        }
    }
}

/// Index ranges of a chronological split over one log.
#[derive(Debug, Clone)]
pub struct ChronoSplit<'a> {
    log: &'a EventLog,
    pub train_range: std::ops::Range<usize>,
    pub val_range: std::ops::Range<usize>,
    pub test_range: std::ops::Range<usize>,
}

impl<'a> ChronoSplit<'a> {
    pub fn train(&self) -> LogView<'a> {
        self.log.slice(self.train_range.clone())
    }

    pub fn val(&self) -> LogView<'a> {
        self.log.slice(self.val_range.clone())
    }

    pub fn test(&self) -> LogView<'a> {
        self.log.slice(self.test_range.clone())
    }
}

/// Cuts the (already time-sorted) log into train / val / test prefixes of
/// `floor(train * n)` and `floor(val * n)` events; the remainder is test.
pub fn chronological_split(
    log: &EventLog,
    spec: SplitSpec,
) -> Result<ChronoSplit<'_>, GraphError> {
    if log.len() < 3 {
        return Err(GraphError::TooFewEvents {
            need: 3,
            got: log.len(),
        });
    }
    let (tf, vf) = (spec.train_fraction, spec.val_fraction);
    if !(tf > 0.0) || !(vf > 0.0) || !(tf + vf < 1.0) {
        return Err(GraphError::InvalidFractions { train: tf, val: vf });
    }
    let n = log.len();
    let n_train = ((tf * n as f64).floor() as usize).max(1);
    let n_val = ((vf * n as f64).floor() as usize).max(1);
    if n_train + n_val >= n {
        return Err(GraphError::TooFewEvents { need: n_train + n_val + 1, got: n });
    }
    Ok(ChronoSplit {
        log,
        train_range: 0..n_train,
        val_range: n_train..n_train + n_val,
        test_range: n_train + n_val..n,
    })
}

/// Samples `floor(fraction * |candidates|)` nodes among those appearing in
/// val or test, and removes every train event touching one of them. The
/// returned log is the reduced train split; the set is the sampled nodes.
/// Candidates are sorted before the seeded shuffle, so the draw depends only
/// on `(log, fraction, seed)`.
pub fn mask_inductive_nodes(
    split: &ChronoSplit<'_>,
    fraction: f64,
    seed: u64,
) -> Result<(EventLog, BTreeSet<NodeId>), GraphError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GraphError::InvalidSpec(format!(
            "inductive fraction {fraction} must be in [0, 1]"
        )));
    }
    let mut candidates: BTreeSet<NodeId> = BTreeSet::new();
    for ev in split.val().events.iter().chain(split.test().events) {
        candidates.insert(ev.src);
        candidates.insert(ev.dst);
    }
    let mut ordered: Vec<NodeId> = candidates.into_iter().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    let take = (fraction * ordered.len() as f64).floor() as usize;
    let unseen: BTreeSet<NodeId> = ordered.into_iter().take(take).collect();

    let train = split.train();
    let kept: Vec<_> = train
        .events
        .iter()
        .filter(|ev| !unseen.contains(&ev.src) && !unseen.contains(&ev.dst))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(GraphError::TooFewEvents { need: 1, got: 0 });
    }
    let reduced = EventLog::from_events(kept, train.num_nodes, train.feat_dim)?;
    Ok((reduced, unseen))
}
