//! Timestamped interaction logs: ingestion, chronological splits, temporal
//! neighborhoods, negative sampling, and synthetic generators.

pub mod ingest;
pub mod neighborhood;
pub mod sampling;
pub mod split;
pub mod synthetic;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Ingest { line: usize, msg: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("event log is empty")]
    EmptyLog,
    #[error("need at least {need} events, got {got}")]
    TooFewEvents { need: usize, got: usize },
    #[error("invalid generator settings: {0}")]
    InvalidSpec(String),
    #[error("invalid split fractions: train {train} + val {val} must be in (0, 1)")]
    InvalidFractions { train: f64, val: f64 },
    #[error("negative sampling pool is empty")]
    EmptyPool,
    #[error("event references node {node} but the log declares {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("event has {got} features, log declares {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("negative timestamp {0}")]
    NegativeTimestamp(f64),
}

/// Dense non-negative node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One timestamped interaction. `seq` is the position in the source file or
/// generator output and breaks ties between equal timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub features: Vec<f64>,
    pub label: Option<bool>,
    pub seq: u32,
}

/// A log of events sorted by `(t, seq)`, with fixed node count and feature
/// width.
#[derive(Debug, Clone)]
pub struct EventLog {
    events: Vec<EdgeEvent>,
    num_nodes: usize,
    feat_dim: usize,
}

impl EventLog {
    /// Validates and stably sorts the events by `(t, seq)`. Events listed in
    /// file order with equal timestamps keep that order because `seq` is
    /// assigned before sorting.
    pub fn from_events(
        mut events: Vec<EdgeEvent>,
        num_nodes: usize,
        feat_dim: usize,
    ) -> Result<Self, GraphError> {
        if events.is_empty() {
            return Err(GraphError::EmptyLog);
        }
        for ev in &events {
            for node in [ev.src, ev.dst] {
                if node.idx() >= num_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        node: node.idx(),
                        num_nodes,
                    });
                }
            }
            if ev.features.len() != feat_dim {
                return Err(GraphError::FeatureWidth {
                    expected: feat_dim,
                    got: ev.features.len(),
                });
            }
            if !(ev.t >= 0.0) {
                return Err(GraphError::NegativeTimestamp(ev.t));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.seq.cmp(&b.seq)));
        Ok(Self {
            events,
            num_nodes,
            feat_dim,
        })
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn view(&self) -> LogView<'_> {
        LogView {
            events: &self.events,
            num_nodes: self.num_nodes,
            feat_dim: self.feat_dim,
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> LogView<'_> {
        LogView {
            events: &self.events[range],
            num_nodes: self.num_nodes,
            feat_dim: self.feat_dim,
        }
    }
}

/// Borrowed window over an [`EventLog`].
#[derive(Debug, Clone, Copy)]
pub struct LogView<'a> {
    pub events: &'a [EdgeEvent],
    pub num_nodes: usize,
    pub feat_dim: usize,
}

impl<'a> LogView<'a> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Materializes the view as an owned log (events keep their `seq`).
    pub fn to_owned_log(&self) -> Result<EventLog, GraphError> {
        EventLog::from_events(self.events.to_vec(), self.num_nodes, self.feat_dim)
    }
}
