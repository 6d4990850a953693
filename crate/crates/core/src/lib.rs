//! Temporal graph learning with two complementary node-state streams: a
//! recurrent memory updated from interaction messages, and decaying
//! trajectory features built on learnable node identities. Both fuse into
//! attention-based embeddings for link prediction and node classification
//! on timestamped event logs.

pub mod checkpoint;
pub mod embedding;
pub mod expressiveness;
pub mod graph;
pub mod memory;
pub mod model;
pub mod tasks;
pub mod tensor;
pub mod trajectory;

pub use embedding::{EmbedCache, EmbeddingConfig, TrajectoryMode};
pub use graph::{EdgeEvent, EventLog, NodeId};
pub use model::{BatchVars, GraphContext, Model, ModelConfig};
pub use tensor::tape::{Tape, Var};
pub use tensor::params::ParameterSet;
pub use tensor::Tensor;
pub use trajectory::TeParams;
