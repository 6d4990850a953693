//! Training, evaluation, and experiment drivers built on top of the model.

pub mod eval;
pub mod metrics;
pub mod nodeclass;
pub mod sweep;
pub mod train;

use thiserror::Error;

use crate::graph::GraphError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error("{0}")]
    Invalid(String),
}
