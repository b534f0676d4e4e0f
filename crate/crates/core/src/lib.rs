//! Graph tensors for chemistry: encoding molecules, proteins, reaction
//! networks and process flowsheets as graphs, plus feature baselines and
//! message-passing neural networks trained on them.

pub mod baselines;
pub mod bench;
pub mod encode;
pub mod error;
pub mod featurize;
pub mod fixtures;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result, Shape};
pub use graph::{Connectivity, GraphTensor};
pub use tensor::{concat_cols, concat_rows, hstack, Aggregator, Tensor};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/graph-tensors.md")]
    pub struct GraphTensors;
    #[doc = include_str!("../../../book/src/building-graphs.md")]
    pub struct BuildingGraphs;
    #[doc = include_str!("../../../book/src/featurization.md")]
    pub struct Featurization;
    #[doc = include_str!("../../../book/src/baselines.md")]
    pub struct Baselines;
    #[doc = include_str!("../../../book/src/neural-networks.md")]
    pub struct NeuralNetworks;
    #[doc = include_str!("../../../book/src/message-passing.md")]
    pub struct MessagePassing;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
