//! A small reverse-mode engine for point networks.
//!
//! Values are `f64` throughout. [`graph::Graph`] records operations over
//! [`tensor::Tensor`]s, [`layers`] provides set abstraction and feature
//! propagation on top of the sampling [`kernels`], and [`optim`] holds Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod param;
pub mod replica;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, NodeId};
pub use layers::{FeaturePropagation, LayerKind, LayerSpec, Mlp, PointSet, SetAbstraction};
pub use optim::{AdamConfig, AdamState};
pub use param::{Gradients, ParamId, ParamSet, ParamTensor};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layer spec: {0}")]
    Spec(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("backward already ran on this graph; call reset first")]
    BackwardTwice,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
