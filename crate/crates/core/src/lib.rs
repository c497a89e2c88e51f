//! Cross-domain pedestrian trajectory prediction with a transferable graph
//! neural network.
//!
//! The pipeline runs per scene: decentralized coordinates become per-frame
//! distance graphs, graph attention refines each adjacency, a three-layer
//! GCN encodes the observation window, an attention pooling step produces a
//! domain context vector for alignment, and a temporal convolution head
//! emits a bivariate Gaussian per future step.

pub mod adapt;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod numcore;
pub mod predict;
pub mod train;

pub use error::{Error, Result};
