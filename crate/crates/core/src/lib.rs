//! Fair node classification with graph convolutional networks.
//!
//! Training combines three pieces: edge injection that links same-label
//! nodes across sensitive groups, a learned neighbor sampler that mixes
//! feature similarity with group rarity, and a demographic-parity penalty on
//! the classifier output.

pub mod compgraph;
pub mod datagen;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod injector;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod suite;
pub mod tape;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{AttributedGraph, DataSplit};
pub use tensor::DenseTensor;
