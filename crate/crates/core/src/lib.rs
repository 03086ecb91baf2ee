//! Adaptive heterogeneous graph neural networks for graphs with heterophily.
//!
//! The pipeline runs in stages:
//!
//! 1. [`dataset`] loads a typed graph; [`metapath`] enumerates meta-paths and
//!    measures how homophilous each induced graph is.
//! 2. [`propagate`] diffuses features and training labels along every
//!    meta-path once, before training, into a [`MessageCache`].
//! 3. [`model`] turns each meta-path's hop messages into one embedding with
//!    learnable hop weights, then fuses the per-path tokens with two levels
//!    of attention; [`train`] fits it with Adam.
//! 4. [`spectral`] checks the low-pass behaviour of the initial hop weights
//!    and [`synth`] rewires graphs to a requested homophily level.

pub mod autodiff;
pub mod dataset;
pub mod dense;
pub mod graph;
pub mod metapath;
pub mod model;
pub mod propagate;
pub mod sparse;
pub mod spectral;
pub mod synth;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use dataset::{load_dataset, save_dataset, DatasetError};
pub use dense::DenseMatrix;
pub use graph::{GraphError, GraphParts, HeteroGraph, Schema, Split};
pub use metapath::{enumerate_metapaths, induced_adjacency, MetaPath, MetaPathError};
pub use propagate::{MessageCache, PropagateError};
pub use sparse::{normalize_relation, spmm, spspmm, SparseMatrix};
