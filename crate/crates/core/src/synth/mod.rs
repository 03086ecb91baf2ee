//! Synthetic graphs with planted classes, and rewiring of existing graphs to
//! a requested homophily level.

mod pattern;
mod rewire;
mod toy;

pub use rewire::{rewire_to_homophily, RewireOutcome, RewireSpec};
pub use toy::{generate_toy, GeneratedToy, ToySpec, LINK_TYPE, TARGET_TYPE, THIRD_TYPE};

use thiserror::Error;

use crate::graph::GraphError;
use crate::metapath::MetaPathError;

/// Longest meta-path counted when measuring graph-level homophily.
pub const HOMOPHILY_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("target homophily must lie in [0, 1], got {0}")]
    TargetOutOfRange(f64),
    #[error("invalid synthesis request: {0}")]
    Spec(String),
    #[error("graph has no labeled target node")]
    NoLabels,
    #[error("no relation edge touches the target type, so homophily is undefined")]
    NoTargetEdges,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
}
