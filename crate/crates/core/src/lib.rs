//! Generation, inference and classification of two-block network structure
//! under the stochastic block model and its degree-corrected variant.
//!
//! The crate separates bipartite organisation from degree-driven
//! core-periphery artefacts by fitting both ensembles with belief
//! propagation and comparing the learned affinity orderings.

// block-index loops read closer to the matrix algebra than iterator chains
#![allow(clippy::needless_range_loop)]

pub mod bp;
pub mod classify;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod graph;
pub mod ingest;
pub mod likelihood;
pub mod model;

pub use error::{Error, Result};
pub use graph::{Graph, SnapshotSeries};
pub use model::{AffinityMatrix, Assignment, DegreeCorrections, ThetaDistribution};
