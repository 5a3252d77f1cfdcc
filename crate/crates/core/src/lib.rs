//! Region embeddings for hierarchies and normalized EL ontologies.
//!
//! Nodes are embedded as balls or axis-aligned boxes. A pair `(u, v)` is
//! scored by the energy `d_bd(u, v) + λ·d_dep(u, v)`: the boundary
//! dissimilarity measures how far the child region is from being contained
//! in the parent region, and the depth dissimilarity divides the parameter
//! distance by the region sizes so that small (deep) regions drift apart
//! quickly, mimicking distances in hyperbolic space.

pub mod cli;
pub mod dissim;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod ontology;
pub mod optim;
pub mod regions;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use regions::{BallRegion, BoxRegion, Region, RegionKind};
