//! Tree-constrained graph generation.
//!
//! Edge probabilities from a generator are projected onto a minimum
//! spanning tree, and a selective-feature-suppression layer makes the
//! projected decision differentiable so the constraint can be trained
//! through. Around that core sit a small relation scorer with analytic
//! gradients, an L-system tree generator for synthetic data, and the
//! evaluation metrics (SMD, TOPO, tree rate).

pub mod assignment;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod lsystem;
pub mod metrics;
pub mod mst;
pub mod pairs;
pub mod raster;
pub mod scorer;
pub mod sfs;
pub mod train;
pub mod union_find;

pub use error::{Error, Result};
pub use graph::{Edge, EdgeDelta, EdgeSet, Membership, Point, SpatialGraph};
pub use mst::{project, project_mst, threshold_edges, EdgeProb, EdgeProbabilities, Projection};
pub use sfs::{sfs_backward, sfs_forward, sfs_layer, EdgeLogits, SfsConfig, SfsOutput};
