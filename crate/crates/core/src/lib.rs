//! Estimation of conformal geodesic distances from finite samples.
//!
//! A sample `X` of a domain `M` is turned into a weighted neighborhood graph
//! whose edge weights integrate a conformal factor `f` along segments;
//! shortest paths in that graph estimate the `f`-weighted geodesic metric.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domains;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod factor;
pub mod geometry;
pub mod graph;
mod json;
pub mod quadrature;
pub mod selftest;
pub mod shortest_path;

pub use error::{Error, Result};
pub use factor::{
    conformal_reach_bound, evaluate_dtm, perturb_factor, ConformalFactor, Density, DtmParams, FactorConfig,
};
pub use geometry::{euclidean_distance, hausdorff_distance, PointCloud};
pub use graph::{
    build_ball_graph, build_graph, build_knn_graph, edge_weight, is_subgraph, sandwich_failure_bound, sandwich_radii,
    GraphKind, Resolution, WeightedGraph,
};
