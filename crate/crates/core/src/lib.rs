//! Differentially private Euclidean clustering on randomly shifted quadtrees.
//!
//! The pipeline embeds a dataset into a hierarchically separated tree,
//! privatizes per-cell counts with the Laplace mechanism, and solves k-median
//! (or k-means) exactly in the tree metric by dynamic programming. The [`mpc`]
//! module replays the same computation on a simulated round-synchronous
//! cluster and produces bitwise identical output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod kmeans;
pub mod kmedian;
pub mod median;
pub mod mpc;
pub mod privacy;
pub mod quadtree;
pub mod rng;

pub use cost::{clustering_cost, Power, Solution};
pub use dataset::{normalize, Dataset, Normalization};
pub use error::{Error, Result};
pub use privacy::{Privacy, PrivacyBudget};
pub use quadtree::{Quadtree, TreeConfig, TreeGeometry};
pub use rng::RngStream;
