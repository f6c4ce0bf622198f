//! Semi-supervised graph anomaly detection with generated outlier nodes.
//!
//! A two-layer GCN embeds the graph. For a few labeled normal nodes, an
//! outlier representation is generated from the node's ego network and
//! shaped by two losses: an affinity margin (outliers should agree less
//! with their neighbors than normal nodes do) and egocentric closeness
//! (outliers should stay near their anchor). A one-class head trained on
//! normals vs. outliers then scores unlabeled nodes.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod outliers;
pub mod trainer;

pub use error::{GgadError, Result};
