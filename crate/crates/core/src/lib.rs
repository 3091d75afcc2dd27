//! Structure-only GNN pre-training on synthetic graphs.
//!
//! The crate generates degree-corrected block-model graph corpora, computes
//! structural node features and centrality targets, pre-trains a GCN-style
//! encoder with three self-supervised objectives (denoising link
//! reconstruction, centrality ranking, cluster preserving), and adapts the
//! pre-trained encoder to downstream node-, link-, and graph-level
//! classification behind a configurable fix-tune boundary.

pub mod adapt;
pub mod centrality;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod feat;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod seeds;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
