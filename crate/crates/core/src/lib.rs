//! Popularity-debiased message passing for graph-based collaborative filtering.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the whole training
//! pipeline: the bipartite interaction graph, a Zipf-skewed click generator,
//! the inverse-interaction and layer-wise edge weights, weighted LightGCN-style
//! propagation with an initial residual, BPR training with Adam, and an
//! all-ranking top-k evaluator with popular/niche breakdowns.
//!
//! File formats, configuration and the command line live in the `dpaa` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use graph::{Interaction, InteractionGraph, PopularitySplit};
pub use model::{EmbeddingTable, LayerStack, Mode, ModelConfig};
pub use weights::{IiwPlacement, PretrainedIiwCache, WeightPlan};
