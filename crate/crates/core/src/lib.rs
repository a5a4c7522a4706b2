//! Pairwise neural learning to rank.
//!
//! The crate bundles two rankers trained with the RankNet pairwise
//! cross-entropy objective:
//!
//! * a feature-based RankNet scoring precomputed query-document vectors, and
//! * ConvRankNet, where a Siamese convolutional encoder turns raw query and
//!   document text into the feature vectors fed to the same RankNet.
//!
//! Around them sit dataset parsers ([`data`]), NDCG evaluation and the
//! Wilcoxon signed-rank test ([`eval`]), and the ordering machinery showing
//! that a per-document score yields the same total order as the pairwise
//! comparator ([`ordering`]).

pub mod cli;
pub mod data;
pub mod embeddings;
pub mod encoder;
mod error;
pub mod eval;
pub mod model_file;
pub mod numerics;
pub mod ordering;
pub mod ranker;
pub mod synthetic;

pub use error::{Error, Result};
