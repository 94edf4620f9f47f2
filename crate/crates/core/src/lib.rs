//! Rewrite, retrieve and re-rank: an iterative query-rewriting retrieval
//! pipeline over a BM25 index, with model calls routed through a cached,
//! metered gateway.

pub mod corpus;
pub mod evaluation;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod relevance;
pub mod reranker;
pub mod rewriter;
pub mod scored;
pub mod sparse_index;
pub mod synthetic;

pub use scored::{ScoredDoc, ScoredList};
