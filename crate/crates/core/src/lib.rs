//! Conversational passage search.
//!
//! The crate is organised as a pipeline of independent stages:
//!
//! * [`corpus`]: text analysis and inverted-index construction.
//! * [`retrieval`]: BM25 and query-likelihood (Jelinek-Mercer, Dirichlet) ranking.
//! * [`rewrite`]: conversational query rewriting (prefixing, union, coreference, seq2seq).
//! * [`embed`]: (query, passage) pair embeddings from a sidecar, a cache or a synthetic generator.
//! * [`rerank`]: linear, recurrent and memory-network re-ranking heads.
//! * [`train`]: training data construction, optimisation and cross-validation.
//! * [`eval`]: TREC I/O, ranking metrics, BLEU and analysis tables.
//! * [`pipeline`]: per-conversation orchestration of all of the above.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod rewrite;
pub mod sidecar;
pub mod train;

mod binio;

pub use error::{Error, Result};
