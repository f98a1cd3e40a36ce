//! Neuro-symbolic fuzzy-logic retrieval over dense embeddings.
//!
//! Scores compound queries (conjunction, negation, disjunction over two or
//! three atoms) by combining per-component cosine similarities with
//! stability-aware operators, optimizes query vectors on the unit sphere,
//! and evaluates the resulting rankings.

pub mod cli;
pub mod embedding_store;
pub mod error;
pub mod eval;
pub mod formula;
pub mod geometric;
pub mod operators;
pub mod pipeline;
pub mod sqo;

pub use embedding_store::{cosine, load_embeddings, EmbeddingMatrix, ScoreScale};
pub use error::{NsflError, Result};
pub use formula::{FormulaKind, LogicalFormula, QueryPack};
pub use operators::{delta, minchoice, score_formula, OperatorConfig, ScoreBundle};
pub use pipeline::{run_query, Method, PipelineConfig, RankedResult, Stage};
pub use sqo::{optimize, SqoConfig, SqoResult};
