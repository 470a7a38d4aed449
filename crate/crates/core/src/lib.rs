//! FoodEx2 coding pipeline: taxonomy-aware hard-negative mining, embedding-based
//! retrieval with reranking, multi-label facet classification, and IR/classification
//! evaluation.
//!
//! The crate decomposes FoodEx2 code prediction into three stages: base term
//! identification (retrieve + rerank), facet category classification, and facet
//! descriptor assignment (retrieve + rerank per category). Embedding and pair-scoring
//! backends are pluggable, so the pipeline runs end-to-end with deterministic
//! desk-scale backends or against remote encoder services over HTTP/JSON.

pub mod classify;
pub mod codec;
pub mod dataset;
pub mod embedding;
pub mod metrics;
pub mod mining;
pub mod pipeline;
pub mod remote;
pub mod rerank;
pub mod retrieval;
mod rng;
pub mod taxonomy;

pub use classify::{CategoryScores, CategoryScorer, LinearMultiLabel, Mlp, ScoreProvenance};
pub use codec::{CodecError, CodecOptions, FacetGroup, FoodCode};
pub use embedding::{DeterministicEmbedder, EmbeddingError, EmbeddingProvider, EmbeddingVector};
pub use metrics::{EvalReport, RelevanceJudgment};
pub use mining::{HardNegativeSet, MinedNegative, MiningConfig};
pub use pipeline::{Backends, Generator, Pipeline, PipelineConfig, PipelineError, Prediction};
pub use remote::{
    RemoteCategoryScorer, RemoteCrossEncoder, RemoteEmbedder, RemoteError, RemoteGenerator,
};
pub use rerank::{LexicalJaccard, PairScorer, RerankError};
pub use retrieval::{RankedCandidates, Stage, VectorIndex};
pub use taxonomy::{FacetCategoryId, HierarchyId, Taxonomy, TermCode};
