//! Corpus handling, denoising pre-training data, iterative retrieval
//! augmentation, similarity bucketing, metrics and consensus fusion for
//! diagnosis generation over desensitized token-id corpora.
//!
//! Raw token ids are decimal strings in the corpus files. Rendered model
//! inputs live in vocabulary index space; predictions are mapped back to raw
//! ids before scoring.

pub mod bucketer;
pub mod corpus;
pub mod corruptor;
pub mod embedder;
pub mod ensemble;
pub mod error;
pub mod genadapter;
pub mod hash;
pub mod kbstore;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod vocab;

pub use bucketer::{BucketAssignment, BucketConfig, BucketMode};
pub use corpus::{Sample, SplitAssignment, SplitMode, TokenSeq};
pub use corruptor::{CorruptedPair, CorruptionSpec, MaskSchedule, MaskScope};
pub use embedder::{cosine, EmbeddingTable, EmbeddingVector, TfIdfEmbedder};
pub use ensemble::{CandidateSet, Fused};
pub use error::{Error, Result};
pub use genadapter::{GeneratorContract, Prediction};
pub use kbstore::{KeySource, KnowledgeBase, Match, RetrievalResult};
pub use metrics::{composite, CiderScorer, CiderVariant, EvalReport};
pub use pipeline::{PipelineConfig, PipelineError, RunReport};
pub use rng::SeededRng;
pub use vocab::{SpecialIds, Vocabulary};
