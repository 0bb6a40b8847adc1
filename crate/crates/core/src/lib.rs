//! Retrieval-augmented question answering that refuses when its knowledge
//! base does not support an answer.
//!
//! A question is embedded and matched against a curated knowledge base. A
//! threshold gate over confidence-penalized distances decides whether the
//! evidence is close enough; the model's own answerability judgment is
//! combined with it. Knowledge can be curated by hand or generated by the
//! enrichment agents and reviewed.

pub mod agents;
pub mod ake;
pub mod config;
pub mod evaluation;
pub mod knowledge_store;
pub mod llm_gateway;
pub mod pipeline;
pub mod refusal;
pub mod retrieval;
pub mod scalar;

pub use config::{AnswerSettings, Config};
pub use knowledge_store::{KnowledgeBase, KnowledgeEntry, Source};
pub use llm_gateway::{ChatProvider, Gateway, MockProvider, OpenAiProvider};
pub use pipeline::{Pipeline, QAResponse, RefusalCause, Status, Task};
pub use retrieval::{Embedder, EmbeddingCache, HashEmbedder};
pub use scalar::Scalar;

pub type RetrievalHit = retrieval::RetrievalHit<f64>;
pub type RetrievalSet = retrieval::RetrievalSet<f64>;
pub type VectorIndex = retrieval::VectorIndex<f64>;
pub type IndexHandle = retrieval::IndexHandle<f64>;
pub type HardPolicy = refusal::HardPolicy<f64>;
pub type Judgment = refusal::Judgment<f64>;
