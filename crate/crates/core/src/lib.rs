//! Knowledge-enhanced clustering of image embeddings.
//!
//! Images are over-clustered and each cluster is described by its nearest
//! nouns. Similar clusters are merged, and a language model names a concept
//! for each merged group and lists attributes of single concepts and of
//! neighbouring concept pairs. The resulting knowledge base is grounded on
//! every image by attention, and the enhanced feature, concatenated with the
//! visual one, is clustered with spherical k-means.
//!
//! The stages live in [`pipeline`]; every step is also usable on its own:
//!
//! - [`tensorio`]: binary embedding matrices, noun lists, labels
//! - [`kmeans`]: spherical k-means
//! - [`mapping`]: image to noun mapping
//! - [`knowledge`]: merge graph, concept and attribute mining
//! - [`llm`]: cached, retrying chat-completion client and an offline mock
//! - [`grounding`]: concept attention and enhanced features
//! - [`eval`]: NMI, ACC, ARI and zero-shot assignment
//! - [`synthetic`]: planted fixture used by tests and examples

pub mod eval;
pub mod grounding;
pub mod kmeans;
pub mod knowledge;
pub mod llm;
pub mod mapping;
pub mod pipeline;
pub mod synthetic;
pub mod tensorio;

pub use pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};
