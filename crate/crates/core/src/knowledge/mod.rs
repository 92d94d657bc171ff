//! Hierarchical concept/attribute knowledge construction.
//!
//! Over-clusters from [`crate::mapping`] are merged through a fused
//! visual/textual similarity graph; every merged component is abstracted
//! into a named concept by the LLM, and each concept then receives
//! uni-concept attributes plus bi-concept attributes shared with its most
//! similar neighbours.

mod base;
pub mod embed;
pub mod graph;
mod mining;
pub mod prompts;

use serde::{Deserialize, Serialize};

pub use base::{assemble_knowledge_base, KnowledgeBase, KnowledgeConfig};
pub use embed::{EmbedError, HashEmbedder, SidecarEmbedder, TextEmbedder};
pub use graph::{fuse_similarity, merge_clusters, ConceptMergeGraph};
pub use mining::{
    abstract_concepts, cumulative_prefix_len, embed_attributes, embed_concepts,
    merged_nouns, mine_bi_attributes, mine_uni_attributes, mine_uni_attributes_batch,
    select_neighbors, softmax_excluding, BiMining, PromptSettings,
};

use crate::llm::{LlmError, TemplateId};

pub const DEFAULT_NEIGHBOR_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MAX_NEIGHBORS: usize = 10;
pub const DEFAULT_LAMBDA1: usize = 2;
pub const DEFAULT_LAMBDA2: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("invalid knowledge parameter: {0}")]
    Config(String),
    #[error("LLM call for {template} {target:?} failed: {source}")]
    Llm {
        template: &'static str,
        target: Vec<usize>,
        #[source]
        source: LlmError,
    },
    #[error("could not parse {template} reply for {target:?}: {source}")]
    Parse {
        template: &'static str,
        target: Vec<usize>,
        #[source]
        source: prompts::ParseError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("attribute {index} references missing concept {owner}")]
    DanglingOwner { index: usize, owner: usize },
    #[error("knowledge base invariant violated: {0}")]
    Invariant(String),
    #[error("knowledge base json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A named concept abstracted from one merged component of clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub member_clusters: Vec<usize>,
    pub merged_nouns: Vec<String>,
    pub name: String,
    pub description: String,
    /// Unit embedding of `name`; empty until [`embed_concepts`].
    #[serde(default)]
    pub name_emb: Vec<f32>,
    /// Unit embedding of `description`; empty until [`embed_concepts`].
    #[serde(default)]
    pub desc_emb: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Uni,
    Bi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub text: String,
    pub kind: AttributeKind,
    /// One concept id for `uni`, two ascending ids for `bi`.
    pub owners: Vec<usize>,
    /// Unit embedding of `text`; empty until [`embed_attributes`].
    #[serde(default)]
    pub embedding: Vec<f32>,
}

impl AttributeRecord {
    pub fn touches(&self, concept: usize) -> bool {
        self.owners.contains(&concept)
    }
}

/// Neighbour choice for one concept: softmax of name-embedding similarity
/// over every other concept, then the shortest descending prefix whose
/// cumulative mass reaches the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborSelection {
    pub concept: usize,
    /// Other concept ids, aligned with `normalized_sims`.
    pub others: Vec<usize>,
    pub normalized_sims: Vec<f64>,
    /// Selected neighbours in descending similarity order.
    pub neighbor_ids: Vec<usize>,
    pub cumulative_threshold: f64,
    pub max_neighbors: usize,
}

/// Audit record of one LLM exchange. Whether the reply came from the cache
/// is tracked in the run manifest, so this record is identical between cold
/// and warm runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub template: TemplateId,
    /// Component id (concept) or concept ids (attributes).
    pub target: Vec<usize>,
    pub prompt_hash: String,
    pub response_hash: String,
}
