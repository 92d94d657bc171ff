use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeRecord, Concept, KnowledgeError, ProvenanceRecord};
use crate::tensorio::norm;

const UNIT_TOLERANCE: f64 = 1e-4;

/// Parameters the knowledge base was built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeConfig {
    pub alpha: f64,
    pub merge_threshold: f64,
    pub neighbor_cumulative_threshold: f64,
    pub max_neighbors: usize,
    pub lambda1: usize,
    pub lambda2: usize,
    pub use_uni_attr: bool,
    pub use_bi_attr: bool,
    pub model: String,
    pub temperature: f32,
    pub domain_hint: Option<String>,
}

/// Concepts, their attributes and the provenance of every LLM reply.
///
/// Serializes to JSON with a fixed key order; float fields use shortest
/// round-trip formatting, so equal bases produce identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub config: KnowledgeConfig,
    pub concepts: Vec<Concept>,
    pub attributes: Vec<AttributeRecord>,
    pub neighbor_pairs: Vec<[usize; 2]>,
    pub provenance: Vec<ProvenanceRecord>,
}

impl KnowledgeBase {
    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn dim(&self) -> usize {
        self.concepts.first().map_or(0, |c| c.name_emb.len())
    }

    /// The attribute set of concept `q`: its uni-concept attributes plus
    /// every bi-concept attribute of a pair that includes `q`, filtered by
    /// the two toggles.
    pub fn attributes_of(&self, q: usize, use_uni: bool, use_bi: bool) -> Vec<&AttributeRecord> {
        self.attributes
            .iter()
            .filter(|a| a.touches(q))
            .filter(|a| match a.kind {
                AttributeKind::Uni => use_uni,
                AttributeKind::Bi => use_bi,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let m = self.concepts.len();
        if m == 0 {
            return Err(KnowledgeError::Invariant("knowledge base has no concepts".into()));
        }
        let dim = self.dim();
        for (q, c) in self.concepts.iter().enumerate() {
            if c.id != q {
                return Err(KnowledgeError::Invariant(format!(
                    "concept at position {q} has id {}",
                    c.id
                )));
            }
            if c.name.trim().is_empty() || c.merged_nouns.is_empty() {
                return Err(KnowledgeError::Invariant(format!(
                    "concept {q} lacks a name or nouns"
                )));
            }
            for (what, v) in [("name", &c.name_emb), ("description", &c.desc_emb)] {
                if v.len() != dim || dim == 0 || (norm(v) - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(KnowledgeError::Invariant(format!(
                        "concept {q} {what} embedding is missing or not unit-norm"
                    )));
                }
            }
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if let Some(&owner) = a.owners.iter().find(|&&o| o >= m) {
                return Err(KnowledgeError::DanglingOwner { index: i, owner });
            }
            let arity_ok = match a.kind {
                AttributeKind::Uni => a.owners.len() == 1,
                AttributeKind::Bi => a.owners.len() == 2 && a.owners[0] < a.owners[1],
            };
            if !arity_ok {
                return Err(KnowledgeError::Invariant(format!(
                    "attribute {i} has owners {:?} inconsistent with kind {:?}",
                    a.owners, a.kind
                )));
            }
            if a.text.trim().is_empty()
                || a.embedding.len() != dim
                || (norm(&a.embedding) - 1.0).abs() > UNIT_TOLERANCE
            {
                return Err(KnowledgeError::Invariant(format!(
                    "attribute {i} has empty text or a bad embedding"
                )));
            }
        }
        if let Some(p) = self.neighbor_pairs.iter().find(|p| p[0] >= m || p[1] >= m) {
            return Err(KnowledgeError::Invariant(format!("pair {p:?} out of range")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, KnowledgeError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let kb: KnowledgeBase = serde_json::from_str(text)?;
        kb.validate()?;
        Ok(kb)
    }
}

/// Combines embedded concepts and attributes into a validated base.
/// Attribute order is uni records, then bi records.
pub fn assemble_knowledge_base(
    config: KnowledgeConfig,
    concepts: Vec<Concept>,
    uni: Vec<AttributeRecord>,
    bi: Vec<AttributeRecord>,
    neighbor_pairs: Vec<[usize; 2]>,
    provenance: Vec<ProvenanceRecord>,
) -> Result<KnowledgeBase, KnowledgeError> {
    let kb = KnowledgeBase {
        config,
        concepts,
        attributes: uni.into_iter().chain(bi).collect(),
        neighbor_pairs,
        provenance,
    };
    kb.validate()?;
    Ok(kb)
}
