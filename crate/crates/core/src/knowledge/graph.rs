//! Multi-modal cluster similarity and threshold-graph merging.

use serde::{Deserialize, Serialize};

use super::KnowledgeError;
use crate::mapping::MappingResult;
use crate::tensorio::{dot, EmbeddingMatrix};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.8;

/// Cluster-level similarity graph. Matrices are `k x k`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMergeGraph {
    pub k: usize,
    pub alpha: f64,
    pub r_vis: Vec<f64>,
    pub r_text: Vec<f64>,
    pub r_fused: Vec<f64>,
    /// Set by [`merge_clusters`].
    pub merge_threshold: Option<f64>,
    pub adjacency: Vec<bool>,
    pub components: Vec<Vec<usize>>,
}

impl ConceptMergeGraph {
    pub fn fused(&self, i: usize, j: usize) -> f64 {
        self.r_fused[i * self.k + j]
    }
}

/// Cosine similarity matrix of unit rows: symmetric with an exact unit
/// diagonal.
pub fn cosine_matrix(m: &EmbeddingMatrix) -> Vec<f64> {
    let k = m.rows();
    let mut r = vec![0.0; k * k];
    for i in 0..k {
        r[i * k + i] = 1.0;
        for j in i + 1..k {
            let s = dot(m.row(i), m.row(j));
            r[i * k + j] = s;
            r[j * k + i] = s;
        }
    }
    r
}

/// Elementwise `alpha * vis + (1 - alpha) * text`.
pub fn fuse_matrices(r_vis: &[f64], r_text: &[f64], alpha: f64) -> Vec<f64> {
    r_vis
        .iter()
        .zip(r_text)
        .map(|(&v, &t)| alpha * v + (1.0 - alpha) * t)
        .collect()
}

pub fn fuse_similarity(
    mapping: &MappingResult,
    alpha: f64,
) -> Result<ConceptMergeGraph, KnowledgeError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(KnowledgeError::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if !mapping.centroids.rows_have_unit_norm() || !mapping.text_centroids.rows_have_unit_norm() {
        return Err(KnowledgeError::Config("cluster centroids must be unit-norm".into()));
    }
    let r_vis = cosine_matrix(&mapping.centroids);
    let r_text = cosine_matrix(&mapping.text_centroids);
    let r_fused = fuse_matrices(&r_vis, &r_text, alpha);
    Ok(ConceptMergeGraph {
        k: mapping.k,
        alpha,
        r_vis,
        r_text,
        r_fused,
        merge_threshold: None,
        adjacency: Vec::new(),
        components: Vec::new(),
    })
}

/// Connected components of an undirected `k x k` adjacency matrix found by
/// iterative depth-first search. Members are sorted ascending and
/// components are ordered by their smallest member.
pub fn connected_components(k: usize, adjacency: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; k];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for root in 0..k {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        stack.push(root);
        let mut members = Vec::new();
        while let Some(u) = stack.pop() {
            members.push(u);
            for v in 0..k {
                if !seen[v] && (adjacency[u * k + v] || adjacency[v * k + u]) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// Thresholds the fused similarity (`r > threshold`, off-diagonal only) and
/// stores the adjacency and components on the graph.
pub fn merge_clusters(graph: &mut ConceptMergeGraph, merge_threshold: f64) -> Vec<Vec<usize>> {
    let k = graph.k;
    let mut adjacency = vec![false; k * k];
    for i in 0..k {
        for j in 0..k {
            adjacency[i * k + j] = i != j && graph.r_fused[i * k + j] > merge_threshold;
        }
    }
    let components = connected_components(k, &adjacency);
    graph.merge_threshold = Some(merge_threshold);
    graph.adjacency = adjacency;
    graph.components = components.clone();
    components
}
