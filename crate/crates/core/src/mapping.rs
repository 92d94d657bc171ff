//! Initial image-text mapping: over-cluster the images, then attach the
//! `top_k` highest-scoring nouns to every cluster centroid.

use serde::{Deserialize, Serialize};

use crate::kmeans::{self, KMeansConfig, KMeansError};
use crate::tensorio::{dot, EmbeddingMatrix, NounVocabulary, TensorIoError};

pub const DEFAULT_RATIO: usize = 300;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("dimension mismatch: images have dim {images}, nouns have dim {nouns}")]
    DimMismatch { images: usize, nouns: usize },
    #[error("need at least {top_k} nouns, have {available}")]
    TooFewNouns { top_k: usize, available: usize },
    #[error("need at least 2 images, have {0}")]
    TooFewImages(usize),
    #[error("invalid mapping parameter: {0}")]
    Config(String),
    #[error("{0} embeddings must be unit-norm")]
    NotNormalized(&'static str),
    #[error("selected nouns of cluster {0} have a zero mean embedding")]
    DegenerateTextCentroid(usize),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingResult {
    pub k: usize,
    /// Visual cluster centroids, `k x d`, unit-norm.
    pub centroids: EmbeddingMatrix,
    pub image_assignments: Vec<usize>,
    /// Per cluster, the selected noun indices in descending score order.
    pub noun_indices: Vec<Vec<usize>>,
    /// Per cluster, the noun strings aligned with `noun_indices`.
    pub noun_sets: Vec<Vec<String>>,
    /// Renormalized mean of each cluster's selected noun embeddings.
    pub text_centroids: EmbeddingMatrix,
}

/// Serializable index part of a [`MappingResult`]; the two centroid
/// matrices are stored separately in the binary embedding format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingIndex {
    pub k: usize,
    pub image_assignments: Vec<usize>,
    pub noun_indices: Vec<Vec<usize>>,
    pub noun_sets: Vec<Vec<String>>,
}

impl MappingResult {
    pub fn index(&self) -> MappingIndex {
        MappingIndex {
            k: self.k,
            image_assignments: self.image_assignments.clone(),
            noun_indices: self.noun_indices.clone(),
            noun_sets: self.noun_sets.clone(),
        }
    }

    pub fn from_parts(
        index: MappingIndex,
        centroids: EmbeddingMatrix,
        text_centroids: EmbeddingMatrix,
    ) -> Result<Self, MappingError> {
        if centroids.rows() != index.k
            || text_centroids.rows() != index.k
            || index.noun_indices.len() != index.k
            || index.noun_sets.len() != index.k
        {
            return Err(MappingError::Config(format!(
                "mapping parts disagree on k = {}",
                index.k
            )));
        }
        Ok(MappingResult {
            k: index.k,
            centroids,
            image_assignments: index.image_assignments,
            noun_indices: index.noun_indices,
            noun_sets: index.noun_sets,
            text_centroids,
        })
    }
}

/// Over-clustering size: `max(2, round(n_images / ratio))`, capped at `n_images`.
pub fn cluster_count(n_images: usize, ratio: usize) -> usize {
    let k = ((n_images as f64) / (ratio as f64)).round() as usize;
    k.max(2).min(n_images)
}

/// Indices of the `top_k` largest scores, descending; equal scores keep the
/// lower index first.
pub fn top_k_indices(scores: &[f64], top_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if top_k < idx.len() {
        idx.select_nth_unstable_by(top_k, cmp);
        idx.truncate(top_k);
    }
    idx.sort_by(cmp);
    idx
}

pub fn build_mapping(
    images: &EmbeddingMatrix,
    nouns: &NounVocabulary,
    noun_embs: &EmbeddingMatrix,
    ratio: usize,
    top_k: usize,
    seed: u64,
) -> Result<MappingResult, MappingError> {
    let k = cluster_count(images.rows(), ratio.max(1));
    build_mapping_with(images, nouns, noun_embs, KMeansConfig::new(k, seed), top_k)
}

/// [`build_mapping`] with an explicit k-means configuration.
pub fn build_mapping_with(
    images: &EmbeddingMatrix,
    nouns: &NounVocabulary,
    noun_embs: &EmbeddingMatrix,
    kmeans_config: KMeansConfig,
    top_k: usize,
) -> Result<MappingResult, MappingError> {
    if top_k == 0 {
        return Err(MappingError::Config("top_k must be >= 1".into()));
    }
    if images.dim() != noun_embs.dim() {
        return Err(MappingError::DimMismatch {
            images: images.dim(),
            nouns: noun_embs.dim(),
        });
    }
    nouns.check_aligned(noun_embs)?;
    if noun_embs.rows() < top_k {
        return Err(MappingError::TooFewNouns {
            top_k,
            available: noun_embs.rows(),
        });
    }
    if images.rows() < 2 {
        return Err(MappingError::TooFewImages(images.rows()));
    }
    if !images.rows_have_unit_norm() {
        return Err(MappingError::NotNormalized("image"));
    }
    if !noun_embs.rows_have_unit_norm() {
        return Err(MappingError::NotNormalized("noun"));
    }

    let fitted = kmeans::fit(images, &kmeans_config)?;
    let k = kmeans_config.k;
    let dim = images.dim();

    let mut noun_indices = Vec::with_capacity(k);
    let mut noun_sets = Vec::with_capacity(k);
    let mut text_values = Vec::with_capacity(k * dim);
    for p in 0..k {
        let mu = fitted.centroids.row(p);
        let scores: Vec<f64> = noun_embs.iter_rows().map(|t| dot(mu, t)).collect();
        let selected = top_k_indices(&scores, top_k);

        let mut mean = vec![0.0f64; dim];
        for &j in &selected {
            for (m, &v) in mean.iter_mut().zip(noun_embs.row(j)) {
                *m += f64::from(v);
            }
        }
        let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(MappingError::DegenerateTextCentroid(p));
        }
        text_values.extend(mean.iter().map(|v| (v / n) as f32));
        noun_sets.push(selected.iter().map(|&j| nouns.get(j).to_string()).collect());
        noun_indices.push(selected);
    }

    Ok(MappingResult {
        k,
        centroids: fitted.centroids,
        image_assignments: fitted.assignments,
        noun_indices,
        noun_sets,
        text_centroids: EmbeddingMatrix::new(k, dim, text_values, true)?,
    })
}
