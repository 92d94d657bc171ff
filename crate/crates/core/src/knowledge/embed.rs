//! String-to-vector providers for concept names, descriptions and attributes.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::tensorio::{self, EmbeddingMatrix, TensorIoError};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("no embedding for {0:?} in the string sidecar")]
    Missing(String),
    #[error("embedding for {text:?} has zero norm")]
    ZeroNorm { text: String },
    #[error("sidecar has {strings} strings but {rows} embedding rows")]
    Misaligned { strings: usize, rows: usize },
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

/// Maps text to a unit vector of a fixed dimension.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

pub(crate) fn normalized(mut v: Vec<f64>, text: &str) -> Result<Vec<f32>, EmbedError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(EmbedError::ZeroNorm {
            text: text.to_string(),
        });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v.into_iter().map(|x| x as f32).collect())
}

/// Deterministic bag-of-words hash projection.
///
/// Each lowercase alphanumeric token seeds a Gaussian vector; a string embeds
/// to the normalized sum of its token vectors, so strings sharing words land
/// close together. Strings without tokens hash as a whole.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        for a in acc.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *a += g;
        }
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let lower = text.to_lowercase();
        let mut acc = vec![0.0f64; self.dim];
        let mut any = false;
        for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            self.token_vector(tok, &mut acc);
            any = true;
        }
        if !any {
            self.token_vector(&lower, &mut acc);
        }
        normalized(acc, text)
    }
}

/// Exact-match lookup into a string list plus an aligned embedding matrix,
/// as written by the export tool.
#[derive(Clone, Debug)]
pub struct SidecarEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl SidecarEmbedder {
    pub fn new(strings: &[String], embeddings: &EmbeddingMatrix) -> Result<Self, EmbedError> {
        if strings.len() != embeddings.rows() {
            return Err(EmbedError::Misaligned {
                strings: strings.len(),
                rows: embeddings.rows(),
            });
        }
        let table = strings
            .iter()
            .zip(embeddings.iter_rows())
            .map(|(s, r)| (s.clone(), r.to_vec()))
            .collect();
        Ok(SidecarEmbedder {
            dim: embeddings.dim(),
            table,
        })
    }

    pub fn load(strings: &Path, embeddings: &Path) -> Result<Self, EmbedError> {
        let nouns = tensorio::read_nouns(strings)?;
        let m = tensorio::read_embeddings(embeddings)?;
        Self::new(nouns.nouns(), &m)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TextEmbedder for SidecarEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let v = self
            .table
            .get(text)
            .ok_or_else(|| EmbedError::Missing(text.to_string()))?;
        normalized(v.iter().map(|&x| f64::from(x)).collect(), text)
    }
}
