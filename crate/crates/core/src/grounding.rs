//! Knowledge grounding: attend each image over the concepts, instantiate
//! attributes on the image by elementwise product, and assemble the
//! knowledge-enhanced feature `kappa`.
//!
//! All matrices here are row-major `f64`; conversion to the `f32` file
//! format happens only at the edges.

use rayon::prelude::*;

use crate::knowledge::KnowledgeBase;
use crate::tensorio::{EmbeddingMatrix, TensorIoError};

pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum GroundingError {
    #[error("concept name and description are both disabled")]
    NoConceptSignal,
    #[error("tau must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("dimension mismatch: images have dim {images}, knowledge has dim {knowledge}")]
    DimMismatch { images: usize, knowledge: usize },
    #[error("knowledge base has no concepts")]
    NoConcepts,
    #[error("concept {0} representation has zero norm")]
    ZeroConcept(usize),
    #[error("enhanced feature of image {0} has zero norm")]
    ZeroKappa(usize),
    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

/// Which knowledge components enter the enhanced feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundingFlags {
    pub use_name: bool,
    pub use_desc: bool,
    pub use_uni: bool,
    pub use_bi: bool,
    pub renormalize_kappa: bool,
}

impl Default for GroundingFlags {
    fn default() -> Self {
        GroundingFlags {
            use_name: true,
            use_desc: true,
            use_uni: true,
            use_bi: true,
            renormalize_kappa: true,
        }
    }
}

impl GroundingFlags {
    pub fn uses_attributes(&self) -> bool {
        self.use_uni || self.use_bi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundedFeatures {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    /// `m x dim` unit concept representations.
    pub zeta: Vec<f64>,
    /// `n x m`, rows sum to one.
    pub omega: Vec<f64>,
    /// `n x dim` attention-weighted concept feature.
    pub concept_feat: Vec<f64>,
    /// `n x dim` attention-weighted instantiated attribute feature.
    pub attr_feat: Vec<f64>,
    /// `n x dim` enhanced feature, `concept_feat + attr_feat`, optionally unit.
    pub kappa: Vec<f64>,
    pub kappa_normalized: bool,
}

impl GroundedFeatures {
    pub fn omega_row(&self, i: usize) -> &[f64] {
        &self.omega[i * self.m..(i + 1) * self.m]
    }

    pub fn kappa_row(&self, i: usize) -> &[f64] {
        &self.kappa[i * self.dim..(i + 1) * self.dim]
    }

    pub fn kappa_matrix(&self) -> Result<EmbeddingMatrix, GroundingError> {
        Ok(to_matrix(self.n, self.dim, &self.kappa, self.kappa_normalized)?)
    }

    pub fn omega_matrix(&self) -> Result<EmbeddingMatrix, GroundingError> {
        Ok(to_matrix(self.n, self.m, &self.omega, false)?)
    }
}

fn to_matrix(
    rows: usize,
    dim: usize,
    v: &[f64],
    normalized: bool,
) -> Result<EmbeddingMatrix, TensorIoError> {
    EmbeddingMatrix::new(rows, dim, v.iter().map(|&x| x as f32).collect(), normalized)
}

fn unit(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Unit concept representations: the sum of the enabled name and
/// description embeddings, renormalized. Returned `m x dim`.
pub fn concept_reprs(
    kb: &KnowledgeBase,
    use_name: bool,
    use_desc: bool,
) -> Result<Vec<f64>, GroundingError> {
    if !use_name && !use_desc {
        return Err(GroundingError::NoConceptSignal);
    }
    if kb.concepts.is_empty() {
        return Err(GroundingError::NoConcepts);
    }
    let d = kb.dim();
    let mut zeta = vec![0.0; kb.concepts.len() * d];
    for (q, (c, z)) in kb.concepts.iter().zip(zeta.chunks_mut(d)).enumerate() {
        for j in 0..d {
            let mut s = 0.0;
            if use_name {
                s += f64::from(c.name_emb[j]);
            }
            if use_desc {
                s += f64::from(c.desc_emb[j]);
            }
            z[j] = s;
        }
        if !unit(z) {
            return Err(GroundingError::ZeroConcept(q));
        }
    }
    Ok(zeta)
}

/// Softmax over concepts of `x_i . zeta_q / tau`, max-stabilized.
/// Returned `n x m`.
pub fn attention_weights(
    images: &EmbeddingMatrix,
    zeta: &[f64],
    m: usize,
    tau: f64,
) -> Result<Vec<f64>, GroundingError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GroundingError::BadTau(tau));
    }
    let d = images.dim();
    if m == 0 || zeta.len() != m * d {
        return Err(GroundingError::DimMismatch {
            images: d,
            knowledge: zeta.len().checked_div(m).unwrap_or(0),
        });
    }
    let mut omega = vec![0.0; images.rows() * m];
    omega
        .par_chunks_mut(m)
        .zip(images.values().par_chunks(d))
        .for_each(|(w, x)| {
            for (q, z) in zeta.chunks(d).enumerate() {
                w[q] = x.iter().zip(z).map(|(&a, &b)| f64::from(a) * b).sum::<f64>() / tau;
            }
            softmax_in_place(w);
        });
    Ok(omega)
}

pub(crate) fn softmax_in_place(w: &mut [f64]) {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    w.iter_mut().for_each(|v| *v = (*v - max).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
}

/// Mean attribute embedding of every concept over its enabled attribute
/// set; concepts without attributes get the zero vector. Returned `m x dim`.
pub fn attribute_means(kb: &KnowledgeBase, use_uni: bool, use_bi: bool) -> Vec<f64> {
    let d = kb.dim();
    let mut means = vec![0.0; kb.concepts.len() * d];
    for (q, row) in means.chunks_mut(d).enumerate() {
        let attrs = kb.attributes_of(q, use_uni, use_bi);
        if attrs.is_empty() {
            continue;
        }
        for a in &attrs {
            for (r, &e) in row.iter_mut().zip(&a.embedding) {
                *r += f64::from(e);
            }
        }
        let count = attrs.len() as f64;
        row.iter_mut().for_each(|r| *r /= count);
    }
    means
}

/// Per image and concept, the mean over the concept's attributes of
/// `x_i * xi` (elementwise). Returned `n x m x dim`; zero for concepts
/// without attributes.
pub fn instantiate_attributes(
    images: &EmbeddingMatrix,
    kb: &KnowledgeBase,
    use_uni: bool,
    use_bi: bool,
) -> Result<Vec<f64>, GroundingError> {
    let d = images.dim();
    if d != kb.dim() {
        return Err(GroundingError::DimMismatch {
            images: d,
            knowledge: kb.dim(),
        });
    }
    let m = kb.concepts.len();
    let sets: Vec<_> = (0..m).map(|q| kb.attributes_of(q, use_uni, use_bi)).collect();
    let mut out = vec![0.0; images.rows() * m * d];
    for (i, x) in images.iter_rows().enumerate() {
        for (q, attrs) in sets.iter().enumerate() {
            if attrs.is_empty() {
                continue;
            }
            let cell = &mut out[(i * m + q) * d..(i * m + q + 1) * d];
            for a in attrs {
                for j in 0..d {
                    cell[j] += f64::from(x[j]) * f64::from(a.embedding[j]);
                }
            }
            let count = attrs.len() as f64;
            cell.iter_mut().for_each(|v| *v /= count);
        }
    }
    Ok(out)
}

/// Grounds the knowledge base on every image.
///
/// The attribute feature is computed as `x_i * sum_q omega_iq m_q`, which
/// equals the attention-weighted sum of per-concept instantiated means
/// because the elementwise product is linear.
pub fn ground(
    images: &EmbeddingMatrix,
    kb: &KnowledgeBase,
    flags: GroundingFlags,
    tau: f64,
) -> Result<GroundedFeatures, GroundingError> {
    let d = images.dim();
    if d != kb.dim() {
        return Err(GroundingError::DimMismatch {
            images: d,
            knowledge: kb.dim(),
        });
    }
    let m = kb.concepts.len();
    let n = images.rows();
    let zeta = concept_reprs(kb, flags.use_name, flags.use_desc)?;
    let omega = attention_weights(images, &zeta, m, tau)?;
    let means = flags
        .uses_attributes()
        .then(|| attribute_means(kb, flags.use_uni, flags.use_bi));

    let mut concept_feat = vec![0.0; n * d];
    let mut attr_feat = vec![0.0; n * d];
    concept_feat
        .par_chunks_mut(d)
        .zip(attr_feat.par_chunks_mut(d))
        .zip(omega.par_chunks(m))
        .zip(images.values().par_chunks(d))
        .for_each(|(((c, a), w), x)| {
            for (q, &wq) in w.iter().enumerate() {
                for (cj, &zj) in c.iter_mut().zip(&zeta[q * d..(q + 1) * d]) {
                    *cj += wq * zj;
                }
                if let Some(means) = &means {
                    for (aj, &mj) in a.iter_mut().zip(&means[q * d..(q + 1) * d]) {
                        *aj += wq * mj;
                    }
                }
            }
            for (aj, &xj) in a.iter_mut().zip(x) {
                *aj *= f64::from(xj);
            }
        });

    let mut kappa: Vec<f64> = concept_feat.iter().zip(&attr_feat).map(|(c, a)| c + a).collect();
    if flags.renormalize_kappa {
        for (i, row) in kappa.chunks_mut(d).enumerate() {
            if !unit(row) {
                return Err(GroundingError::ZeroKappa(i));
            }
        }
    }
    Ok(GroundedFeatures {
        n,
        m,
        dim: d,
        zeta,
        omega,
        concept_feat,
        attr_feat,
        kappa,
        kappa_normalized: flags.renormalize_kappa,
    })
}

/// Row-wise `[x_i ; kappa_i]`. The left block is copied bit for bit.
pub fn concat_features(
    images: &EmbeddingMatrix,
    kappa: &EmbeddingMatrix,
) -> Result<EmbeddingMatrix, GroundingError> {
    if images.rows() != kappa.rows() {
        return Err(GroundingError::RowMismatch {
            left: images.rows(),
            right: kappa.rows(),
        });
    }
    let mut values = Vec::with_capacity(images.values().len() + kappa.values().len());
    for (x, k) in images.iter_rows().zip(kappa.iter_rows()) {
        values.extend_from_slice(x);
        values.extend_from_slice(k);
    }
    Ok(EmbeddingMatrix::new(
        images.rows(),
        images.dim() + kappa.dim(),
        values,
        false,
    )?)
}
