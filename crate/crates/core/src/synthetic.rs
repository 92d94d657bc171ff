//! Planted-structure fixture for offline experiments.
//!
//! Four latent classes in 64 dimensions. Classes 2 and 3 sit on their own
//! visual axes. Classes 0 and 1 share a visual centre and differ only by a
//! weak component along their class text direction, while a strong nuisance
//! axis splits each of them in two; visual k-means therefore separates the
//! nuisance halves instead of the classes. Class nouns point along the class
//! text directions, and [`PlantedEmbedder`] maps any string mentioning a
//! class noun onto that direction, so grounded knowledge recovers the split.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::knowledge::embed::{normalized, EmbedError, TextEmbedder};
use crate::pipeline::{BackendKind, EmbedderKind, PipelineConfig};
use crate::tensorio::{
    self, dot, EmbeddingMatrix, LabelVector, NounVocabulary, TensorIoError,
};

pub const NUM_CLASSES: usize = 4;
pub const DIM: usize = 64;

/// Text direction of class `c` is axis `c`.
const TEXT_AXIS: [usize; NUM_CLASSES] = [0, 1, 2, 3];
const SHARED_VISUAL_AXIS: usize = 12;
const NUISANCE_AXIS: usize = 13;
const OWN_VISUAL_AXIS: [usize; 2] = [10, 11];
/// Distractor nouns and unmatched strings live in dims `20..DIM`.
const FREE_DIMS: std::ops::Range<usize> = 20..DIM;

pub const CLASS_NOUNS: [[&str; 5]; NUM_CLASSES] = [
    ["heron", "egret", "stork", "crane", "ibis"],
    ["otter", "mink", "weasel", "ferret", "stoat"],
    ["tulip", "daisy", "orchid", "poppy", "violet"],
    ["anvil", "hammer", "chisel", "wrench", "pliers"],
];

const DISTRACTORS: [&str; 30] = [
    "cloud", "river", "bottle", "ladder", "candle", "pillow", "bucket", "saddle", "kettle",
    "mirror", "button", "carpet", "blanket", "pencil", "basket", "helmet", "lantern", "trumpet",
    "glacier", "harbor", "meadow", "canyon", "volcano", "tunnel", "bridge", "castle", "window",
    "garden", "rocket", "compass",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RescueParams {
    /// Images in each of the two visually overlapping classes.
    pub overlap_per_class: usize,
    /// Images in each of the two visually distinct classes.
    pub distinct_per_class: usize,
    /// Length of the class text component in classes 0 and 1.
    pub text_strength: f64,
    /// Length of the nuisance component in classes 0 and 1.
    pub nuisance: f64,
    /// Per-dimension Gaussian noise on images.
    pub noise: f64,
    /// Per-dimension Gaussian noise on class noun embeddings.
    pub noun_noise: f64,
    pub seed: u64,
}

impl Default for RescueParams {
    fn default() -> Self {
        RescueParams {
            overlap_per_class: 150,
            distinct_per_class: 50,
            text_strength: 0.4,
            nuisance: 0.8,
            noise: 0.08,
            noun_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RescueFixture {
    pub params: RescueParams,
    pub images: EmbeddingMatrix,
    pub labels: LabelVector,
    pub nouns: NounVocabulary,
    pub noun_embs: EmbeddingMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginReport {
    /// Cosine between the visual means of classes 0 and 1.
    pub overlap_cosine: f64,
    /// Distance between the two nuisance halves of class 0, over the
    /// distance between the class 0 and class 1 means.
    pub nuisance_to_class_ratio: f64,
    /// Largest cosine between two class noun centroids.
    pub max_noun_cross_cosine: f64,
    /// Fraction of class 0/1 images closer to their own text axis.
    pub text_axis_agreement: f64,
}

fn axis(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn mean_unit(rows: &[&[f32]]) -> Vec<f64> {
    let mut m = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        for (a, &b) in m.iter_mut().zip(*r) {
            *a += f64::from(b);
        }
    }
    let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    m.iter_mut().for_each(|x| *x /= n);
    m
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl RescueFixture {
    pub fn generate(params: RescueParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let gauss = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
            let g: f64 = StandardNormal.sample(rng);
            g * sigma
        };

        let mut order: Vec<(usize, bool)> = (0..NUM_CLASSES)
            .flat_map(|c| {
                let count = if c < 2 {
                    params.overlap_per_class
                } else {
                    params.distinct_per_class
                };
                (0..count).map(move |j| (c, j % 2 == 0))
            })
            .collect();
        order.shuffle(&mut rng);

        let mut rows = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for &(c, upper) in &order {
            let mut v = if c < 2 {
                let mut v = axis(SHARED_VISUAL_AXIS);
                v[TEXT_AXIS[c]] += params.text_strength;
                v[NUISANCE_AXIS] += if upper { params.nuisance } else { -params.nuisance };
                v
            } else {
                let mut v = axis(OWN_VISUAL_AXIS[c - 2]);
                v[TEXT_AXIS[c]] += params.text_strength;
                v
            };
            v.iter_mut().for_each(|x| *x += gauss(&mut rng, params.noise));
            rows.push(unit_f32(&v));
            labels.push(c);
        }

        let mut nouns = Vec::new();
        let mut noun_rows = Vec::new();
        for (c, words) in CLASS_NOUNS.iter().enumerate() {
            for w in words {
                let mut v = axis(TEXT_AXIS[c]);
                v.iter_mut().for_each(|x| *x += gauss(&mut rng, params.noun_noise));
                nouns.push(w.to_string());
                noun_rows.push(unit_f32(&v));
            }
        }
        for w in DISTRACTORS {
            let mut v = vec![0.0; DIM];
            for x in &mut v[FREE_DIMS] {
                *x = gauss(&mut rng, 1.0);
            }
            nouns.push(w.to_string());
            noun_rows.push(unit_f32(&v));
        }

        RescueFixture {
            params,
            images: EmbeddingMatrix::from_rows(&rows).expect("finite rows"),
            labels: LabelVector::new(labels, NUM_CLASSES).expect("labels in range"),
            nouns: NounVocabulary::new(nouns).expect("plain nouns"),
            noun_embs: EmbeddingMatrix::from_rows(&noun_rows).expect("finite rows"),
        }
    }

    fn rows_where(&self, pred: impl Fn(usize, &[f32]) -> bool) -> Vec<&[f32]> {
        self.images
            .iter_rows()
            .zip(self.labels.labels())
            .filter(|(r, &l)| pred(l, r))
            .map(|(r, _)| r)
            .collect()
    }

    pub fn margins(&self) -> MarginReport {
        let c0 = mean_unit(&self.rows_where(|l, _| l == 0));
        let c1 = mean_unit(&self.rows_where(|l, _| l == 1));
        let up = mean_unit(&self.rows_where(|l, r| l == 0 && r[NUISANCE_AXIS] > 0.0));
        let down = mean_unit(&self.rows_where(|l, r| l == 0 && r[NUISANCE_AXIS] <= 0.0));
        let overlap_cosine = c0.iter().zip(&c1).map(|(a, b)| a * b).sum();
        let nuisance_to_class_ratio = dist(&up, &down) / dist(&c0, &c1);

        let centroids: Vec<Vec<f64>> = (0..NUM_CLASSES)
            .map(|c| {
                let rows: Vec<&[f32]> = (c * 5..c * 5 + 5).map(|i| self.noun_embs.row(i)).collect();
                mean_unit(&rows)
            })
            .collect();
        let mut max_noun_cross_cosine = f64::NEG_INFINITY;
        for a in 0..NUM_CLASSES {
            for b in a + 1..NUM_CLASSES {
                let cos: f64 = centroids[a].iter().zip(&centroids[b]).map(|(x, y)| x * y).sum();
                max_noun_cross_cosine = max_noun_cross_cosine.max(cos);
            }
        }

        let pair = self.rows_where(|l, _| l < 2);
        let agree = self
            .images
            .iter_rows()
            .zip(self.labels.labels())
            .filter(|(_, &l)| l < 2)
            .filter(|(r, &l)| r[TEXT_AXIS[l]] > r[TEXT_AXIS[1 - l]])
            .count();
        MarginReport {
            overlap_cosine,
            nuisance_to_class_ratio,
            max_noun_cross_cosine,
            text_axis_agreement: agree as f64 / pair.len() as f64,
        }
    }

    /// Checks that the planted structure is present: classes 0 and 1 overlap
    /// visually (nuisance split dominates the class split) while their nouns
    /// and text components separate them.
    pub fn verify_margins(&self) -> Result<MarginReport, String> {
        let m = self.margins();
        if m.overlap_cosine < 0.7 {
            return Err(format!("classes 0/1 not overlapping: cosine {:.3}", m.overlap_cosine));
        }
        if m.nuisance_to_class_ratio < 1.5 {
            return Err(format!(
                "nuisance split too weak: ratio {:.3}",
                m.nuisance_to_class_ratio
            ));
        }
        if m.max_noun_cross_cosine > 0.3 {
            return Err(format!(
                "class nouns not separated: cosine {:.3}",
                m.max_noun_cross_cosine
            ));
        }
        if m.text_axis_agreement < 0.9 {
            return Err(format!(
                "text component not planted: agreement {:.3}",
                m.text_axis_agreement
            ));
        }
        Ok(m)
    }

    pub fn embedder(&self) -> PlantedEmbedder {
        PlantedEmbedder
    }

    /// Writes embeddings, nouns and labels into `dir` with the standard
    /// file names.
    pub fn write_to(&self, dir: &Path) -> Result<FixturePaths, TensorIoError> {
        std::fs::create_dir_all(dir).map_err(|source| TensorIoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let paths = FixturePaths {
            image_embeddings: dir.join("images.kecemb"),
            noun_embeddings: dir.join("nouns.kecemb"),
            nouns: dir.join("nouns.txt"),
            labels: dir.join("labels.txt"),
        };
        tensorio::write_embeddings(&self.images, &paths.image_embeddings)?;
        tensorio::write_embeddings(&self.noun_embs, &paths.noun_embeddings)?;
        tensorio::write_nouns(&self.nouns, &paths.nouns)?;
        tensorio::write_labels(&self.labels, &paths.labels)?;
        Ok(paths)
    }
}

/// Softmax temperature used with the fixture. Image-to-concept cosines here
/// stay near 0.3, so the default temperature of 1 leaves the concept
/// attention almost uniform.
pub const RESCUE_TAU: f64 = 0.05;
/// Images per over-cluster; 400 images give 25 clusters.
pub const RESCUE_RATIO: usize = 16;

/// Pipeline settings for running the fixture offline with the mock LLM.
pub fn rescue_config(paths: &FixturePaths, output_dir: &Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        ratio: RESCUE_RATIO,
        tau: RESCUE_TAU,
        seed,
        embedder: EmbedderKind::Planted,
        final_k: Some(NUM_CLASSES),
        ..PipelineConfig::default()
    };
    cfg.paths.image_embeddings = paths.image_embeddings.clone();
    cfg.paths.noun_embeddings = paths.noun_embeddings.clone();
    cfg.paths.nouns = paths.nouns.clone();
    cfg.paths.labels = Some(paths.labels.clone());
    cfg.paths.output_dir = output_dir.to_path_buf();
    cfg.llm.backend = BackendKind::Mock;
    cfg
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixturePaths {
    pub image_embeddings: PathBuf,
    pub noun_embeddings: PathBuf,
    pub nouns: PathBuf,
    pub labels: PathBuf,
}

/// Text embedder for the fixture: the normalized sum of the text axes of
/// every class whose noun appears in the string. Strings naming no class
/// noun hash into the distractor dimensions.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlantedEmbedder;

impl TextEmbedder for PlantedEmbedder {
    fn dim(&self) -> usize {
        DIM
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0f64; DIM];
        let mut hit = false;
        for (c, words) in CLASS_NOUNS.iter().enumerate() {
            if words.iter().any(|w| lower.contains(w)) {
                v[TEXT_AXIS[c]] += 1.0;
                hit = true;
            }
        }
        if !hit {
            let seed: [u8; 32] = sha2::Digest::finalize(
                <sha2::Sha256 as sha2::Digest>::new_with_prefix(lower.as_bytes()),
            )
            .into();
            let mut rng = ChaCha8Rng::from_seed(seed);
            for x in &mut v[FREE_DIMS] {
                *x = rng.random::<f64>() - 0.5;
            }
        }
        normalized(v, text)
    }
}

/// Cosine between the text axes two strings resolve to; a convenience for
/// inspecting fixture behaviour.
pub fn planted_similarity(a: &str, b: &str) -> Result<f64, EmbedError> {
    Ok(dot(&PlantedEmbedder.embed(a)?, &PlantedEmbedder.embed(b)?))
}
