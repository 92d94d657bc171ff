//! Clustering metrics (NMI, ARI, Hungarian-matched accuracy) and the
//! zero-shot assignment baseline.

mod hungarian;

use serde::{Deserialize, Serialize};

pub use hungarian::min_cost_assignment;

use crate::tensorio::{dot, EmbeddingMatrix, LabelVector, TensorIoError};

/// Prompt templates averaged by the exporter into one text embedding per
/// class for the zero-shot baseline. `[class]` is replaced by the name.
pub const SIMPLE_IMAGENET_TEMPLATES: [&str; 7] = [
    "itap of a [class].",
    "a bad photo of the [class].",
    "a origami [class].",
    "a photo of the large [class].",
    "a [class] in a video game.",
    "art of the [class].",
    "a photo of the small [class].",
];

pub fn class_prompts(class_name: &str) -> Vec<String> {
    SIMPLE_IMAGENET_TEMPLATES
        .iter()
        .map(|t| t.replace("[class]", class_name))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("label vectors differ in length: {pred} predictions, {truth} ground truth")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least {needed} points, have {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("dimension mismatch: images have dim {images}, classes have dim {classes}")]
    DimMismatch { images: usize, classes: usize },
    #[error("class embeddings must be unit-norm")]
    NotNormalized,
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

/// Counts of (predicted cluster, true class) co-occurrences, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), rows * cols, "counts must be rows x cols");
        let n = counts.iter().sum();
        ContingencyTable {
            rows,
            cols,
            counts,
            n,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols + c]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.cols.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut s = vec![0; self.cols];
        for row in self.counts.chunks(self.cols.max(1)) {
            for (a, &b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        s
    }
}

pub fn contingency(pred: &LabelVector, truth: &LabelVector) -> Result<ContingencyTable, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let (rows, cols) = (pred.num_classes(), truth.num_classes());
    let mut counts = vec![0u64; rows * cols];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        counts[p * cols + t] += 1;
    }
    Ok(ContingencyTable::from_counts(rows, cols, counts))
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn occupied(sums: &[u64]) -> usize {
    sums.iter().filter(|&&c| c > 0).count()
}

/// Mutual information over the arithmetic mean of the two entropies.
/// Two single-cluster partitions score 1; exactly one scores 0.
pub fn nmi(table: &ContingencyTable) -> f64 {
    if table.n == 0 {
        return 0.0;
    }
    let n = table.n as f64;
    let (rs, cs) = (table.row_sums(), table.col_sums());
    match (occupied(&rs) <= 1, occupied(&cs) <= 1) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut mi = 0.0;
    for r in 0..table.rows {
        for c in 0..table.cols {
            let nij = table.get(r, c);
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (rs[r] as f64 * cs[c] as f64)).ln();
        }
    }
    let denom = 0.5 * (entropy(&rs, n) + entropy(&cs, n));
    (mi / denom).clamp(0.0, 1.0)
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari(table: &ContingencyTable) -> Result<f64, EvalError> {
    if table.n < 2 {
        return Err(EvalError::TooFewPoints {
            needed: 2,
            found: table.n as usize,
        });
    }
    let index: f64 = table.counts.iter().map(|&c| comb2(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(comb2).sum();
    let b: f64 = table.col_sums().into_iter().map(comb2).sum();
    let expected = a * b / comb2(table.n);
    let max = 0.5 * (a + b);
    if max == expected {
        // both partitions trivial in the same way, hence identical
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Best one-to-one matching of clusters to classes, as a fraction of points.
pub fn acc_hungarian(table: &ContingencyTable) -> f64 {
    if table.n == 0 {
        return 0.0;
    }
    let size = table.rows.max(table.cols);
    let max = table.counts.iter().copied().max().unwrap_or(0) as f64;
    let mut cost = vec![max; size * size];
    for r in 0..table.rows {
        for c in 0..table.cols {
            cost[r * size + c] = max - table.get(r, c) as f64;
        }
    }
    let assignment = min_cost_assignment(size, &cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < table.rows && c < table.cols)
        .map(|(r, &c)| table.get(r, c))
        .sum();
    matched as f64 / table.n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
}

impl EvalReport {
    pub fn compute(pred: &LabelVector, truth: &LabelVector) -> Result<Self, EvalError> {
        let t = contingency(pred, truth)?;
        Ok(EvalReport {
            nmi: nmi(&t),
            acc: acc_hungarian(&t),
            ari: ari(&t)?,
        })
    }

    /// Single-line JSON record; four decimals unless `precise`.
    pub fn to_json_line(&self, precise: bool) -> String {
        if precise {
            serde_json::to_string(self).expect("plain floats serialize")
        } else {
            format!(
                "{{\"nmi\":{:.4},\"acc\":{:.4},\"ari\":{:.4}}}",
                self.nmi, self.acc, self.ari
            )
        }
    }
}

/// Nearest class embedding for every image; ties go to the lower class.
pub fn zero_shot_assign(
    images: &EmbeddingMatrix,
    class_text_embs: &EmbeddingMatrix,
) -> Result<LabelVector, EvalError> {
    if images.dim() != class_text_embs.dim() {
        return Err(EvalError::DimMismatch {
            images: images.dim(),
            classes: class_text_embs.dim(),
        });
    }
    if !class_text_embs.rows_have_unit_norm() {
        return Err(EvalError::NotNormalized);
    }
    let labels = images
        .iter_rows()
        .map(|x| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, t) in class_text_embs.iter_rows().enumerate() {
                let s = dot(x, t);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect();
    Ok(LabelVector::new(labels, class_text_embs.rows())?)
}
