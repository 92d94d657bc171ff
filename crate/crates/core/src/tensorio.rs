//! Binary embedding matrices, label vectors and noun vocabularies.
//!
//! Embedding files use a fixed little-endian layout shared with the export
//! tooling:
//!
//! ```text
//! magic  "KECEMB1\0"        8 bytes
//! rows   u32 LE
//! dim    u32 LE
//! flags  u32 LE             bit 0 = rows are unit-norm
//! payload rows*dim f32 LE   row-major
//! ```
//!
//! Label files hold one decimal integer per line; noun files hold one
//! UTF-8 string per line.

use std::fs;
use std::io::Write;
use std::path::Path;

/// File signature of an embedding matrix.
pub const MAGIC: &[u8; 8] = b"KECEMB1\0";
/// Size in bytes of the fixed header.
pub const HEADER_LEN: usize = 20;
/// Flag bit set when every row has unit L2 norm.
pub const FLAG_NORMALIZED: u32 = 1;

const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic header: expected KECEMB1\\0")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("shape overflow: {rows} x {dim} does not fit in memory")]
    ShapeOverflow { rows: u64, dim: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("unknown flag bits {0:#x}")]
    UnknownFlags(u32),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroRow { row: usize },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl TensorIoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TensorIoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Dense row-major `rows x dim` matrix of f32 embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix, checking shape, finiteness and (when flagged) row norms.
    pub fn new(
        rows: usize,
        dim: usize,
        values: Vec<f32>,
        normalized: bool,
    ) -> Result<Self, TensorIoError> {
        let m = EmbeddingMatrix {
            rows,
            dim,
            values,
            normalized,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds an unnormalized matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TensorIoError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(TensorIoError::Invariant(format!(
                "row {r} has length {} but row 0 has length {dim}",
                rows[r].len()
            )));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), dim, values, false)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Checks every row norm against 1 within the normalization tolerance,
    /// regardless of the stored flag.
    pub fn rows_have_unit_norm(&self) -> bool {
        self.iter_rows()
            .all(|r| (norm(r) - 1.0).abs() <= NORM_TOLERANCE)
    }

    fn validate(&self) -> Result<(), TensorIoError> {
        let expected = self.rows.checked_mul(self.dim).ok_or(TensorIoError::ShapeOverflow {
            rows: self.rows as u64,
            dim: self.dim as u64,
        })?;
        if self.values.len() != expected {
            return Err(TensorIoError::Invariant(format!(
                "values length {} != rows {} x dim {}",
                self.values.len(),
                self.rows,
                self.dim
            )));
        }
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFinite {
                row: idx / self.dim.max(1),
                col: idx % self.dim.max(1),
            });
        }
        if self.normalized {
            if let Some(row) = self
                .iter_rows()
                .position(|r| (norm(r) - 1.0).abs() > NORM_TOLERANCE)
            {
                return Err(TensorIoError::Invariant(format!(
                    "row {row} flagged normalized but has norm {}",
                    norm(self.row(row))
                )));
            }
        }
        Ok(())
    }
}

/// Euclidean norm accumulated in f64.
pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Scales every row to unit L2 norm. Zero rows are rejected.
pub fn l2_normalize_rows(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix, TensorIoError> {
    let mut values = Vec::with_capacity(matrix.values.len());
    for (i, row) in matrix.iter_rows().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(TensorIoError::ZeroRow { row: i });
        }
        values.extend(row.iter().map(|&x| (f64::from(x) / n) as f32));
    }
    EmbeddingMatrix::new(matrix.rows, matrix.dim, values, true)
}

/// Encodes a matrix into the binary embedding format.
pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Result<Vec<u8>, TensorIoError> {
    matrix.validate()?;
    let rows = u32::try_from(matrix.rows).map_err(|_| TensorIoError::ShapeOverflow {
        rows: matrix.rows as u64,
        dim: matrix.dim as u64,
    })?;
    let dim = u32::try_from(matrix.dim).map_err(|_| TensorIoError::ShapeOverflow {
        rows: matrix.rows as u64,
        dim: matrix.dim as u64,
    })?;
    let flags = if matrix.normalized { FLAG_NORMALIZED } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a binary embedding buffer.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, TensorIoError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(TensorIoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(TensorIoError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (rows, dim, flags) = (word(8), word(12), word(16));
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(TensorIoError::UnknownFlags(flags));
    }
    let overflow = TensorIoError::ShapeOverflow {
        rows: u64::from(rows),
        dim: u64::from(dim),
    };
    let count = (rows as usize).checked_mul(dim as usize).ok_or(overflow)?;
    let expected = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or(TensorIoError::ShapeOverflow {
            rows: u64::from(rows),
            dim: u64::from(dim),
        })?;
    if bytes.len() < expected {
        return Err(TensorIoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TensorIoError::TrailingData {
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(
        rows as usize,
        dim as usize,
        values,
        flags & FLAG_NORMALIZED != 0,
    )
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, TensorIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TensorIoError::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Writes a matrix; invariants are checked before anything touches disk.
pub fn write_embeddings(
    matrix: &EmbeddingMatrix,
    path: impl AsRef<Path>,
) -> Result<(), TensorIoError> {
    let bytes = encode_embeddings(matrix)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TensorIoError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| TensorIoError::Invariant(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(TensorIoError::io(path, e));
    }
    Ok(())
}

/// Integer class labels, `0..num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self, TensorIoError> {
        if num_classes == 0 {
            return Err(TensorIoError::Invariant("num_classes must be >= 1".into()));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(TensorIoError::Invariant(format!(
                "label {} at index {i} outside [0, {num_classes})",
                labels[i]
            )));
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    /// Infers `num_classes` as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self, TensorIoError> {
        let num_classes = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(labels, num_classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector, TensorIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TensorIoError::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse::<usize>().map_err(|e| TensorIoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    LabelVector::from_labels(labels)
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels.labels() {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Ordered noun strings, index-aligned with a text embedding matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NounVocabulary {
    nouns: Vec<String>,
}

impl NounVocabulary {
    pub fn new(nouns: Vec<String>) -> Result<Self, TensorIoError> {
        if let Some(i) = nouns.iter().position(|n| n.is_empty()) {
            return Err(TensorIoError::Invariant(format!("empty noun at index {i}")));
        }
        if let Some(i) = nouns.iter().position(|n| n.contains('\n')) {
            return Err(TensorIoError::Invariant(format!(
                "noun at index {i} contains a newline"
            )));
        }
        Ok(NounVocabulary { nouns })
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn get(&self, i: usize) -> &str {
        &self.nouns[i]
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }

    /// Fails unless the vocabulary and `matrix` have the same row count.
    pub fn check_aligned(&self, matrix: &EmbeddingMatrix) -> Result<(), TensorIoError> {
        if self.len() != matrix.rows() {
            return Err(TensorIoError::Invariant(format!(
                "{} nouns but {} embedding rows",
                self.len(),
                matrix.rows()
            )));
        }
        Ok(())
    }
}

/// Reads a newline-delimited string list. A trailing `\r` is stripped and a
/// final empty line is ignored; any other empty line is an error.
pub fn read_nouns(path: impl AsRef<Path>) -> Result<NounVocabulary, TensorIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TensorIoError::io(path, e))?;
    let nouns: Vec<String> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect();
    NounVocabulary::new(nouns)
}

pub fn write_nouns(nouns: &NounVocabulary, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    let mut text = String::new();
    for n in nouns.nouns() {
        text.push_str(n);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}
