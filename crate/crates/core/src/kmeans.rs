//! Lloyd k-means with k-means++ seeding and best-of-n restarts.
//!
//! In spherical mode the data must be unit-norm, distances are `1 - cos`
//! and every centroid is renormalized after each mean update. Centroids are
//! carried in f64 during fitting so the per-iteration objective is
//! monotone up to f64 rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::tensorio::{EmbeddingMatrix, TensorIoError};

#[derive(Debug, thiserror::Error)]
pub enum KMeansError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot fit {k} clusters to {rows} points")]
    TooFewPoints { k: usize, rows: usize },
    #[error("spherical k-means requires unit-norm rows")]
    NotNormalized,
    #[error("dimension mismatch: centroids have dim {centroids}, data has dim {data}")]
    DimMismatch { centroids: usize, data: usize },
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_redo: usize,
    pub n_iter: usize,
    pub spherical: bool,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            n_redo: 20,
            n_iter: 300,
            spherical: true,
            seed,
        }
    }

    fn validate(&self) -> Result<(), KMeansError> {
        if self.k == 0 {
            return Err(KMeansError::Config("k must be >= 1".into()));
        }
        if self.n_redo == 0 {
            return Err(KMeansError::Config("n_redo must be >= 1".into()));
        }
        if self.n_iter == 0 {
            return Err(KMeansError::Config("n_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    /// Sum of `1 - cos` (spherical) or squared distance over all points.
    pub objective: f64,
    pub iterations_run: usize,
    /// Index of the restart that produced this result.
    pub restart: usize,
}

/// Objective trace of a single restart: entry `t` is the objective after
/// the `t`-th assignment step (entry 0 follows seeding).
#[derive(Clone, Debug, PartialEq)]
pub struct RestartTrace {
    pub objectives: Vec<f64>,
    /// Largest `|norm - 1|` over non-empty centroids across all iterations.
    /// Always 0 outside spherical mode.
    pub max_centroid_norm_error: f64,
}

pub fn fit(data: &EmbeddingMatrix, config: &KMeansConfig) -> Result<KMeansResult, KMeansError> {
    fit_traced(data, config).map(|(r, _)| r)
}

/// Like [`fit`], also returning the per-restart objective traces.
pub fn fit_traced(
    data: &EmbeddingMatrix,
    config: &KMeansConfig,
) -> Result<(KMeansResult, Vec<RestartTrace>), KMeansError> {
    config.validate()?;
    if config.k > data.rows() {
        return Err(KMeansError::TooFewPoints {
            k: config.k,
            rows: data.rows(),
        });
    }
    if config.spherical && !data.rows_have_unit_norm() {
        return Err(KMeansError::NotNormalized);
    }

    let runs: Vec<(Lloyd, RestartTrace)> = (0..config.n_redo)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, r));
            run_restart(data, config, &mut rng)
        })
        .collect();

    // lowest objective wins; ties go to the earliest restart
    let mut best = 0;
    for (i, (run, _)) in runs.iter().enumerate() {
        if run.objective < runs[best].0.objective {
            best = i;
        }
    }
    let traces: Vec<RestartTrace> = runs.iter().map(|(_, t)| t.clone()).collect();
    let (run, _) = runs.into_iter().nth(best).expect("n_redo >= 1");

    let values: Vec<f32> = run.centroids.iter().map(|&v| v as f32).collect();
    let centroids = EmbeddingMatrix::new(config.k, data.dim(), values, false)?;
    let centroids = if config.spherical {
        // every centroid is a renormalized mean or a data point, hence unit-norm
        EmbeddingMatrix::new(config.k, data.dim(), centroids.into_values(), true)?
    } else {
        centroids
    };
    Ok((
        KMeansResult {
            centroids,
            assignments: run.assignments,
            objective: run.objective,
            iterations_run: run.iterations,
            restart: best,
        },
        traces,
    ))
}

/// Maps every point to its nearest centroid; ties go to the lowest index.
pub fn assign(
    centroids: &EmbeddingMatrix,
    data: &EmbeddingMatrix,
    spherical: bool,
) -> Result<Vec<usize>, KMeansError> {
    if centroids.dim() != data.dim() {
        return Err(KMeansError::DimMismatch {
            centroids: centroids.dim(),
            data: data.dim(),
        });
    }
    if centroids.rows() == 0 {
        return Err(KMeansError::Config("no centroids".into()));
    }
    let c64: Vec<f64> = centroids.values().iter().map(|&v| f64::from(v)).collect();
    let (labels, _) = assign_points(data, &c64, centroids.rows(), spherical);
    Ok(labels)
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct Lloyd {
    centroids: Vec<f64>,
    assignments: Vec<usize>,
    objective: f64,
    iterations: usize,
}

fn point_cost(x: &[f32], c: &[f64], spherical: bool) -> f64 {
    if spherical {
        let d: f64 = x.iter().zip(c).map(|(&a, &b)| f64::from(a) * b).sum();
        (1.0 - d).max(0.0)
    } else {
        x.iter()
            .zip(c)
            .map(|(&a, &b)| {
                let t = f64::from(a) - b;
                t * t
            })
            .sum()
    }
}

fn assign_points(
    data: &EmbeddingMatrix,
    centroids: &[f64],
    k: usize,
    spherical: bool,
) -> (Vec<usize>, Vec<f64>) {
    let dim = data.dim();
    (0..data.rows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for c in 0..k {
                let cost = point_cost(x, &centroids[c * dim..(c + 1) * dim], spherical);
                if cost < best_cost {
                    best = c;
                    best_cost = cost;
                }
            }
            (best, best_cost)
        })
        .unzip()
}

fn seed_plus_plus(
    data: &EmbeddingMatrix,
    k: usize,
    spherical: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = data.rows();
    let dim = data.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(data.row(first).iter().map(|&v| f64::from(v)));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| point_cost(data.row(i), &centroids[..dim], spherical))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if nearest[chosen] == 0.0 {
                chosen = nearest.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend(data.row(pick).iter().map(|&v| f64::from(v)));
        let new_c = &centroids[c * dim..(c + 1) * dim];
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(point_cost(data.row(i), new_c, spherical));
        }
    }
    centroids
}

fn update_centroids(
    data: &EmbeddingMatrix,
    assignments: &[usize],
    costs: &[f64],
    k: usize,
    spherical: bool,
) -> Vec<f64> {
    let dim = data.dim();
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(data.row(i)) {
            *s += f64::from(x);
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        let block = &mut sums[c * dim..(c + 1) * dim];
        if counts[c] == 0 {
            empty.push(c);
            continue;
        }
        if spherical {
            let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                block.iter_mut().for_each(|v| *v /= n);
            } else {
                // antipodal members cancel out; treat as empty
                empty.push(c);
            }
        } else {
            let inv = 1.0 / counts[c] as f64;
            block.iter_mut().for_each(|v| *v *= inv);
        }
    }
    if !empty.is_empty() {
        // reseed each empty centroid to a distinct worst-served point
        let mut order: Vec<usize> = (0..costs.len()).collect();
        order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
        for (&c, &p) in empty.iter().zip(order.iter()) {
            let block = &mut sums[c * dim..(c + 1) * dim];
            for (s, &x) in block.iter_mut().zip(data.row(p)) {
                *s = f64::from(x);
            }
            if spherical {
                let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                block.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    sums
}

fn run_restart(
    data: &EmbeddingMatrix,
    config: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> (Lloyd, RestartTrace) {
    let k = config.k;
    let dim = data.dim();
    let mut centroids = seed_plus_plus(data, k, config.spherical, rng);
    let (mut assignments, mut costs) = assign_points(data, &centroids, k, config.spherical);
    let mut objective: f64 = costs.iter().sum();
    let mut trace = RestartTrace {
        objectives: vec![objective],
        max_centroid_norm_error: 0.0,
    };
    let mut iterations = 0;
    while iterations < config.n_iter {
        centroids = update_centroids(data, &assignments, &costs, k, config.spherical);
        iterations += 1;
        if config.spherical {
            for c in centroids.chunks_exact(dim) {
                let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                trace.max_centroid_norm_error = trace.max_centroid_norm_error.max((n - 1.0).abs());
            }
        }
        let (next, next_costs) = assign_points(data, &centroids, k, config.spherical);
        objective = next_costs.iter().sum();
        trace.objectives.push(objective);
        let converged = next == assignments;
        assignments = next;
        costs = next_costs;
        if converged {
            break;
        }
    }
    (
        Lloyd {
            centroids,
            assignments,
            objective,
            iterations,
        },
        trace,
    )
}
