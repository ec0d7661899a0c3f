//! Partitioning a dataset into batches: natural order or embedding clusters.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    /// Every query alone: per-instance reflection.
    None,
    Sequential,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub strategy: BatchStrategy,
    pub batch_size: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BatchingError {
    #[error("batch size must be at least 1, got {0}")]
    BadBatchSize(usize),
    #[error("cluster count {k} must be in 1..={points}")]
    BadK { k: usize, points: usize },
    #[error("vectors have inconsistent dimensions")]
    DimensionMismatch,
    #[error("no embedding for query {0:?}")]
    MissingEmbedding(String),
    #[error("{ids} ids but {vectors} vectors")]
    LengthMismatch { ids: usize, vectors: usize },
    #[error("plan is not a partition of the dataset: {0}")]
    NotPartition(String),
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Every id of `dataset` appears in exactly one batch, nothing else
    /// appears, and no batch is empty or larger than `batch_size`.
    pub fn check_partition<S: AsRef<str>>(&self, dataset: &[S]) -> Result<(), BatchingError> {
        let wanted: BTreeSet<&str> = dataset.iter().map(AsRef::as_ref).collect();
        let mut seen = BTreeSet::new();
        for batch in &self.batches {
            if batch.is_empty() || batch.len() > self.batch_size {
                return Err(BatchingError::NotPartition(alloc::format!(
                    "batch of size {} with limit {}",
                    batch.len(),
                    self.batch_size
                )));
            }
            for id in batch {
                if !wanted.contains(id.as_str()) {
                    return Err(BatchingError::NotPartition(alloc::format!("unknown id {id:?}")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(BatchingError::NotPartition(alloc::format!("id {id:?} repeated")));
                }
            }
        }
        if seen.len() != wanted.len() {
            return Err(BatchingError::NotPartition(alloc::format!(
                "{} of {} ids planned",
                seen.len(),
                wanted.len()
            )));
        }
        Ok(())
    }
}

fn chunk(ids: &[String], n: usize) -> Vec<Vec<String>> {
    ids.chunks(n).map(<[String]>::to_vec).collect()
}

/// Consecutive chunks of `n` in dataset order; the last may be short.
pub fn plan_sequential<S: AsRef<str>>(ids: &[S], n: usize) -> Result<BatchPlan, BatchingError> {
    if n == 0 {
        return Err(BatchingError::BadBatchSize(n));
    }
    let ids: Vec<String> = ids.iter().map(|s| String::from(s.as_ref())).collect();
    Ok(BatchPlan {
        batches: chunk(&ids, n),
        strategy: BatchStrategy::Sequential,
        batch_size: n,
    })
}

/// Singleton batches.
pub fn plan_none<S: AsRef<str>>(ids: &[S]) -> BatchPlan {
    BatchPlan {
        batches: ids.iter().map(|s| vec![String::from(s.as_ref())]).collect(),
        strategy: BatchStrategy::None,
        batch_size: 1,
    }
}

/// Default cluster count: one cluster per batch, `ceil(M / N)`.
pub fn default_k(dataset_size: usize, batch_size: usize) -> usize {
    dataset_size.div_ceil(batch_size.max(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansInit {
    /// `k` distinct points chosen uniformly.
    RandomPoints,
    /// D²-weighted seeding.
    PlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub init: KMeansInit,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            init: KMeansInit::RandomPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(vectors: &[Vec<f64>], cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match cfg.init {
        KMeansInit::RandomPoints => {
            let mut picks = sample(rng, vectors.len(), cfg.k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| vectors[i].clone()).collect()
        }
        KMeansInit::PlusPlus => {
            let first = Uniform::new(0, vectors.len()).expect("nonempty").sample(rng);
            let mut centroids = vec![vectors[first].clone()];
            let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
            while centroids.len() < cfg.k {
                let d2: Vec<f64> = vectors.iter().map(|v| nearest(v, &centroids).1).collect();
                let total: f64 = d2.iter().sum();
                let pick = if total > 0.0 {
                    let target = unit.sample(rng) * total;
                    let mut acc = 0.0;
                    d2.iter()
                        .position(|&d| {
                            acc += d;
                            acc > target
                        })
                        .unwrap_or(vectors.len() - 1)
                } else {
                    // all remaining points coincide with a centroid
                    Uniform::new(0, vectors.len()).expect("nonempty").sample(rng)
                };
                centroids.push(vectors[pick].clone());
            }
            centroids
        }
    }
}

/// Lloyd's algorithm, deterministic for a given seed. Empty clusters keep
/// their previous centroid.
pub fn kmeans(vectors: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult, BatchingError> {
    if cfg.k == 0 || cfg.k > vectors.len() {
        return Err(BatchingError::BadK {
            k: cfg.k,
            points: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(BatchingError::DimensionMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_centroids(vectors, cfg, &mut rng);
    let mut assignments = vec![usize::MAX; vectors.len()];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let (c, d) = nearest(v, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        inertia_history.push(inertia);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (v, &c) in vectors.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for ((centroid, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            if count > 0 {
                *centroid = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history,
        iterations,
        converged,
    })
}

/// Cluster, order each cluster's members by distance to its centroid
/// (ties keep dataset order), then chunk each cluster separately. Clusters
/// are emitted in order of their earliest member in the dataset.
pub fn plan_semantic(
    ids: &[String],
    vectors: &[Vec<f64>],
    n: usize,
    cfg: &KMeansConfig,
) -> Result<(BatchPlan, KMeansResult), BatchingError> {
    if n == 0 {
        return Err(BatchingError::BadBatchSize(n));
    }
    if ids.len() != vectors.len() {
        return Err(BatchingError::LengthMismatch {
            ids: ids.len(),
            vectors: vectors.len(),
        });
    }
    let km = kmeans(vectors, cfg)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
    for (i, &c) in km.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let mut clusters: Vec<(usize, Vec<usize>)> = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .collect();
    clusters.sort_by_key(|(_, m)| m[0]);

    let mut batches = Vec::new();
    for (c, mut m) in clusters {
        let centroid = &km.centroids[c];
        m.sort_by(|&a, &b| {
            squared_distance(&vectors[a], centroid)
                .total_cmp(&squared_distance(&vectors[b], centroid))
                .then(a.cmp(&b))
        });
        let ordered: Vec<String> = m.into_iter().map(|i| ids[i].clone()).collect();
        batches.extend(chunk(&ordered, n));
    }
    Ok((
        BatchPlan {
            batches,
            strategy: BatchStrategy::Semantic,
            batch_size: n,
        },
        km,
    ))
}

/// Mean over batches of the mean pairwise cosine similarity inside each
/// batch. A singleton batch counts as similarity 1.
pub fn mean_within_batch_similarity(
    plan: &BatchPlan,
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<f64, BatchingError> {
    let mut total = 0.0;
    let mut batches = 0usize;
    for batch in &plan.batches {
        let vecs = batch
            .iter()
            .map(|id| {
                embeddings
                    .get(id)
                    .ok_or_else(|| BatchingError::MissingEmbedding(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let score = if vecs.len() < 2 {
            1.0
        } else {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..vecs.len() {
                for j in i + 1..vecs.len() {
                    sum += cosine(vecs[i], vecs[j]);
                    pairs += 1;
                }
            }
            sum / pairs as f64
        };
        total += score;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}
