//! K-means semantic tokenizer: one codebook index per 60 ms token frame.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const FULL_CODEBOOK_SIZE: usize = 8192;

/// Index of the Euclidean-nearest row and its squared distance; ties go to the
/// lowest index.
pub fn nearest(centroids: ArrayView2<f64>, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.outer_iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in c.iter().zip(x) {
            let t = a - b;
            d += t * t;
            if d >= best.1 {
                break;
            }
        }
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn nearest_all(centroids: ArrayView2<f64>, data: ArrayView2<f64>) -> Vec<(usize, f64)> {
    let rows: Vec<ArrayView1<f64>> = data.outer_iter().collect();
    rows.par_iter()
        .map(|r| match r.as_slice() {
            Some(s) => nearest(centroids, s),
            None => nearest(centroids, &r.to_vec()),
        })
        .collect()
}

fn count_distinct(data: ArrayView2<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = data.outer_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

/// Output of a Lloyd run.
#[derive(Debug, Clone)]
pub(crate) struct KMeans {
    pub centroids: Array2<f64>,
    /// Total squared distortion at each assignment step.
    pub history: Vec<f64>,
}

/// k-means++ seeding followed by Lloyd iterations. With `pad_duplicates`,
/// data with fewer distinct points than `k` yields repeated centroids instead
/// of an error.
pub(crate) fn kmeans(data: ArrayView2<f64>, k: usize, max_iters: usize, seed: u64, pad_duplicates: bool) -> Result<KMeans> {
    let (n, dim) = data.dim();
    if k == 0 || max_iters == 0 {
        return Err(Error::InvalidParameter("k-means needs k ≥ 1 and at least one iteration".into()));
    }
    if n < k {
        return Err(Error::InsufficientData {
            what: "latent vectors for the requested codebook size",
            required: k,
            available: n,
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    if !pad_duplicates {
        let distinct = count_distinct(data);
        if distinct < k {
            return Err(Error::InsufficientData {
                what: "distinct latent vectors",
                required: k,
                available: distinct,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let sq = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut dist: Vec<f64> = data.outer_iter().map(|r| sq(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        chosen = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            chosen.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            first
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.outer_iter().enumerate() {
            dist[i] = dist[i].min(sq(r, centroids.row(c)));
        }
    }

    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    for iter in 0..max_iters {
        let assigned = nearest_all(centroids.view(), data);
        history.push(assigned.iter().map(|a| a.1).sum());
        let labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if prev.as_ref() == Some(&labels) || iter + 1 == max_iters {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (r, &l) in data.outer_iter().zip(&labels) {
            let mut row = sums.row_mut(l);
            row += &r;
            counts[l] += 1;
        }
        let mut by_distortion: Vec<usize> = (0..n).collect();
        by_distortion.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
        let mut donors = by_distortion.into_iter().filter(|&i| assigned[i].1 > 0.0);
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
                centroids.row_mut(c).assign(&mean);
            } else if let Some(i) = donors.next() {
                centroids.row_mut(c).assign(&data.row(i));
            }
        }
        prev = Some(labels);
    }
    Ok(KMeans { centroids, history })
}

/// Semantic codebook: `K × D` centroids plus a fingerprint of the training
/// latents.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCodebook {
    pub centroids: Array2<f64>,
    pub trained_on: String,
}

/// Short stable fingerprint of a latent matrix.
pub fn fingerprint(data: ArrayView2<f64>) -> String {
    let mut h = crc32fast::Hasher::new();
    for v in data.iter() {
        h.update(&v.to_le_bytes());
    }
    format!("n{}d{}-{:08x}", data.nrows(), data.ncols(), h.finalize())
}

/// Train a semantic codebook. Returns the codebook and the total distortion
/// after every assignment step (non-increasing).
pub fn train_kmeans(latents: ArrayView2<f64>, k: usize, max_iters: usize, seed: u64) -> Result<(SemanticCodebook, Vec<f64>)> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("semantic codebook size {k} < 2")));
    }
    let km = kmeans(latents, k, max_iters, seed, false)?;
    Ok((
        SemanticCodebook {
            centroids: km.centroids,
            trained_on: fingerprint(latents),
        },
        km.history,
    ))
}

impl SemanticCodebook {
    pub fn new(centroids: Array2<f64>, trained_on: impl Into<String>) -> Result<Self> {
        if centroids.nrows() < 2 {
            return Err(Error::InvalidParameter("semantic codebook needs at least 2 entries".into()));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("semantic centroids"));
        }
        Ok(Self {
            centroids,
            trained_on: trained_on.into(),
        })
    }

    pub fn size(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn assign(&self, latent: &[f64]) -> Result<usize> {
        if latent.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: latent.len(),
            });
        }
        Ok(nearest(self.centroids.view(), latent).0)
    }

    pub fn assign_all(&self, latents: ArrayView2<f64>) -> Result<Vec<usize>> {
        if latents.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: latents.ncols(),
            });
        }
        Ok(nearest_all(self.centroids.view(), latents).into_iter().map(|a| a.0).collect())
    }

    pub fn dequantize(&self, index: usize) -> Result<ArrayView1<'_, f64>> {
        if index >= self.size() {
            return Err(Error::IndexOutOfRange {
                what: "semantic codebook",
                index,
                size: self.size(),
            });
        }
        Ok(self.centroids.row(index))
    }

    /// Bits needed to code an index: `ceil(log2 K)`.
    pub fn index_bits(&self) -> u8 {
        bits_for(self.size())
    }
}

pub fn bits_for(size: usize) -> u8 {
    (usize::BITS - (size.max(2) - 1).leading_zeros()) as u8
}
