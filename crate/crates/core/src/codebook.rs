//! Visual vocabulary for the first inverted file: Lloyd's k-means with
//! k-means++ seeding, and a nearest-codeword quantizer with multiple
//! assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::Reader;
use crate::{Error, Result};

const CODEBOOK_MAGIC: &[u8; 8] = b"GIFTCB1\0";

/// Relative cost improvement below which Lloyd iterations stop.
pub const CONVERGENCE_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    seed: u64,
    centroids: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    /// Within-cluster sum of squared distances after each assignment step.
    pub cost_history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

#[inline]
fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid, lowest index on ties.
fn nearest(x: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend(point(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = crate::par::map_range(n, |i| sq_dist(point(i), &centroids[..dim]));
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can walk past the end; settle on the last positive weight
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(point(pick).iter().map(|&v| v as f64));
        let c = &centroids[start..];
        let fresh = crate::par::map_range(n, |i| sq_dist(point(i), c));
        for (d, f) in d2.iter_mut().zip(fresh) {
            if f < *d {
                *d = f;
            }
        }
    }
    centroids
}

/// Trains `k` centroids over `data`, a row-major matrix of `dim`-wide rows.
///
/// Deterministic for a fixed seed and independent of thread count. Clusters
/// that empty out are refilled with the point farthest from its centroid in
/// the most populous cluster.
pub fn train_codebook(
    data: &[f32],
    dim: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Codebook> {
    train_codebook_with_stats(data, dim, k, seed, max_iters).map(|(cb, _)| cb)
}

pub fn train_codebook_with_stats(
    data: &[f32],
    dim: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Codebook, TrainStats)> {
    if dim == 0 || data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !data.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.len() % dim,
        });
    }
    if k == 0 {
        return Err(Error::BadSpec("codebook size must be at least 1".into()));
    }
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(data, dim, k, &mut rng);
    let mut stats = TrainStats::default();

    for _ in 0..max_iters.max(1) {
        let assigned: Vec<(usize, f64)> =
            crate::par::map_range(n, |i| nearest(point(i), &centroids, dim));
        let cost: f64 = assigned.iter().map(|a| a.1).sum();
        let prev = stats.cost_history.last().copied();
        stats.cost_history.push(cost);
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - cost) / prev < CONVERGENCE_TOL {
                break;
            }
        }
        if cost == 0.0 {
            break;
        }

        let mut assignment: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0f64; k * dim];
        for (i, &j) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for d in 0..dim {
                    centroids[j * dim + d] = sums[j * dim + d] * inv;
                }
            }
        }

        // Empty-cluster repair.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..k)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .unwrap();
            if counts[donor] < 2 {
                break;
            }
            let dc = &centroids[donor * dim..(donor + 1) * dim];
            let mut far = (usize::MAX, -1.0);
            for (i, _) in assignment.iter().enumerate().filter(|&(_, &a)| a == donor) {
                let d = sq_dist(point(i), dc);
                if d > far.1 {
                    far = (i, d);
                }
            }
            let p = far.0;
            assignment[p] = j;
            counts[donor] -= 1;
            counts[j] = 1;
            for d in 0..dim {
                let v = point(p)[d] as f64;
                sums[donor * dim + d] -= v;
                sums[j * dim + d] = v;
                centroids[j * dim + d] = v;
            }
            let inv = 1.0 / counts[donor] as f64;
            for d in 0..dim {
                centroids[donor * dim + d] = sums[donor * dim + d] * inv;
            }
        }
    }

    let cb = Codebook {
        k,
        dim,
        seed,
        centroids: centroids.iter().map(|&v| v as f32).collect(),
    };
    Ok((cb, stats))
}

impl Codebook {
    pub fn from_centroids(centroids: Vec<f32>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} centroid values do not form rows of width {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite centroid value".into()));
        }
        Ok(Codebook {
            k: centroids.len() / dim,
            dim,
            seed,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared distance from `x` to every centroid.
    pub fn distances(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self
            .centroids
            .chunks_exact(self.dim)
            .map(|c| sq_dist_f32(x, c))
            .collect())
    }

    /// The `ma` nearest entries by squared distance, nearest first, lower
    /// index first on ties.
    pub fn quantize(&self, x: &[f32], ma: usize) -> Result<Vec<usize>> {
        if ma == 0 || ma > self.k {
            return Err(Error::BadSpec(format!(
                "multiple assignment {ma} outside 1..={}",
                self.k
            )));
        }
        let dist = self.distances(x)?;
        let mut order: Vec<usize> = (0..self.k).collect();
        let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
        if ma < self.k {
            order.select_nth_unstable_by(ma - 1, cmp);
            order.truncate(ma);
        }
        order.sort_unstable_by(cmp);
        Ok(order)
    }

    /// Nearest entry.
    pub fn assign(&self, x: &[f32]) -> Result<usize> {
        Ok(self.quantize(x, 1)?[0])
    }

    /// Sum over rows of the squared distance to the nearest centroid.
    pub fn cost(&self, data: &[f32]) -> f64 {
        data.chunks_exact(self.dim)
            .map(|x| {
                self.centroids
                    .chunks_exact(self.dim)
                    .map(|c| sq_dist_f32(x, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    /// `magic, K u32, d u32, K·d f32 centroids, seed u64`, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.centroids.len());
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(8)? != CODEBOOK_MAGIC {
            return Err(Error::Format("bad codebook magic".into()));
        }
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let centroids = r.f32s(
            k.checked_mul(dim)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        let seed = r.u64()?;
        r.finish()?;
        Codebook::from_centroids(centroids, dim, seed)
    }
}
