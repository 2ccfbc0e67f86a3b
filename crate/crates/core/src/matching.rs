//! Multi-view matching.
//!
//! The exact set-to-set measures compare every query view with every view
//! of a target shape. [`FirstInvertedFile`] approximates the mean-max
//! similarity by only comparing a query view with database views stored
//! under the codewords it quantizes to, so the work per query is
//! proportional to the postings it visits.

use crate::codebook::Codebook;
use crate::features::{cosine_raw, Reader, ViewDescriptor};
use crate::{Error, Result};

const FIF_MAGIC: &[u8; 8] = b"GIFTIF1\0";

/// Per-shape similarities in `[0, 1]`, indexed by database ordinal.
pub type ScoreVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HausdorffVariant {
    /// Max over query views of the distance to the closest target view.
    Standard,
    /// Mean over query views instead of max; robust to isolated views.
    Robust,
}

fn check_sets(q: &[ViewDescriptor], p: &[ViewDescriptor]) -> Result<()> {
    if q.is_empty() || p.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = q[0].dim();
    if let Some(bad) = q.iter().chain(p).find(|v| v.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    Ok(())
}

/// Hausdorff distance from `q` to `p` with `d = 1 - cosine`.
pub fn exact_hausdorff_distance(
    q: &[ViewDescriptor],
    p: &[ViewDescriptor],
    variant: HausdorffVariant,
) -> Result<f64> {
    check_sets(q, p)?;
    let closest = q.iter().map(|qi| {
        p.iter()
            .map(|pj| 1.0 - qi.cosine(pj))
            .fold(f64::INFINITY, f64::min)
    });
    Ok(match variant {
        HausdorffVariant::Standard => closest.fold(f64::NEG_INFINITY, f64::max),
        HausdorffVariant::Robust => closest.sum::<f64>() / q.len() as f64,
    })
}

/// Mean over query views of the best clamped cosine against `p`.
pub fn exact_similarity(q: &[ViewDescriptor], p: &[ViewDescriptor]) -> Result<f64> {
    check_sets(q, p)?;
    let mut total = 0.0;
    for qi in q {
        let best = p.iter().map(|pj| qi.similarity(pj)).fold(0.0, f64::max);
        total += best;
    }
    Ok(total / q.len() as f64)
}

/// Exact similarity of `q` against every database shape.
pub fn exact_scores(q: &[ViewDescriptor], database: &[&[ViewDescriptor]]) -> Result<ScoreVector> {
    crate::par::map(database, |p| exact_similarity(q, p))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Entry {
    shapes: Vec<u32>,
    /// Row-major, one `dim`-wide row per posting.
    vectors: Vec<f32>,
    sq_norms: Vec<f64>,
}

/// Codeword-indexed postings of `(shape ordinal, view descriptor)`.
///
/// Each non-empty database view is stored once, under its nearest codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstInvertedFile {
    codebook: Codebook,
    n_shapes: usize,
    n_views: usize,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub postings_visited: usize,
}

/// Builds the inverted file from one channel of every database view set,
/// in database order.
pub fn build_fif(viewsets: &[&[ViewDescriptor]], codebook: Codebook) -> Result<FirstInvertedFile> {
    let dim = codebook.dim();
    let n_views = viewsets.first().map_or(0, |v| v.len());
    let assigned = crate::par::map(viewsets, |views| -> Result<Vec<Option<usize>>> {
        views
            .iter()
            .map(|v| {
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.dim(),
                    });
                }
                if v.is_empty() {
                    Ok(None)
                } else {
                    codebook.assign(v.values()).map(Some)
                }
            })
            .collect()
    });
    let mut entries = vec![Entry::default(); codebook.k()];
    for (shape, (views, slots)) in viewsets.iter().zip(assigned).enumerate() {
        for (v, slot) in views.iter().zip(slots?) {
            if let Some(e) = slot {
                let entry = &mut entries[e];
                entry.shapes.push(shape as u32);
                entry.vectors.extend_from_slice(v.values());
                entry.sq_norms.push(sq_norm(v.values()));
            }
        }
    }
    Ok(FirstInvertedFile {
        codebook,
        n_shapes: viewsets.len(),
        n_views,
        entries,
    })
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

impl FirstInvertedFile {
    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn n_shapes(&self) -> usize {
        self.n_shapes
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn entry_len(&self, e: usize) -> usize {
        self.entries[e].shapes.len()
    }

    pub fn total_postings(&self) -> usize {
        self.entries.iter().map(|e| e.shapes.len()).sum()
    }

    /// Shape ordinals and vectors stored under entry `e`.
    pub fn postings(&self, e: usize) -> impl Iterator<Item = (u32, &[f32])> {
        let entry = &self.entries[e];
        entry
            .shapes
            .iter()
            .copied()
            .zip(entry.vectors.chunks_exact(self.dim()))
    }

    /// Approximate similarity of `query` to every database shape, probing
    /// the `ma` nearest codewords of each query view.
    pub fn query(&self, query: &[ViewDescriptor], ma: usize) -> Result<ScoreVector> {
        self.query_with_stats(query, ma).map(|(s, _)| s)
    }

    pub fn query_with_stats(
        &self,
        query: &[ViewDescriptor],
        ma: usize,
    ) -> Result<(ScoreVector, QueryStats)> {
        if query.is_empty() {
            return Err(Error::EmptySet);
        }
        let dim = self.dim();
        if let Some(bad) = query.iter().find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        // Per view: sorted (shape, best similarity) pairs plus visit count.
        let per_view = crate::par::map(query, |qv| -> Result<(Vec<(u32, f64)>, usize)> {
            if qv.is_empty() {
                return Ok((Vec::new(), 0));
            }
            let q = qv.values();
            let q_sq = sq_norm(q);
            let mut hits = Vec::new();
            for e in self.codebook.quantize(q, ma)? {
                let entry = &self.entries[e];
                for ((&shape, v), &p_sq) in entry
                    .shapes
                    .iter()
                    .zip(entry.vectors.chunks_exact(dim))
                    .zip(&entry.sq_norms)
                {
                    hits.push((shape, cosine_raw(q, q_sq, v, p_sq).max(0.0)));
                }
            }
            let visited = hits.len();
            hits.sort_unstable_by_key(|h| h.0);
            hits.dedup_by(|later, kept| {
                if later.0 == kept.0 {
                    kept.1 = kept.1.max(later.1);
                    true
                } else {
                    false
                }
            });
            Ok((hits, visited))
        });

        let mut scores = vec![0.0; self.n_shapes];
        let mut stats = QueryStats::default();
        for view in per_view {
            let (hits, visited) = view?;
            stats.postings_visited += visited;
            for (shape, best) in hits {
                scores[shape as usize] += best;
            }
        }
        let inv = query.len() as f64;
        scores.iter_mut().for_each(|s| *s /= inv);
        Ok((scores, stats))
    }

    /// `magic, K, d, n_views, n_shapes` (u32 each), then per entry a u32
    /// posting count followed by `u32 shape + d × f32` per posting.
    pub fn encode(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(24 + self.total_postings() * (4 + 4 * dim));
        out.extend_from_slice(FIF_MAGIC);
        for v in [self.codebook.k(), dim, self.n_views, self.n_shapes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(&(e.shapes.len() as u32).to_le_bytes());
            for (s, v) in e.shapes.iter().zip(e.vectors.chunks_exact(dim)) {
                out.extend_from_slice(&s.to_le_bytes());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8], codebook: Codebook) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(8)? != FIF_MAGIC {
            return Err(Error::Format("bad inverted file magic".into()));
        }
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n_views = r.u32()? as usize;
        let n_shapes = r.u32()? as usize;
        if k != codebook.k() || dim != codebook.dim() {
            return Err(Error::Format(format!(
                "inverted file is {k}x{dim} but codebook is {}x{}",
                codebook.k(),
                codebook.dim()
            )));
        }
        let mut entries = Vec::with_capacity(k);
        for _ in 0..k {
            let count = r.u32()? as usize;
            let mut e = Entry::default();
            for _ in 0..count {
                let s = r.u32()?;
                if s as usize >= n_shapes {
                    return Err(Error::Format(format!(
                        "posting for shape {s} of {n_shapes}"
                    )));
                }
                let v = r.f32s(dim)?;
                e.sq_norms.push(sq_norm(&v));
                e.shapes.push(s);
                e.vectors.extend(v);
            }
            entries.push(e);
        }
        r.finish()?;
        Ok(FirstInvertedFile {
            codebook,
            n_shapes,
            n_views,
            entries,
        })
    }
}
