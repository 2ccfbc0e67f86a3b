//! Contextual re-ranking.
//!
//! Each shape gets a sparse activation over the database: the similarity
//! scores of its top-`k1` neighbours, all other coordinates zero. The
//! activations are smoothed by averaging over `k2` neighbours (within a
//! channel, or crossing channels), merged across channels with an
//! element-wise generalized mean, and compared with a fuzzy Jaccard
//! similarity `Σ min / Σ max`.
//!
//! [`SecondInvertedFile`] stores the transpose of all database activations
//! with their L1 norms. A query only walks the entries of its own support,
//! using `Σ max = |a|₁ + |b|₁ - Σ min`.

use std::collections::BTreeMap;

use crate::features::Reader;
use crate::matching::ScoreVector;
use crate::{Error, Result};

const ACT_MAGIC: &[u8; 8] = b"GIFTAC1\0";
const SIF_MAGIC: &[u8; 8] = b"GIFTSI1\0";

/// Sparse membership vector over database ordinals. Stored values are
/// strictly positive and sorted by ordinal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseActivation {
    entries: Vec<(u32, f64)>,
    l1: f64,
}

impl SparseActivation {
    /// Builds from arbitrary `(ordinal, value)` pairs. Non-positive values
    /// are dropped; duplicate ordinals keep the last value.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let map: BTreeMap<u32, f64> = pairs.into_iter().filter(|&(_, v)| v > 0.0).collect();
        Self::from_sorted(map.into_iter().collect())
    }

    fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        let l1 = entries.iter().map(|e| e.1).sum();
        SparseActivation { entries, l1 }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, ordinal: u32) -> f64 {
        self.entries
            .binary_search_by_key(&ordinal, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Ordinals of the `k` best-scoring shapes, score descending, lower ordinal
/// first on ties. Zero scores are never selected. When `anchor` is given it
/// is placed first (if its score is positive) and the remaining `k - 1`
/// slots go to the best other shapes.
pub fn top_neighbors(scores: &[f64], k: usize, anchor: Option<usize>) -> Vec<u32> {
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return out;
    }
    if let Some(a) = anchor {
        if scores.get(a).is_some_and(|&s| s > 0.0) {
            out.push(a as u32);
        }
    }
    let mut cand: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| scores[i as usize] > 0.0 && Some(i as usize) != anchor)
        .collect();
    let want = k - out.len();
    let cmp = |a: &u32, b: &u32| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    if want < cand.len() {
        if want == 0 {
            cand.clear();
        } else {
            cand.select_nth_unstable_by(want - 1, cmp);
            cand.truncate(want);
        }
    }
    cand.sort_unstable_by(cmp);
    out.extend(cand);
    out
}

/// Activation holding the scores of the top-`k1` shapes.
pub fn build_activation(scores: &[f64], k1: usize) -> SparseActivation {
    build_activation_anchored(scores, k1, None)
}

/// Like [`build_activation`], but `anchor` (the query's own ordinal when it
/// is a database shape) is always a member.
pub fn build_activation_anchored(
    scores: &[f64],
    k1: usize,
    anchor: Option<usize>,
) -> SparseActivation {
    SparseActivation::from_pairs(
        top_neighbors(scores, k1, anchor)
            .into_iter()
            .map(|i| (i, scores[i as usize])),
    )
}

/// Fuzzy Jaccard `Σ min / Σ max` over all coordinates; 0 when both are empty.
pub fn jaccard_dense(a: &SparseActivation, b: &SparseActivation) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut i, mut j) = (0, 0);
    let (x, y) = (&a.entries, &b.entries);
    while i < x.len() || j < y.len() {
        let (va, vb);
        match (x.get(i), y.get(j)) {
            (Some(p), Some(q)) if p.0 == q.0 => {
                (va, vb) = (p.1, q.1);
                i += 1;
                j += 1;
            }
            (Some(p), Some(q)) if p.0 < q.0 => {
                (va, vb) = (p.1, 0.0);
                i += 1;
            }
            (Some(p), None) => {
                (va, vb) = (p.1, 0.0);
                i += 1;
            }
            (_, Some(q)) => {
                (va, vb) = (0.0, q.1);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
        num += va.min(vb);
        den += va.max(vb);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Mean of `acts[i]` over the listed ordinals, accumulated in list order.
pub fn mean_activation(acts: &[SparseActivation], members: &[u32]) -> SparseActivation {
    if members.is_empty() {
        return SparseActivation::default();
    }
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for &m in members {
        for &(i, v) in &acts[m as usize].entries {
            *acc.entry(i).or_insert(0.0) += v;
        }
    }
    let n = members.len() as f64;
    SparseActivation::from_sorted(acc.into_iter().map(|(i, v)| (i, v / n)).collect())
}

/// Replaces every activation by the mean over its first `k2` listed
/// neighbours. All updates read the original activations.
pub fn neighbor_augment(
    acts: &[SparseActivation],
    neighbors: &[Vec<u32>],
    k2: usize,
) -> Vec<SparseActivation> {
    crate::par::map(neighbors, |list| {
        mean_activation(acts, &list[..list.len().min(k2)])
    })
}

/// Cross-channel augmentation: channel 1 is averaged over channel-2
/// neighbourhoods and vice versa, simultaneously.
pub fn co_augment(
    f1: &[SparseActivation],
    f2: &[SparseActivation],
    nbr1: &[Vec<u32>],
    nbr2: &[Vec<u32>],
    k2: usize,
) -> (Vec<SparseActivation>, Vec<SparseActivation>) {
    (
        neighbor_augment(f1, nbr2, k2),
        neighbor_augment(f2, nbr1, k2),
    )
}

/// Element-wise generalized mean with exponent `alpha` of two activations.
pub fn aggregate(f1: &SparseActivation, f2: &SparseActivation, alpha: f64) -> SparseActivation {
    aggregate_many(&[f1, f2], alpha)
}

/// Generalized mean over any number of channels, missing coordinates
/// counting as zero. Results are clamped to the range of the inputs, so
/// equal inputs return that value exactly.
pub fn aggregate_many(channels: &[&SparseActivation], alpha: f64) -> SparseActivation {
    assert!(alpha > 0.0, "generalized mean exponent must be positive");
    if channels.len() == 1 {
        return channels[0].clone();
    }
    let mut coords: Vec<u32> = channels
        .iter()
        .flat_map(|c| c.entries.iter().map(|e| e.0))
        .collect();
    coords.sort_unstable();
    coords.dedup();
    let n = channels.len() as f64;
    let entries = coords
        .into_iter()
        .map(|i| {
            let (mut lo, mut hi, mut acc) = (f64::INFINITY, 0.0f64, 0.0);
            for c in channels {
                let v = c.get(i);
                lo = lo.min(v);
                hi = hi.max(v);
                acc += if alpha == 1.0 { v } else { v.powf(alpha) };
            }
            let m = acc / n;
            let mean = if alpha == 1.0 {
                m
            } else {
                m.powf(alpha.recip())
            };
            (i, mean.clamp(lo, hi))
        })
        .filter(|e| e.1 > 0.0)
        .collect();
    SparseActivation::from_sorted(entries)
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SifEntry {
    norm: f64,
    postings: Vec<(u32, f64)>,
}

/// Transpose of all database activations: entry `i` holds `|F_i|₁` and
/// every `(j, F_j[i])` with `F_j[i] > 0`, `j` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondInvertedFile {
    entries: Vec<SifEntry>,
}

pub fn build_sif(acts: &[SparseActivation]) -> SecondInvertedFile {
    let n = acts.len();
    let mut entries: Vec<SifEntry> = acts
        .iter()
        .map(|a| SifEntry {
            norm: a.l1,
            postings: Vec::new(),
        })
        .collect();
    for (j, a) in acts.iter().enumerate() {
        for &(i, v) in &a.entries {
            assert!(
                (i as usize) < n,
                "activation coordinate {i} outside database of {n}"
            );
            entries[i as usize].postings.push((j as u32, v));
        }
    }
    SecondInvertedFile { entries }
}

impl SecondInvertedFile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.entries[i].norm
    }

    pub fn postings(&self, i: usize) -> &[(u32, f64)] {
        &self.entries[i].postings
    }

    pub fn total_postings(&self) -> usize {
        self.entries.iter().map(|e| e.postings.len()).sum()
    }

    /// Fuzzy Jaccard of `fq` against every database activation, touching
    /// only the entries in `fq`'s support. Untouched shapes score 0.
    pub fn query(&self, fq: &SparseActivation) -> ScoreVector {
        let n = self.entries.len();
        let mut acc = vec![0.0f64; n];
        let mut touched = Vec::new();
        let mut seen = vec![false; n];
        for &(i, v) in &fq.entries {
            let Some(entry) = self.entries.get(i as usize) else {
                continue;
            };
            for &(j, w) in &entry.postings {
                let j = j as usize;
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += v.min(w);
            }
        }
        let mut scores = vec![0.0; n];
        for j in touched {
            let num = acc[j];
            let den = fq.l1 + self.entries[j].norm - num;
            scores[j] = if den > 0.0 { num / den } else { 0.0 };
        }
        scores
    }

    /// `magic, u32 N`, then per entry `f64 norm, u32 count, count × (u32, f64)`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SIF_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.norm.to_le_bytes());
            out.extend_from_slice(&(e.postings.len() as u32).to_le_bytes());
            for &(j, v) in &e.postings {
                out.extend_from_slice(&j.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(8)? != SIF_MAGIC {
            return Err(Error::Format("bad second inverted file magic".into()));
        }
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let norm = r.f64()?;
            let count = r.u32()? as usize;
            let postings = (0..count)
                .map(|_| Ok((r.u32()?, r.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            if postings.iter().any(|p| p.0 as usize >= n) {
                return Err(Error::Format("posting outside database".into()));
            }
            entries.push(SifEntry { norm, postings });
        }
        r.finish()?;
        Ok(SecondInvertedFile { entries })
    }
}

/// `magic, u32 N`, then per activation `u32 count, count × (u32, f64)`.
pub fn encode_activations(acts: &[SparseActivation]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ACT_MAGIC);
    out.extend_from_slice(&(acts.len() as u32).to_le_bytes());
    for a in acts {
        out.extend_from_slice(&(a.entries.len() as u32).to_le_bytes());
        for &(i, v) in &a.entries {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_activations(buf: &[u8]) -> Result<Vec<SparseActivation>> {
    let mut r = Reader::new(buf);
    if r.take(8)? != ACT_MAGIC {
        return Err(Error::Format("bad activation file magic".into()));
    }
    let n = r.u32()? as usize;
    let mut acts = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let count = r.u32()? as usize;
        let entries = (0..count)
            .map(|_| Ok((r.u32()?, r.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        if entries.windows(2).any(|w| w[0].0 >= w[1].0)
            || entries.iter().any(|e| e.1.is_nan() || e.1 <= 0.0)
        {
            return Err(Error::Format(
                "activation entries unsorted or non-positive".into(),
            ));
        }
        acts.push(SparseActivation::from_sorted(entries));
    }
    r.finish()?;
    Ok(acts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn act(pairs: &[(u32, f64)]) -> SparseActivation {
        SparseActivation::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn top_k_selection() {
        let a = build_activation(&[1.0, 0.8, 0.3, 0.1], 2);
        assert_eq!(a.entries(), &[(0, 1.0), (1, 0.8)]);
        assert!(build_activation(&[0.0; 4], 3).is_empty());
        let t = build_activation(&[0.9, 0.5, 0.5, 0.1], 2);
        assert_eq!(t.entries(), &[(0, 0.9), (1, 0.5)]);
        assert_eq!(build_activation(&[0.2, 0.4], 10).len(), 2);
    }

    #[test]
    fn anchor_always_included() {
        let scores = [0.9, 0.9, 0.9, 0.2];
        assert_eq!(top_neighbors(&scores, 2, Some(2)), vec![2, 0]);
        assert_eq!(top_neighbors(&scores, 2, None), vec![0, 1]);
        assert_eq!(top_neighbors(&scores, 1, Some(3)), vec![3]);
        let a = build_activation_anchored(&scores, 2, Some(2));
        assert_eq!(a.entries(), &[(0, 0.9), (2, 0.9)]);
    }

    #[test]
    fn jaccard_cases() {
        let a = act(&[(0, 0.5), (1, 0.5)]);
        let b = act(&[(0, 0.5), (2, 0.5)]);
        assert!((jaccard_dense(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_dense(&a, &a), 1.0);
        assert_eq!(jaccard_dense(&a, &act(&[(5, 0.3)])), 0.0);
        assert_eq!(jaccard_dense(&act(&[]), &act(&[])), 0.0);
    }

    #[test]
    fn augment_identity_and_fixed_point() {
        let acts = vec![
            act(&[(0, 1.0), (1, 0.4)]),
            act(&[(0, 1.0), (1, 0.4)]),
            act(&[(2, 1.0)]),
        ];
        let selfs: Vec<Vec<u32>> = (0..3).map(|i| vec![i]).collect();
        assert_eq!(neighbor_augment(&acts, &selfs, 1), acts);
        let nbrs = vec![vec![0, 1], vec![1, 0], vec![2, 0]];
        let out = neighbor_augment(&acts, &nbrs, 2);
        assert_eq!(out[0], acts[0]);
        assert_eq!(out[1], acts[1]);
        // k2 truncates longer lists
        assert_eq!(neighbor_augment(&acts, &nbrs, 1), acts);
    }

    #[test]
    fn augment_toy_set_matches_hand_mean() {
        let acts = vec![
            act(&[(0, 1.0), (1, 0.6)]),
            act(&[(1, 1.0), (0, 0.6), (2, 0.2)]),
            act(&[(2, 1.0), (3, 0.7)]),
            act(&[(3, 1.0), (2, 0.7)]),
        ];
        let nbrs = vec![vec![0, 1], vec![1, 0], vec![2, 3], vec![3, 2]];
        let out = neighbor_augment(&acts, &nbrs, 2);
        let want0 = [(0, 0.8), (1, 0.8), (2, 0.1)];
        for (i, v) in want0 {
            assert!((out[0].get(i) - v).abs() < 1e-15);
        }
        assert_eq!(out[0].len(), 3);
        for (i, v) in [(2, 0.85), (3, 0.85)] {
            assert!((out[2].get(i) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn co_augment_cases() {
        let f1 = vec![
            act(&[(0, 1.0), (1, 0.5)]),
            act(&[(1, 1.0), (0, 0.5)]),
            act(&[(2, 1.0)]),
            act(&[(3, 1.0), (2, 0.4)]),
        ];
        let f2 = vec![
            act(&[(0, 0.9)]),
            act(&[(1, 0.9), (2, 0.3)]),
            act(&[(2, 0.9), (1, 0.2)]),
            act(&[(3, 0.9)]),
        ];
        let nbr1 = vec![vec![0, 1], vec![1, 0], vec![2, 3], vec![3, 2]];
        let nbr2 = vec![vec![0, 2], vec![1, 2], vec![2, 1], vec![3, 0]];

        // identical channels collapse to plain augmentation
        let (a, b) = co_augment(&f1, &f1, &nbr1, &nbr1, 2);
        let plain = neighbor_augment(&f1, &nbr1, 2);
        assert_eq!(a, plain);
        assert_eq!(b, plain);

        let (a, b) = co_augment(&f1, &f2, &nbr1, &nbr2, 1);
        assert_eq!((a, b), (f1.clone(), f2.clone()));

        // hand evaluation: F1'_0 = (F1_0 + F1_2)/2, F2'_3 = (F2_3 + F2_2)/2
        let (a, b) = co_augment(&f1, &f2, &nbr1, &nbr2, 2);
        assert_eq!(a[0].entries(), &[(0, 0.5), (1, 0.25), (2, 0.5)]);
        let b3 = b[3].entries();
        assert_eq!(b3.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        for ((_, got), want) in b3.iter().zip([0.1, 0.45, 0.45]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_values() {
        let a = act(&[(0, 0.2), (1, 0.25)]);
        let b = act(&[(0, 0.8), (1, 0.81)]);
        let m1 = aggregate(&a, &b, 1.0);
        assert!((m1.get(0) - 0.5).abs() < 1e-15);
        let mh = aggregate(&a, &b, 0.5);
        assert!((mh.get(1) - 0.49).abs() < 1e-12);
        for alpha in [0.25, 0.5, 1.0, 2.0] {
            assert_eq!(aggregate(&b, &b, alpha), b);
        }
        // missing coordinate counts as zero
        let c = aggregate(&act(&[(3, 0.4)]), &act(&[]), 1.0);
        assert_eq!(c.entries(), &[(3, 0.2)]);
    }

    #[test]
    fn sif_structure() {
        let one = build_sif(&[act(&[(0, 1.0)])]);
        assert_eq!(one.postings(0), &[(0, 1.0)]);
        assert_eq!(one.norm(0), 1.0);

        let acts = vec![
            act(&[(0, 1.0), (2, 0.5)]),
            act(&[(1, 1.0), (2, 0.25)]),
            act(&[(2, 1.0)]),
        ];
        let sif = build_sif(&acts);
        assert_eq!(sif.total_postings(), 5);
        assert_eq!(sif.postings(2), &[(0, 0.5), (1, 0.25), (2, 1.0)]);
        assert_eq!(sif.norm(0), 1.5);
    }

    #[test]
    fn sif_query_cases() {
        let acts = vec![
            act(&[(0, 1.0), (2, 0.5)]),
            act(&[(1, 1.0), (2, 0.25)]),
            act(&[(2, 1.0)]),
        ];
        let sif = build_sif(&acts);
        assert_eq!(sif.query(&acts[1])[1], 1.0);
        assert_eq!(sif.query(&act(&[(7, 1.0)])), vec![0.0; 3]);
        assert_eq!(sif.query(&act(&[])), vec![0.0; 3]);
    }

    #[test]
    fn encode_round_trips() {
        let acts = vec![act(&[(0, 1.0), (2, 0.5)]), act(&[]), act(&[(1, 0.3)])];
        assert_eq!(
            decode_activations(&encode_activations(&acts)).unwrap(),
            acts
        );
        let sif = build_sif(&acts);
        assert_eq!(SecondInvertedFile::decode(&sif.encode()).unwrap(), sif);
        assert!(SecondInvertedFile::decode(b"GIFTSI1\0\x01").is_err());
    }

    fn arb_acts(n: usize) -> impl Strategy<Value = Vec<SparseActivation>> {
        prop::collection::vec(
            prop::collection::vec((0..n as u32, 0.01f64..1.0), 0..8)
                .prop_map(SparseActivation::from_pairs),
            n,
        )
    }

    fn dense_jaccard(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| x.min(*y)).sum();
        let den: f64 = a.iter().zip(b).map(|(x, y)| x.max(*y)).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    proptest! {
        #[test]
        fn sif_equals_dense(acts in arb_acts(12)) {
            let sif = build_sif(&acts);
            for a in &acts {
                prop_assert!((sif.norm(acts.iter().position(|x| x == a).unwrap()) - a.l1()).abs() < 1e-12);
                let s = sif.query(a);
                for (b, got) in acts.iter().zip(&s) {
                    let want = dense_jaccard(&a.to_dense(12), &b.to_dense(12));
                    prop_assert!((got - want).abs() < 1e-12);
                    prop_assert!((jaccard_dense(a, b) - want).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(got));
                }
            }
        }

        #[test]
        fn jaccard_one_iff_equal(a in arb_acts(6), b in arb_acts(6)) {
            for (x, y) in a.iter().zip(&b) {
                let s = jaccard_dense(x, y);
                if x == y && !x.is_empty() {
                    prop_assert_eq!(s, 1.0);
                } else if x != y {
                    prop_assert!(s < 1.0);
                }
                prop_assert!((s - jaccard_dense(y, x)).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregate_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, d in 1e-6f64..1.0, alpha in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0])) {
            let lo = aggregate(&act(&[(0, a)]), &act(&[(0, b)]), alpha).get(0);
            let hi = aggregate(&act(&[(0, a + d)]), &act(&[(0, b)]), alpha).get(0);
            prop_assert!(hi >= lo);
        }
    }
}
