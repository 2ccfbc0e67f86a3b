//! Composition of the re-ranking stage over a database.
//!
//! For every database shape the first-stage scores of each channel produce
//! an activation (top `k1`) and a neighbour list (top `k2`), both anchored
//! on the shape itself. Activations are co-augmented across two channels
//! (or augmented within one), then merged by the generalized mean.

use crate::rerank::{
    aggregate_many, build_activation_anchored, build_sif, co_augment, mean_activation,
    neighbor_augment, top_neighbors, SecondInvertedFile, SparseActivation,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
}

/// Database-side re-ranking state for one first-stage scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankContext {
    /// Per channel, per shape: activations before augmentation.
    pub channel_acts: Vec<Vec<SparseActivation>>,
    /// Per shape: augmented and aggregated activations.
    pub final_acts: Vec<SparseActivation>,
    pub sif: SecondInvertedFile,
}

fn augment(
    channel_acts: &[Vec<SparseActivation>],
    neighbors: &[Vec<Vec<u32>>],
    k2: usize,
) -> Result<Vec<Vec<SparseActivation>>> {
    Ok(match channel_acts.len() {
        1 => vec![neighbor_augment(&channel_acts[0], &neighbors[0], k2)],
        2 => {
            let (a, b) = co_augment(
                &channel_acts[0],
                &channel_acts[1],
                &neighbors[0],
                &neighbors[1],
                k2,
            );
            vec![a, b]
        }
        n => {
            return Err(Error::ChannelMismatch(format!(
                "re-ranking supports 1 or 2 channels, got {n}"
            )))
        }
    })
}

fn merge(augmented: &[Vec<SparseActivation>], n: usize, alpha: f64) -> Vec<SparseActivation> {
    crate::par::map_range(n, |q| {
        let per: Vec<&SparseActivation> = augmented.iter().map(|c| &c[q]).collect();
        aggregate_many(&per, alpha)
    })
}

impl RerankContext {
    /// Builds the context. `score_row(q)` returns query `q`'s first-stage
    /// scores against the whole database, one vector per channel.
    pub fn build<F>(n: usize, n_channels: usize, params: RerankParams, score_row: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<Vec<Vec<f64>>> + Sync + Send,
    {
        let rows = crate::par::map_range(n, |q| -> Result<Vec<(SparseActivation, Vec<u32>)>> {
            let per_channel = score_row(q)?;
            if per_channel.len() != n_channels {
                return Err(Error::ChannelMismatch(format!(
                    "scorer returned {} channels, expected {n_channels}",
                    per_channel.len()
                )));
            }
            Ok(per_channel
                .iter()
                .map(|s| {
                    (
                        build_activation_anchored(s, params.k1, Some(q)),
                        top_neighbors(s, params.k2, Some(q)),
                    )
                })
                .collect())
        });
        let mut channel_acts = vec![Vec::with_capacity(n); n_channels];
        let mut neighbors = vec![Vec::with_capacity(n); n_channels];
        for row in rows {
            for (c, (act, nbr)) in row?.into_iter().enumerate() {
                channel_acts[c].push(act);
                neighbors[c].push(nbr);
            }
        }
        let augmented = augment(&channel_acts, &neighbors, params.k2)?;
        let final_acts = merge(&augmented, n, params.alpha);
        let sif = build_sif(&final_acts);
        Ok(RerankContext {
            channel_acts,
            final_acts,
            sif,
        })
    }

    /// Reassembles a context from persisted activations.
    pub fn from_parts(
        channel_acts: Vec<Vec<SparseActivation>>,
        final_acts: Vec<SparseActivation>,
        sif: SecondInvertedFile,
    ) -> Self {
        RerankContext {
            channel_acts,
            final_acts,
            sif,
        }
    }

    /// Activation of a query that is not part of the database.
    ///
    /// Its neighbourhoods are its top database shapes, so a query identical
    /// to a database shape reproduces that shape's activation.
    pub fn query_activation(
        &self,
        scores: &[Vec<f64>],
        params: RerankParams,
    ) -> Result<SparseActivation> {
        if scores.len() != self.channel_acts.len() {
            return Err(Error::ChannelMismatch(format!(
                "query has {} channels, index has {}",
                scores.len(),
                self.channel_acts.len()
            )));
        }
        let neighbors: Vec<Vec<u32>> = scores
            .iter()
            .map(|s| top_neighbors(s, params.k2, None))
            .collect();
        let augmented: Vec<SparseActivation> = match scores.len() {
            1 => vec![mean_activation(&self.channel_acts[0], &neighbors[0])],
            2 => vec![
                mean_activation(&self.channel_acts[0], &neighbors[1]),
                mean_activation(&self.channel_acts[1], &neighbors[0]),
            ],
            n => {
                return Err(Error::ChannelMismatch(format!(
                    "re-ranking supports 1 or 2 channels, got {n}"
                )))
            }
        };
        let refs: Vec<&SparseActivation> = augmented.iter().collect();
        Ok(aggregate_many(&refs, params.alpha))
    }

    /// Re-ranked scores of an external query.
    pub fn query_scores(&self, scores: &[Vec<f64>], params: RerankParams) -> Result<Vec<f64>> {
        Ok(self.sif.query(&self.query_activation(scores, params)?))
    }

    /// Re-ranked scores of database shape `q`.
    pub fn database_scores(&self, q: usize) -> Vec<f64> {
        self.sif.query(&self.final_acts[q])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rerank::jaccard_dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: RerankParams = RerankParams {
        k1: 3,
        k2: 2,
        alpha: 0.5,
    };

    fn random_matrix(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..0.9)).collect())
            .collect();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    }

    #[test]
    fn database_self_scores_one_and_sif_matches_dense() {
        let (a, b) = (random_matrix(1, 8), random_matrix(2, 8));
        let ctx = RerankContext::build(8, 2, P, |q| Ok(vec![a[q].clone(), b[q].clone()])).unwrap();
        for q in 0..8 {
            let s = ctx.database_scores(q);
            assert_eq!(s[q], 1.0);
            for p in 0..8 {
                assert!(
                    (s[p] - jaccard_dense(&ctx.final_acts[q], &ctx.final_acts[p])).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn duplicate_channel_matches_single_channel_ordering() {
        let a = random_matrix(3, 10);
        let one = RerankContext::build(10, 1, P, |q| Ok(vec![a[q].clone()])).unwrap();
        let two = RerankContext::build(10, 2, P, |q| Ok(vec![a[q].clone(), a[q].clone()])).unwrap();
        assert_eq!(one.final_acts, two.final_acts);
    }

    #[test]
    fn external_duplicate_reproduces_database_activation() {
        let (a, b) = (random_matrix(4, 9), random_matrix(5, 9));
        let ctx = RerankContext::build(9, 2, P, |q| Ok(vec![a[q].clone(), b[q].clone()])).unwrap();
        let act = ctx
            .query_activation(&[a[4].clone(), b[4].clone()], P)
            .unwrap();
        assert_eq!(act, ctx.final_acts[4]);
        assert_eq!(
            ctx.query_scores(&[a[4].clone(), b[4].clone()], P).unwrap()[4],
            1.0
        );
    }

    #[test]
    fn channel_count_is_checked() {
        let a = random_matrix(6, 4);
        assert!(RerankContext::build(4, 3, P, |q| Ok(vec![a[q].clone(); 3])).is_err());
        let ctx = RerankContext::build(4, 1, P, |q| Ok(vec![a[q].clone()])).unwrap();
        assert!(ctx
            .query_activation(&[a[0].clone(), a[0].clone()], P)
            .is_err());
    }
}
