use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::{Interaction, InteractionLog};
use crate::linalg::{self, dot};
use crate::rng;
use crate::types::{CandidateList, ItemFeatures, MarketState};
use crate::{Error, Result};

/// Parameters of the synthetic market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub c: usize,
    /// Zipf exponent of item popularity; 0 gives uniform candidate sampling.
    pub popularity_skew: f64,
    pub clusters: usize,
    /// How many of the cluster centers host the popular head items.
    pub popular_clusters: usize,
    /// Fraction of items (by popularity rank) placed around popular centers.
    pub head_fraction: f64,
    /// Per-coordinate standard deviation of item features around their center.
    pub spread: f64,
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            m: 60,
            n: 200,
            d: 16,
            c: 20,
            popularity_skew: 1.2,
            clusters: 8,
            popular_clusters: 2,
            head_fraction: 0.2,
            spread: 0.15,
            init_noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c > self.n {
            return Err(Error::Infeasible(format!(
                "candidate size c ({}) exceeds item count n ({})",
                self.c, self.n
            )));
        }
        if self.d < 2 {
            return Err(Error::Infeasible(format!("d must be at least 2, got {}", self.d)));
        }
        if self.m == 0 || self.c == 0 {
            return Err(Error::Infeasible("m and c must be positive".into()));
        }
        if self.clusters == 0 || self.popular_clusters == 0 || self.popular_clusters > self.clusters {
            return Err(Error::Infeasible(
                "need 1 <= popular_clusters <= clusters".into(),
            ));
        }
        if !(self.popularity_skew >= 0.0 && self.spread >= 0.0 && self.init_noise >= 0.0) {
            return Err(Error::Infeasible("skew, spread and init_noise must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.head_fraction) {
            return Err(Error::Infeasible("head_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Samples a market: item features clustered on the unit sphere, with the
/// most popular items around a few "popular" centers; each user's candidate
/// list drawn without replacement with Zipf popularity weights; and a
/// labelled log pairing each user's candidates with as many random
/// non-candidates, positive when `u*·x` is in the top half of that pool.
pub fn generate_synthetic_market(cfg: &SyntheticConfig) -> Result<(MarketState, InteractionLog)> {
    cfg.validate()?;
    let SyntheticConfig { m, n, d, c, .. } = *cfg;
    let mut g = rng::seeded(cfg.seed);

    let centers: Vec<Vec<f64>> = (0..cfg.clusters).map(|_| rng::unit_vec(&mut g, d)).collect();

    // popularity rank of each item (0 = most popular)
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(&mut g);
    let head = (cfg.head_fraction * n as f64).round() as usize;
    let tail_clusters = cfg.clusters - cfg.popular_clusters;

    let items = (0..n)
        .map(|j| {
            let center = if rank[j] < head || tail_clusters == 0 {
                &centers[g.random_range(0..cfg.popular_clusters)]
            } else {
                &centers[cfg.popular_clusters + g.random_range(0..tail_clusters)]
            };
            loop {
                let noise = rng::gaussian_vec(&mut g, d, cfg.spread);
                let x: Vec<f64> = center.iter().zip(noise).map(|(a, b)| a + b).collect();
                if let Some(x) = linalg::normalized(&x, 1e-9) {
                    return ItemFeatures::new(j, x);
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let weights: Vec<f64> = rank
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.popularity_skew))
        .collect();
    let candidates = (0..m)
        .map(|user_id| {
            let picked = index::sample_weighted(&mut g, n, |j| weights[j], c)
                .map_err(|e| Error::Infeasible(format!("candidate sampling: {e}")))?;
            Ok(CandidateList { user_id, items: picked.into_vec() })
        })
        .collect::<Result<Vec<_>>>()?;

    let state = MarketState::new(items, candidates, cfg.init_noise, &mut g)?;

    let mut log = InteractionLog::default();
    for (i, cands) in state.candidates.iter().enumerate() {
        let mut pool = cands.items.clone();
        let outside: Vec<usize> = (0..n).filter(|j| !cands.items.contains(j)).collect();
        let extra = c.min(outside.len());
        pool.extend(index::sample(&mut g, outside.len(), extra).into_iter().map(|k| outside[k]));

        let u_star = &state.prefs[i].u_star;
        let scores: Vec<f64> = pool.iter().map(|&j| dot(u_star, &state.items[j].x)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        log.rows.extend(pool.iter().zip(&scores).map(|(&item, &s)| Interaction {
            user: i,
            item,
            label: s >= median,
        }));
    }
    Ok((state, log))
}
