//! Domain types shared by every other module.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, dot};
use crate::rng;
use crate::{Error, Result};

/// Tolerance on the unit-norm invariant of item features and preferences.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Semantic feature vector of one item. Always unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub id: usize,
    pub x: Vec<f64>,
}

impl ItemFeatures {
    /// Normalizes `x` onto the unit sphere.
    pub fn new(id: usize, x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ItemFeatures::new"));
        }
        let x = linalg::normalized(&x, 1e-300).ok_or(Error::NonFinite("ItemFeatures::new"))?;
        Ok(Self { id, x })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_unit(&self) -> bool {
        (linalg::norm(&self.x) - 1.0).abs() < UNIT_NORM_TOL
    }
}

/// Learned user representation; its norm is unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRep {
    pub id: usize,
    pub u: Vec<f64>,
}

/// Frozen ground-truth preference of a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPref {
    pub id: usize,
    pub u_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user_id: usize,
    pub items: Vec<usize>,
}

impl CandidateList {
    pub fn validate(&self, n_items: usize, c: Option<usize>) -> Result<()> {
        let bad = |reason: String| Error::InvalidCandidates {
            user: self.user_id,
            reason,
        };
        if let Some(c) = c {
            if self.items.len() != c {
                return Err(bad(format!("expected {c} items, got {}", self.items.len())));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(self.items.len());
        for &j in &self.items {
            if j >= n_items {
                return Err(bad(format!("item id {j} out of range (n = {n_items})")));
            }
            if !seen.insert(j) {
                return Err(bad(format!("duplicate item id {j}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Simulator output for one user's candidates, one value in `[0, 1]` per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub values: Vec<f64>,
}

impl RelevanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::NonFinite("RelevanceVector::new"));
        }
        Ok(Self { values })
    }
}

/// Personalized linear score `u · x`.
pub fn score(u: &UserRep, x: &ItemFeatures) -> Result<f64> {
    if u.u.len() != x.x.len() {
        return Err(Error::DimensionMismatch {
            expected: u.u.len(),
            got: x.x.len(),
        });
    }
    Ok(dot(&u.u, &x.x))
}

/// Normalized mean of the user's candidate features.
pub fn ground_truth_pref(cands: &CandidateList, items: &[ItemFeatures]) -> Result<GroundTruthPref> {
    let first = cands
        .items
        .first()
        .ok_or(Error::DegenerateCandidates { user: cands.user_id })?;
    let d = items[*first].dim();
    let mut mean = vec![0.0; d];
    for &j in &cands.items {
        let x = &items[j].x;
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    let n = cands.items.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let u_star =
        linalg::normalized(&mean, 1e-12).ok_or(Error::DegenerateCandidates { user: cands.user_id })?;
    Ok(GroundTruthPref {
        id: cands.user_id,
        u_star,
    })
}

/// Hyperparameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub k: usize,
    pub c: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub seed: u64,
    /// Items held out of each user's training subset per round (`c - holdout` are trained on).
    pub train_holdout: usize,
    /// Block gradients through the agent's anticipated response.
    pub detach_agent: bool,
    /// Std-dev of the Gaussian noise added to `u*` when initialising user representations.
    pub init_noise: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 10,
            c: 20,
            rounds: 10,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 64,
            lambda: 0.0,
            alpha: 1.0,
            tau1: 0.1,
            tau2: 1.0,
            sinkhorn_iters: 30,
            sinkhorn_tol: 1e-6,
            seed: 0,
            train_holdout: 10,
            detach_agent: false,
            init_noise: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidHyperParams(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.k > self.c {
            return fail(format!("k ({}) must not exceed c ({})", self.k, self.c));
        }
        if !(self.tau1 > 0.0 && self.tau1.is_finite()) {
            return fail(format!("tau1 must be > 0, got {}", self.tau1));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return fail(format!("tau2 must be > 0, got {}", self.tau2));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.sinkhorn_iters == 0 {
            return fail("sinkhorn_iters must be at least 1".into());
        }
        if !(self.sinkhorn_tol > 0.0) {
            return fail(format!("sinkhorn_tol must be > 0, got {}", self.sinkhorn_tol));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return fail(format!("init_noise must be >= 0, got {}", self.init_noise));
        }
        Ok(())
    }

    /// Number of candidates per user used for training each round.
    ///
    /// Never below `k`, so the relaxed top-k always has `k` rows.
    pub fn train_size(&self) -> usize {
        self.c.saturating_sub(self.train_holdout).max(self.k).min(self.c)
    }
}

/// Everything that defines the market at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub round: usize,
    pub items: Vec<ItemFeatures>,
    pub users: Vec<UserRep>,
    pub candidates: Vec<CandidateList>,
    pub prefs: Vec<GroundTruthPref>,
}

impl MarketState {
    /// Builds the round-0 state: `u*` from the given item features, and user
    /// representations initialised at `u*` plus isotropic Gaussian noise.
    pub fn new<R: Rng + ?Sized>(
        items: Vec<ItemFeatures>,
        candidates: Vec<CandidateList>,
        init_noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        for c in &candidates {
            c.validate(items.len(), None)?;
        }
        let prefs = candidates
            .iter()
            .map(|c| ground_truth_pref(c, &items))
            .collect::<Result<Vec<_>>>()?;
        let users = prefs
            .iter()
            .map(|p| {
                let noise = rng::gaussian_vec(rng, p.u_star.len(), init_noise);
                UserRep {
                    id: p.id,
                    u: p.u_star.iter().zip(noise).map(|(a, b)| a + b).collect(),
                }
            })
            .collect();
        Ok(Self {
            round: 0,
            items,
            users,
            candidates,
            prefs,
        })
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, ItemFeatures::dim)
    }

    /// For each item, the users whose candidate list contains it (ascending ids).
    pub fn audiences(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.items.len()];
        for (i, cands) in self.candidates.iter().enumerate() {
            for &j in &cands.items {
                out[j].push(i);
            }
        }
        out
    }

    /// Candidate features of user `i`, row per candidate.
    pub fn candidate_features(&self, i: usize) -> Vec<&[f64]> {
        self.candidates[i]
            .items
            .iter()
            .map(|&j| self.items[j].x.as_slice())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for it in &self.items {
            if it.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: it.dim(),
                });
            }
            if !it.is_unit() {
                return Err(Error::NonFinite("MarketState item not unit-norm"));
            }
        }
        if self.users.len() != self.candidates.len() || self.prefs.len() != self.candidates.len() {
            return Err(Error::Infeasible(
                "users, candidates and prefs must have equal length".into(),
            ));
        }
        for c in &self.candidates {
            c.validate(self.items.len(), None)?;
        }
        Ok(())
    }
}
