//! The strategic content creator.
//!
//! Each item is owned by a creator who nudges its features towards the mean
//! taste of its audience (the users whose candidate lists contain it), paying
//! a quadratic modification cost `alpha * ‖x' - x‖²` and staying on the unit
//! sphere. The optimum has the closed form `(ŵ + 2αx) / ‖ŵ + 2αx‖`;
//! [`oracle_best_response`] solves the same problem numerically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{Tape, Var};
use crate::linalg::{self, dot};
use crate::rng;
use crate::types::{CandidateList, ItemFeatures, MarketState, UserRep};

/// Below this norm `ŵ + 2αx` is treated as zero and the item is left as is.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudienceVector {
    pub item_id: usize,
    pub w_hat: Vec<f64>,
    pub audience_size: usize,
}

/// Why an item kept its features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    /// No candidate list contains the item.
    EmptyAudience,
    /// The audience representations average to zero.
    ZeroMean,
    /// `ŵ + 2αx` vanishes (`α = 1/2`, `ŵ = -x`).
    Degenerate,
}

impl Skip {
    /// Empty audiences are expected and not counted as warnings.
    pub fn is_warning(self) -> bool {
        !matches!(self, Skip::EmptyAudience)
    }
}

/// Normalized mean representation of the users in `members`.
pub fn audience_from_members(
    item_id: usize,
    members: &[usize],
    users: &[UserRep],
) -> Result<AudienceVector, Skip> {
    let first = members.first().ok_or(Skip::EmptyAudience)?;
    let mut w = vec![0.0; users[*first].u.len()];
    for &i in members {
        for (a, b) in w.iter_mut().zip(&users[i].u) {
            *a += b;
        }
    }
    let n = members.len() as f64;
    w.iter_mut().for_each(|a| *a /= n);
    let w_hat = linalg::normalized(&w, DEGENERATE_NORM).ok_or(Skip::ZeroMean)?;
    Ok(AudienceVector {
        item_id,
        w_hat,
        audience_size: members.len(),
    })
}

/// Audience vector of `item_id`, scanning every candidate list.
pub fn audience_vector(
    item_id: usize,
    users: &[UserRep],
    candidates: &[CandidateList],
) -> Result<AudienceVector, Skip> {
    let members: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.items.contains(&item_id))
        .map(|(i, _)| i)
        .collect();
    audience_from_members(item_id, &members, users)
}

/// Creator utility `ŵ · x`: the mean audience score of the item.
pub fn item_utility(x: &[f64], w_hat: &[f64]) -> f64 {
    dot(w_hat, x)
}

/// `ŵ · x' - α ‖x' - x‖²`, the quantity the best response maximizes.
pub fn response_objective(x: &[f64], w_hat: &[f64], alpha: f64, candidate: &[f64]) -> f64 {
    let cost: f64 = candidate.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    item_utility(candidate, w_hat) - alpha * cost
}

/// Closed-form best response `(ŵ + 2αx) / ‖ŵ + 2αx‖`.
pub fn best_response(x: &ItemFeatures, w_hat: &[f64], alpha: f64) -> Result<ItemFeatures, Skip> {
    let v: Vec<f64> = w_hat
        .iter()
        .zip(&x.x)
        .map(|(w, xi)| w + 2.0 * alpha * xi)
        .collect();
    let x_new = linalg::normalized(&v, DEGENERATE_NORM).ok_or(Skip::Degenerate)?;
    Ok(ItemFeatures { id: x.id, x: x_new })
}

/// Projected gradient ascent on the unit sphere from several starts. Used
/// only to validate [`best_response`].
pub fn oracle_best_response(x: &[f64], w_hat: &[f64], alpha: f64) -> Vec<f64> {
    const RESTARTS: usize = 8;
    const MAX_ITERS: usize = 10_000;

    let d = x.len();
    let objective = |y: &[f64]| response_objective(x, w_hat, alpha, y);
    let mut g = rng::seeded(0x5eed);
    let mut starts: Vec<Vec<f64>> = vec![x.to_vec()];
    if let Some(w) = linalg::normalized(w_hat, 1e-12) {
        starts.push(w);
    }
    while starts.len() < RESTARTS + 2 {
        starts.push(rng::unit_vec(&mut g, d));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut y = start;
        let mut fy = objective(&y);
        let mut step = 1.0;
        for _ in 0..MAX_ITERS {
            let grad: Vec<f64> = w_hat
                .iter()
                .zip(&y)
                .zip(x)
                .map(|((w, yi), xi)| w - 2.0 * alpha * (yi - xi))
                .collect();
            let moved: Vec<f64> = y.iter().zip(&grad).map(|(a, b)| a + step * b).collect();
            let Some(cand) = linalg::normalized(&moved, 1e-300) else {
                step *= 0.5;
                continue;
            };
            let fc = objective(&cand);
            if fc >= fy {
                let delta = linalg::distance(&cand, &y);
                y = cand;
                fy = fc;
                if delta < 1e-15 {
                    break;
                }
            } else {
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|(fb, _)| fy > *fb) {
            best = Some((fy, y));
        }
    }
    best.map(|(_, y)| y).unwrap_or_else(|| x.to_vec())
}

/// Per-round summary of the agent's moves.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub items: Vec<ItemFeatures>,
    /// Items left unchanged for a warning-worthy reason.
    pub warnings: usize,
    /// Mean `‖Δ_f(x) - x‖` over items with a nonempty audience.
    pub mean_displacement: f64,
}

/// Applies every creator's best response against the current user representations.
pub fn apply_agent(state: &MarketState, alpha: f64) -> AgentStep {
    let audiences = state.audiences();
    apply_agent_with(&state.items, &state.users, &audiences, alpha)
}

pub fn apply_agent_with(
    items: &[ItemFeatures],
    users: &[UserRep],
    audiences: &[Vec<usize>],
    alpha: f64,
) -> AgentStep {
    let mut warnings = 0;
    let mut moved = 0.0;
    let mut active = 0usize;
    let items = items
        .iter()
        .zip(audiences)
        .map(|(item, members)| {
            let response = audience_from_members(item.id, members, users)
                .and_then(|a| best_response(item, &a.w_hat, alpha));
            match response {
                Ok(next) => {
                    active += 1;
                    moved += linalg::distance(&next.x, &item.x);
                    next
                }
                Err(skip) => {
                    if skip.is_warning() {
                        active += 1;
                        warnings += 1;
                    }
                    item.clone()
                }
            }
        })
        .collect();
    AgentStep {
        items,
        warnings,
        mean_displacement: if active == 0 { 0.0 } else { moved / active as f64 },
    }
}

/// Best response recorded on a tape. `audience_mean` is the (unnormalized)
/// mean audience representation, typically a [`Tape::param_mean`] node.
pub fn best_response_node(tape: &mut Tape, x: &[f64], audience_mean: Var, alpha: f64) -> Var {
    let n = tape.norm(audience_mean);
    let w_hat = tape.div_by(audience_mean, n);
    let anchor: Vec<f64> = x.iter().map(|v| 2.0 * alpha * v).collect();
    let anchor = tape.const_vec(&anchor);
    let v = tape.add(w_hat, anchor);
    let nv = tape.norm(v);
    tape.div_by(v, nv)
}

/// Random unit vector pair with `ŵ ≠ ±x`, for tests and demos.
pub fn random_instance<R: Rng + ?Sized>(g: &mut R, d: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let x = rng::unit_vec(g, d);
        let w = rng::unit_vec(g, d);
        if dot(&x, &w).abs() < 1.0 - 1e-6 {
            return (x, w);
        }
    }
}
