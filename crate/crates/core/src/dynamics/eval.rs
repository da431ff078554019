use serde::{Deserialize, Serialize};

use crate::diffrank::{exact_gini, exact_ndcg, exact_rank, HardPermutation};
use crate::linalg::{cosine, dot};
use crate::simulator::{RelevanceModel, CATEGORIES};
use crate::types::{CandidateList, GroundTruthPref, ItemFeatures, UserRep};
use crate::Result;

/// Greedy maximal-marginal-relevance selection of `k` items: the first pick
/// is the top-scoring item, then each step takes the unselected item
/// maximizing `beta·score - (1-beta)·max cosine similarity to the picks`.
/// Ties go to the lower index. Returns the length-`k` prefix.
pub fn mmr_rerank(scores: &[f64], features: &[&[f64]], k: usize, beta: f64) -> Result<HardPermutation> {
    let order = exact_rank(scores)?;
    let k = k.min(scores.len());
    if k == 0 {
        return Ok(HardPermutation { perm: Vec::new() });
    }
    let mut picked = vec![order.perm[0]];
    let mut taken = vec![false; scores.len()];
    taken[order.perm[0]] = true;
    // running max similarity of each item to the picks
    let mut max_sim: Vec<f64> = features.iter().map(|f| cosine(f, features[order.perm[0]])).collect();
    while picked.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..scores.len() {
            if taken[j] {
                continue;
            }
            let v = beta * scores[j] - (1.0 - beta) * max_sim[j];
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        let (j, _) = best.expect("k <= len leaves a candidate");
        taken[j] = true;
        picked.push(j);
        for (s, f) in max_sim.iter_mut().zip(features) {
            *s = s.max(cosine(f, features[j]));
        }
    }
    Ok(HardPermutation { perm: picked })
}

/// How a user's candidates are ordered for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    /// By the learned score `u·x`.
    Learned(&'a [UserRep]),
    /// By simulator relevance, i.e. the ideal ordering.
    Relevance,
    /// Learned scores re-ranked with MMR.
    Mmr { users: &'a [UserRep], beta: f64 },
}

/// Mean exact metrics over users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_ndcg: f64,
    pub mean_gini: f64,
    /// Mean number of top-k items per popularity category (index 0 = category 1).
    pub category_freq: [f64; CATEGORIES],
}

pub struct EvalInput<'a> {
    pub items: &'a [ItemFeatures],
    pub candidates: &'a [CandidateList],
    pub prefs: &'a [GroundTruthPref],
    pub model: &'a RelevanceModel,
    pub categories: &'a [Option<u8>],
    pub k: usize,
}

struct UserEval {
    ndcg: f64,
    gini: f64,
    cats: [f64; CATEGORIES],
}

fn evaluate_user(input: &EvalInput, ranker: Ranker, i: usize) -> Result<UserEval> {
    let cands = &input.candidates[i].items;
    let feats: Vec<&[f64]> = cands.iter().map(|&j| input.items[j].x.as_slice()).collect();
    let u_star = &input.prefs[i].u_star;
    let r: Vec<f64> = feats
        .iter()
        .map(|x| input.model.score_pair(x, u_star))
        .collect::<Result<_>>()?;
    let pi = match ranker {
        Ranker::Learned(users) => exact_rank(&feats.iter().map(|x| dot(&users[i].u, x)).collect::<Vec<_>>())?,
        Ranker::Relevance => exact_rank(&r)?,
        Ranker::Mmr { users, beta } => {
            let s: Vec<f64> = feats.iter().map(|x| dot(&users[i].u, x)).collect();
            mmr_rerank(&s, &feats, input.k, beta)?
        }
    };
    let mut cats = [0.0; CATEGORIES];
    for &pos in pi.top(input.k) {
        if let Some(c) = input.categories[cands[pos]] {
            cats[(c - 1) as usize] += 1.0;
        }
    }
    Ok(UserEval {
        ndcg: exact_ndcg(&r, &pi, input.k),
        gini: exact_gini(&r, &pi, input.k),
        cats,
    })
}

/// Exact NDCG@k, Gini@k and category frequencies of every user's top-k
/// over the full candidate list, averaged over users.
pub fn evaluate(input: &EvalInput, ranker: Ranker) -> Result<Evaluation> {
    let ids: Vec<usize> = (0..input.candidates.len()).collect();
    let per_user = super::map_users(&ids, |i| evaluate_user(input, ranker, i));
    let m = ids.len().max(1) as f64;
    let mut out = Evaluation { mean_ndcg: 0.0, mean_gini: 0.0, category_freq: [0.0; CATEGORIES] };
    for e in per_user {
        let e = e?;
        out.mean_ndcg += e.ndcg;
        out.mean_gini += e.gini;
        out.category_freq.iter_mut().zip(e.cats).for_each(|(a, b)| *a += b);
    }
    out.mean_ndcg /= m;
    out.mean_gini /= m;
    out.category_freq.iter_mut().for_each(|a| *a /= m);
    Ok(out)
}
