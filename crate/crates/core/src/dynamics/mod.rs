//! The multi-round training loop: rank, let creators respond, retrain.
//!
//! Round `t` (1-based) trains user representations on the round's items
//! `X_t`, evaluates the trained ranker on `X_t` with exact metrics over each
//! user's full candidate list, then applies every creator's best response to
//! obtain `X_{t+1}`.

mod eval;
mod loss;

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, mmr_rerank, EvalInput, Evaluation, Ranker};
pub use loss::{user_loss, user_loss_and_grad, LossContext, LossVariant};

use crate::agent::{apply_agent_with, AgentStep};
use crate::grad::Gradients;
use crate::rng;
use crate::simulator::{RelevanceModel, CATEGORIES};
use crate::types::{HyperParams, ItemFeatures, MarketState, UserRep};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AgentBased,
    NonAgent,
    AccuracyOnly,
    Mmr,
    NonRetraining,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::AgentBased,
        PolicyKind::NonAgent,
        PolicyKind::AccuracyOnly,
        PolicyKind::Mmr,
        PolicyKind::NonRetraining,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AgentBased => "agent_based",
            PolicyKind::NonAgent => "non_agent",
            PolicyKind::AccuracyOnly => "accuracy_only",
            PolicyKind::Mmr => "mmr",
            PolicyKind::NonRetraining => "non_retraining",
        }
    }

    /// Objective used when this policy trains. MMR re-ranks an
    /// accuracy-only model; the non-retraining policy trains the agent-based
    /// objective once.
    pub fn loss_variant(self) -> LossVariant {
        match self {
            PolicyKind::AgentBased | PolicyKind::NonRetraining => LossVariant::AgentBased,
            PolicyKind::NonAgent => LossVariant::NonAgent,
            PolicyKind::AccuracyOnly | PolicyKind::Mmr => LossVariant::AccuracyOnly,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidHyperParams(format!("unknown policy `{s}`")))
    }
}

pub const DEFAULT_MMR_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub hyper: HyperParams,
    pub mmr_beta: f64,
}

impl Policy {
    /// Accuracy-only and MMR force `λ = 0`.
    pub fn new(kind: PolicyKind, mut hyper: HyperParams) -> Self {
        if matches!(kind, PolicyKind::AccuracyOnly | PolicyKind::Mmr) {
            hyper.lambda = 0.0;
        }
        Self { kind, hyper, mmr_beta: DEFAULT_MMR_BETA }
    }

    pub fn with_mmr_beta(mut self, beta: f64) -> Self {
        self.mmr_beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(0.0..=1.0).contains(&self.mmr_beta) {
            return Err(Error::InvalidHyperParams(format!("mmr_beta ({}) must be in [0, 1]", self.mmr_beta)));
        }
        Ok(())
    }

    /// The name used in metrics files.
    pub fn label(&self) -> &'static str {
        self.kind.name()
    }
}

/// Metrics of one policy at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub policy: String,
    pub round: usize,
    pub mean_ndcg_at_k: f64,
    pub mean_gini_at_k: f64,
    pub category_freq: [f64; CATEGORIES],
    pub warnings: usize,
}

impl RoundRecord {
    pub fn from_eval(policy: &str, round: usize, e: &Evaluation, warnings: usize) -> Self {
        Self {
            policy: policy.to_string(),
            round,
            mean_ndcg_at_k: e.mean_ndcg,
            mean_gini_at_k: e.mean_gini,
            category_freq: e.category_freq,
            warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    /// Mean training loss over users, before the epoch's updates.
    pub loss: f64,
    /// Exact mean NDCG@k on the full candidate lists after the epoch, when traced.
    pub eval_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub users: Vec<UserRep>,
    pub next_items: Vec<ItemFeatures>,
    pub trace: Vec<EpochStat>,
    pub agent: AgentStep,
}

/// Inputs shared by every round.
pub struct Environment<'a> {
    pub model: &'a RelevanceModel,
    pub categories: &'a [Option<u8>],
    /// Record exact NDCG after every epoch (slower).
    pub trace_eval: bool,
}

/// Runs `f` over `ids`, in parallel when the `parallel` feature is on.
/// Results come back in `ids` order either way.
pub(crate) fn map_users<T, F>(ids: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ids.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.iter().map(|&i| f(i)).collect()
    }
}

/// Per-user training subsets for a round: `train_size` of the user's
/// candidates, drawn with the round's seed and kept in list order.
pub fn training_subsets(state: &MarketState, hyper: &HyperParams, round: usize) -> Vec<Vec<usize>> {
    let mut g = rng::for_round(hyper.seed, round);
    state
        .candidates
        .iter()
        .map(|c| {
            let size = hyper.train_size().min(c.items.len());
            let mut idx = index::sample(&mut g, c.items.len(), size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|p| c.items[p]).collect()
        })
        .collect()
}

fn diverged(round: usize, reason: impl Into<String>) -> Error {
    Error::Diverged { round, reason: reason.into() }
}

/// Algorithm for one round: `epochs` passes of mini-batch gradient descent on
/// the policy's loss, then the creators' best response to the trained users.
/// `state.round` is the 1-based round number.
pub fn train_round(state: &MarketState, policy: &Policy, env: &Environment) -> Result<RoundOutcome> {
    let hyper = &policy.hyper;
    let round = state.round;
    let audiences = state.audiences();
    let mut users = state.users.clone();
    let mut trace = Vec::new();

    let retrain = !(policy.kind == PolicyKind::NonRetraining && round > 1);
    if retrain && hyper.epochs > 0 {
        let subsets = training_subsets(state, hyper, round);
        let variant = policy.kind.loss_variant();
        let mut g = rng::for_round(hyper.seed ^ 0x9e37_79b9_7f4a_7c15, round);
        let mut order: Vec<usize> = (0..users.len()).collect();
        for epoch in 1..=hyper.epochs {
            order.shuffle(&mut g);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(hyper.batch_size.max(1)) {
                let snapshot = users.clone();
                let ctx = LossContext {
                    items: &state.items,
                    users: &snapshot,
                    audiences: &audiences,
                    prefs: &state.prefs,
                    model: env.model,
                    hyper,
                };
                let terms = map_users(batch, |i| user_loss_and_grad(&ctx, i, &subsets[i], variant));
                let mut total = Gradients::default();
                let weight = 1.0 / batch.len() as f64;
                for (i, term) in batch.iter().zip(terms) {
                    let (loss, grads) = term.map_err(|e| {
                        diverged(round, format!("{} user {i} epoch {epoch}: {e}", policy.label()))
                    })?;
                    if !loss.is_finite() {
                        return Err(diverged(round, format!("{} user {i} epoch {epoch}: loss is {loss}", policy.label())));
                    }
                    epoch_loss += loss;
                    total.merge_scaled(&grads, weight);
                }
                for (id, grad) in &total.by_param {
                    for (u, g) in users[*id].u.iter_mut().zip(grad) {
                        *u -= hyper.learning_rate * g;
                    }
                    if users[*id].u.iter().any(|v| !v.is_finite()) {
                        return Err(diverged(round, format!("{}: user {id} representation is not finite", policy.label())));
                    }
                }
            }
            let eval_ndcg = if env.trace_eval {
                let input = eval_input(state, env, hyper.k);
                Some(evaluate(&input, Ranker::Learned(&users))?.mean_ndcg)
            } else {
                None
            };
            trace.push(EpochStat { epoch, loss: epoch_loss / users.len().max(1) as f64, eval_ndcg });
        }
    }

    let agent = apply_agent_with(&state.items, &users, &audiences, hyper.alpha);
    Ok(RoundOutcome { users, next_items: agent.items.clone(), trace, agent })
}

fn eval_input<'a>(state: &'a MarketState, env: &'a Environment, k: usize) -> EvalInput<'a> {
    EvalInput {
        items: &state.items,
        candidates: &state.candidates,
        prefs: &state.prefs,
        model: env.model,
        categories: env.categories,
        k,
    }
}

/// Evaluates `users` on `state`'s items the way `policy` ranks.
pub fn evaluate_policy(state: &MarketState, users: &[UserRep], policy: &Policy, env: &Environment) -> Result<Evaluation> {
    let input = eval_input(state, env, policy.hyper.k);
    let ranker = match policy.kind {
        PolicyKind::Mmr => Ranker::Mmr { users, beta: policy.mmr_beta },
        _ => Ranker::Learned(users),
    };
    evaluate(&input, ranker)
}

/// Round-0 reference: every user's candidates ranked by simulator relevance.
pub fn baseline_metrics(state: &MarketState, env: &Environment, k: usize) -> Result<Evaluation> {
    evaluate(&eval_input(state, env, k), Ranker::Relevance)
}

#[derive(Debug, Clone)]
pub struct DynamicsRun {
    pub records: Vec<RoundRecord>,
    pub final_state: MarketState,
    /// Per-round epoch traces.
    pub traces: Vec<Vec<EpochStat>>,
    /// Mean item displacement of each round's creator response.
    pub displacements: Vec<f64>,
}

/// Runs `rounds` rounds of [`train_round`] from `initial`, recording exact
/// metrics after each. Candidate lists and `u*` are never modified.
pub fn run_dynamics(initial: &MarketState, policy: &Policy, env: &Environment, rounds: usize) -> Result<DynamicsRun> {
    if rounds == 0 {
        return Err(Error::InvalidHyperParams("rounds must be at least 1".into()));
    }
    policy.validate()?;
    let mut state = initial.clone();
    let mut records = Vec::with_capacity(rounds);
    let mut traces = Vec::with_capacity(rounds);
    let mut displacements = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        state.round = t;
        let out = train_round(&state, policy, env)?;
        let eval = evaluate_policy(&state, &out.users, policy, env)?;
        if !(eval.mean_ndcg.is_finite() && eval.mean_gini.is_finite()) {
            return Err(diverged(t, format!("{}: evaluation is not finite", policy.label())));
        }
        records.push(RoundRecord::from_eval(policy.label(), t, &eval, out.agent.warnings));
        traces.push(out.trace);
        displacements.push(out.agent.mean_displacement);
        state.users = out.users;
        state.items = out.next_items;
    }
    state.round = rounds + 1;
    Ok(DynamicsRun { records, final_state: state, traces, displacements })
}

#[cfg(test)]
mod tests;
