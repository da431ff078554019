use rand::Rng;

use super::*;
use crate::agent::apply_agent;
use crate::diffrank::exact_rank;
use crate::grad::{check_gradients, Tape};
use crate::simulator::{categorize_by_popularity, generate_synthetic_market, SyntheticConfig, SYNTHETIC_THRESHOLDS};
use crate::types::CandidateList;

/// A market with every user sharing one candidate list of `c` items, so
/// every audience is the full user set.
fn small_market(seed: u64, m: usize, c: usize, d: usize) -> (MarketState, RelevanceModel) {
    let mut g = rng::seeded(seed);
    let items: Vec<ItemFeatures> = (0..c + 2)
        .map(|j| ItemFeatures::new(j, rng::unit_vec(&mut g, d)).unwrap())
        .collect();
    let candidates: Vec<CandidateList> = (0..m)
        .map(|user_id| CandidateList { user_id, items: index::sample(&mut g, c + 2, c).into_vec() })
        .collect();
    let state = MarketState::new(items, candidates, 0.3, &mut g).unwrap();
    let model = RelevanceModel::random(d, &mut g);
    (state, model)
}

fn hyper(k: usize, c: usize, lambda: f64, alpha: f64) -> HyperParams {
    HyperParams { k, c, lambda, alpha, train_holdout: 0, ..HyperParams::default() }
}

fn ctx<'a>(
    state: &'a MarketState,
    audiences: &'a [Vec<usize>],
    model: &'a RelevanceModel,
    hyper: &'a HyperParams,
) -> LossContext<'a> {
    LossContext { items: &state.items, users: &state.users, audiences, prefs: &state.prefs, model, hyper }
}

#[test]
fn lambda_zero_makes_variants_identical() {
    let (state, model) = small_market(1, 3, 6, 4);
    let aud = state.audiences();
    let h = hyper(3, 6, 0.0, 1.0);
    let c = ctx(&state, &aud, &model, &h);
    let subset = &state.candidates[0].items;
    let a = user_loss_and_grad(&c, 0, subset, LossVariant::AgentBased).unwrap();
    let b = user_loss_and_grad(&c, 0, subset, LossVariant::NonAgent).unwrap();
    let o = user_loss_and_grad(&c, 0, subset, LossVariant::AccuracyOnly).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, o);
}

#[test]
fn huge_alpha_agent_matches_non_agent() {
    let (state, model) = small_market(2, 3, 6, 4);
    let aud = state.audiences();
    let h = hyper(3, 6, 2.0, 1e9);
    let c = ctx(&state, &aud, &model, &h);
    let subset = &state.candidates[1].items;
    let (la, ga) = user_loss_and_grad(&c, 1, subset, LossVariant::AgentBased).unwrap();
    let (ln, gn) = user_loss_and_grad(&c, 1, subset, LossVariant::NonAgent).unwrap();
    assert!((la - ln).abs() < 1e-4, "{la} {ln}");
    for (a, b) in ga.get(1).unwrap().iter().zip(gn.get(1).unwrap()) {
        assert!((a - b).abs() < 1e-4);
    }
}

fn fd_check(seed: u64, variant: LossVariant, c: usize, k: usize, d: usize) -> crate::grad::GradCheckReport {
    // one user: its own representation drives every audience mean
    let (state, model) = small_market(seed, 1, c, d);
    let aud = state.audiences();
    let h = hyper(k, c, 3.0, 1.0);
    let subset = state.candidates[0].items.clone();
    let point = state.users[0].u.clone();
    check_gradients(
        |t: &mut Tape, u| {
            let mut st = state.clone();
            st.users[0].u = t.value(u).data.clone();
            let cx = LossContext { users: &st.users, ..ctx(&state, &aud, &model, &h) };
            user_loss(t, &cx, 0, u, &subset, variant).unwrap()
        },
        &point,
        1e-5,
        1e-4,
    )
    .unwrap()
}

#[test]
fn agent_loss_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let r = fd_check(seed, LossVariant::AgentBased, 6, 3, 4);
        assert!(r.passed(), "seed {seed}: {r:?}");
    }
    let r = fd_check(9, LossVariant::NonAgent, 6, 3, 4);
    assert!(r.passed(), "{r:?}");
}

#[test]
fn agent_gradient_reaches_other_audience_members() {
    let (state, model) = small_market(3, 4, 6, 4);
    let aud = state.audiences();
    let h = hyper(3, 6, 5.0, 1.0);
    let c = ctx(&state, &aud, &model, &h);
    let (_, g) = user_loss_and_grad(&c, 0, &state.candidates[0].items, LossVariant::AgentBased).unwrap();
    assert!(g.by_param.len() > 1);

    let detached = HyperParams { detach_agent: true, ..h };
    let c = ctx(&state, &aud, &model, &detached);
    let (_, g) = user_loss_and_grad(&c, 0, &state.candidates[0].items, LossVariant::AgentBased).unwrap();
    assert_eq!(g.by_param.keys().copied().collect::<Vec<_>>(), vec![0]);
}

fn synthetic_env(m: usize, seed: u64) -> (MarketState, RelevanceModel, Vec<Option<u8>>) {
    let cfg = SyntheticConfig { m, n: 60, d: 6, c: 12, seed, ..SyntheticConfig::default() };
    let (state, _) = generate_synthetic_market(&cfg).unwrap();
    let model = RelevanceModel::random(cfg.d, &mut rng::seeded(seed));
    let cats = categorize_by_popularity(&state.candidates, cfg.n, &SYNTHETIC_THRESHOLDS).unwrap();
    (state, model, cats)
}

fn quick_hyper() -> HyperParams {
    HyperParams { k: 5, c: 12, epochs: 3, rounds: 2, lambda: 2.0, train_holdout: 4, batch_size: 8, ..HyperParams::default() }
}

#[test]
fn zero_epochs_leave_users_and_apply_agent() {
    let (mut state, model, cats) = synthetic_env(10, 4);
    state.round = 1;
    let env = Environment { model: &model, categories: &cats, trace_eval: false };
    let policy = Policy::new(PolicyKind::AgentBased, HyperParams { epochs: 0, ..quick_hyper() });
    let out = train_round(&state, &policy, &env).unwrap();
    assert_eq!(out.users, state.users);
    assert_eq!(out.next_items, apply_agent(&state, policy.hyper.alpha).items);
    assert!(out.trace.is_empty());
}

#[test]
fn non_retraining_trains_only_in_round_one() {
    let (mut state, model, cats) = synthetic_env(10, 5);
    let env = Environment { model: &model, categories: &cats, trace_eval: false };
    let policy = Policy::new(PolicyKind::NonRetraining, quick_hyper());
    state.round = 1;
    assert_ne!(train_round(&state, &policy, &env).unwrap().users, state.users);
    state.round = 2;
    let out = train_round(&state, &policy, &env).unwrap();
    assert_eq!(out.users, state.users);
    assert!(out.trace.is_empty());
}

#[test]
fn run_is_deterministic_and_preserves_invariants() {
    let (state, model, cats) = synthetic_env(12, 6);
    let env = Environment { model: &model, categories: &cats, trace_eval: false };
    for kind in PolicyKind::ALL {
        let policy = Policy::new(kind, quick_hyper());
        let a = run_dynamics(&state, &policy, &env, 2).unwrap();
        let b = run_dynamics(&state, &policy, &env, 2).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 2);
        assert_eq!(a.final_state.prefs, state.prefs);
        assert_eq!(a.final_state.candidates, state.candidates);
        assert!(a.final_state.items.iter().all(ItemFeatures::is_unit));
        for r in &a.records {
            assert!((0.0..=1.0).contains(&r.mean_ndcg_at_k));
            assert!((0.0..=1.0).contains(&r.mean_gini_at_k));
            assert!((r.category_freq.iter().sum::<f64>() - 5.0).abs() < 1e-9);
            assert_eq!(r.policy, kind.name());
        }
    }
}

#[test]
fn single_round_is_train_plus_eval() {
    let (mut state, model, cats) = synthetic_env(8, 7);
    let env = Environment { model: &model, categories: &cats, trace_eval: false };
    let policy = Policy::new(PolicyKind::NonAgent, quick_hyper());
    let run = run_dynamics(&state, &policy, &env, 1).unwrap();
    state.round = 1;
    let out = train_round(&state, &policy, &env).unwrap();
    let eval = evaluate_policy(&state, &out.users, &policy, &env).unwrap();
    assert_eq!(run.records[0], RoundRecord::from_eval("non_agent", 1, &eval, out.agent.warnings));
    assert_eq!(run.final_state.items, out.next_items);
}

#[test]
fn policy_forces_lambda() {
    let h = HyperParams { lambda: 7.0, ..HyperParams::default() };
    assert_eq!(Policy::new(PolicyKind::AccuracyOnly, h.clone()).hyper.lambda, 0.0);
    assert_eq!(Policy::new(PolicyKind::Mmr, h.clone()).hyper.lambda, 0.0);
    assert_eq!(Policy::new(PolicyKind::AgentBased, h.clone()).hyper.lambda, 7.0);
    assert!(Policy::new(PolicyKind::Mmr, h).with_mmr_beta(1.5).validate().is_err());
    assert_eq!("non_agent".parse::<PolicyKind>().unwrap(), PolicyKind::NonAgent);
    assert!("greedy".parse::<PolicyKind>().is_err());
}

#[test]
fn training_subsets_are_stable_subsets() {
    let (state, _, _) = synthetic_env(10, 8);
    let h = quick_hyper();
    let a = training_subsets(&state, &h, 3);
    assert_eq!(a, training_subsets(&state, &h, 3));
    for (s, c) in a.iter().zip(&state.candidates) {
        assert_eq!(s.len(), h.train_size());
        assert!(s.iter().all(|j| c.items.contains(j)));
    }
}

#[test]
fn mmr_pure_relevance_is_exact_rank() {
    let mut g = rng::seeded(10);
    for _ in 0..50 {
        let n = g.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
        let feats: Vec<Vec<f64>> = (0..n).map(|_| rng::unit_vec(&mut g, 4)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let k = g.random_range(1..=n);
        let mmr = mmr_rerank(&scores, &refs, k, 1.0).unwrap();
        assert_eq!(mmr.perm, exact_rank(&scores).unwrap().top(k));
        let first = mmr_rerank(&scores, &refs, 1, g.random::<f64>()).unwrap();
        assert_eq!(first.perm, exact_rank(&scores).unwrap().top(1));
    }
}

/// Brute-force reference: at every step, scan all unselected items and take
/// the best marginal value (lowest index on ties).
fn mmr_reference(scores: &[f64], feats: &[Vec<f64>], k: usize, beta: f64) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < k {
        let value = |j: usize| {
            if picked.is_empty() {
                return scores[j];
            }
            let sim = picked.iter().map(|&p| crate::linalg::cosine(&feats[j], &feats[p])).fold(f64::MIN, f64::max);
            beta * scores[j] - (1.0 - beta) * sim
        };
        let next = (0..scores.len())
            .filter(|j| !picked.contains(j))
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if value(b) >= value(j) => Some(b),
                _ => Some(j),
            })
            .unwrap();
        picked.push(next);
    }
    picked
}

#[test]
fn mmr_keeps_one_of_a_duplicate_pair() {
    let mut g = rng::seeded(11);
    for _ in 0..100 {
        let mut feats: Vec<Vec<f64>> = (0..6).map(|_| rng::unit_vec(&mut g, 8)).collect();
        feats[1] = feats[0].clone();
        let scores: Vec<f64> = (0..6).map(|_| g.random_range(0.4..0.6)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        for k in 2..=4 {
            let got = mmr_rerank(&scores, &refs, k, 0.5).unwrap().perm;
            assert_eq!(got, mmr_reference(&scores, &feats, k, 0.5));
            assert!(!(got.contains(&0) && got.contains(&1)), "{got:?}");
        }
    }
}
