//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion and
//! exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use perfrank_cli::experiment::{self, prepare, run_policy};
use perfrank_cli::ExperimentConfig;
use perfrank_core::agent::{best_response, oracle_best_response, random_instance, response_objective};
use perfrank_core::diffrank::{
    build_relaxed, dr_gini, dr_ndcg, exact_gini, exact_ndcg, exact_rank, gini_of, sinkhorn_scale, RelaxConfig,
    RelaxedPermutation,
};
use perfrank_core::dynamics::{user_loss, LossContext, LossVariant, PolicyKind};
use perfrank_core::grad::{check_gradients, Tape};
use perfrank_core::linalg::{distance, Matrix};
use perfrank_core::rng;
use perfrank_core::simulator::RelevanceModel;
use perfrank_core::types::CandidateList;
use perfrank_core::{HyperParams, ItemFeatures, MarketState};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::index;
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Closed-form best response against the numeric optimum, plus a random
/// search that must never beat it.
fn best_response_oracle() -> Outcome {
    let mut g = rng::seeded(1);
    let dims = [4, 16, 43];
    let alphas = [0.5, 1.0, 3.0, 5.0];
    let mut worst_gap: f64 = 0.0;
    let mut beaten = 0;
    for i in 0..200 {
        let d = dims[i % 3];
        let alpha = alphas[(i / 3) % 4];
        let (x, w) = random_instance(&mut g, d);
        let closed = best_response(&ItemFeatures::new(0, x.clone()).unwrap(), &w, alpha).unwrap();
        worst_gap = worst_gap.max(distance(&closed.x, &oracle_best_response(&x, &w, alpha)));
        let best = response_objective(&x, &w, alpha, &closed.x);
        for _ in 0..1000 {
            let y = rng::unit_vec(&mut g, d);
            if response_objective(&x, &w, alpha, &y) > best + 1e-12 {
                beaten += 1;
            }
        }
    }
    verdict(
        worst_gap < 1e-5 && beaten == 0,
        format!("max |closed - numeric| = {worst_gap:.2e} over 200 instances; random vectors beating it: {beaten}"),
    )
}

fn relaxed_to_exact() -> Outcome {
    let mut g = rng::seeded(2);
    let (c, k) = (12, 5);
    let cfg = RelaxConfig::new(k, 1e-4);
    let (mut ndcg_gap, mut gini_gap): (f64, f64) = (0.0, 0.0);
    let mut done = 0;
    while done < 100 {
        let s: Vec<f64> = (0..c).map(|_| g.random_range(-1.0..1.0)).collect();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        // distinct scores: no two closer than 1e-3
        if sorted.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            continue;
        }
        let r: Vec<f64> = (0..c).map(|_| g.random_range(0.0..1.0)).collect();
        let pi = exact_rank(&s).unwrap();
        ndcg_gap = ndcg_gap.max((dr_ndcg(&s, &r, cfg) - exact_ndcg(&r, &pi, k)).abs());
        gini_gap = gini_gap.max((dr_gini(&s, &r, cfg) - 2.0 * exact_gini(&r, &pi, k)).abs());
        done += 1;
    }
    verdict(
        ndcg_gap < 1e-3 && gini_gap < 1e-3,
        format!("max NDCG gap {ndcg_gap:.2e}, max Gini gap (relaxed vs 2x exact) {gini_gap:.2e}"),
    )
}

fn loss_gradient() -> Outcome {
    let (c, k, d, m) = (8, 3, 6, 3);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..20 {
        let mut g = rng::seeded(100 + seed);
        let items: Vec<ItemFeatures> = (0..c + 3)
            .map(|j| ItemFeatures::new(j, rng::unit_vec(&mut g, d)).unwrap())
            .collect();
        let candidates: Vec<CandidateList> = (0..m)
            .map(|user_id| CandidateList { user_id, items: index::sample(&mut g, c + 3, c).into_vec() })
            .collect();
        let state = MarketState::new(items, candidates, 0.3, &mut g).unwrap();
        let model = RelevanceModel::random(d, &mut g);
        let audiences = state.audiences();
        let hyper = HyperParams { k, c, lambda: 3.0, alpha: 1.0, train_holdout: 0, ..HyperParams::default() };
        let subset = state.candidates[0].items.clone();
        let report = check_gradients(
            |t: &mut Tape, u| {
                let ctx = LossContext {
                    items: &state.items,
                    users: &state.users,
                    audiences: &audiences,
                    prefs: &state.prefs,
                    model: &model,
                    hyper: &hyper,
                };
                user_loss(t, &ctx, 0, u, &subset, LossVariant::AgentBased).unwrap()
            },
            &state.users[0].u,
            1e-5,
            1e-4,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
        failures += usize::from(!report.passed());
    }
    verdict(
        failures == 0,
        format!("max relative error {worst:.2e} over 20 instances, {failures} failing"),
    )
}

fn sinkhorn() -> Outcome {
    let mut g = rng::seeded(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = g.random_range(2..=32);
        let mut m = Matrix::zeros(c, c);
        for r in 0..c {
            let logits: Vec<f64> = (0..c).map(|_| g.random_range(-3.0..3.0)).collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            for (q, v) in logits.iter().enumerate() {
                m.set(r, q, v.exp() / z);
            }
        }
        let out = sinkhorn_scale(&RelaxedPermutation { p_hat: m, tau: 1.0 }, 1000, 1e-7);
        let (rows, cols) = out.scaled.p_hat.stochastic_deviation();
        worst = worst.max(rows).max(cols);
    }
    verdict(worst < 1e-6, format!("max row/column deviation {worst:.2e} over 100 matrices"))
}

fn metric_bounds() -> Outcome {
    let mut runner = TestRunner::new(PropConfig { cases: 2000, failure_persistence: None, ..PropConfig::default() });
    let strategy = (2usize..30)
        .prop_flat_map(|c| {
            (
                prop::collection::vec(0.0f64..1.0, c),
                prop::collection::vec(-5.0f64..5.0, c),
                1usize..=c,
            )
        })
        .prop_flat_map(|(r, s, k)| (Just(r), Just(s), Just(k), 0.01f64..10.0));
    let result = runner.run(&strategy, |(r, s, k, level)| {
        let pi = exact_rank(&s).unwrap();
        let ndcg = exact_ndcg(&r, &pi, k);
        let gini = exact_gini(&r, &pi, k);
        prop_assert!((0.0..=1.0).contains(&ndcg), "ndcg {}", ndcg);
        prop_assert!((0.0..=1.0).contains(&gini), "gini {}", gini);
        let mut uniform = vec![level; k];
        prop_assert!(gini_of(&mut uniform).abs() < 1e-12);
        let mut a = r.clone();
        let mut b: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        prop_assert!((gini_of(&mut a) - gini_of(&mut b)).abs() < 1e-10);
        // relaxed rows stay distributions
        let p = build_relaxed(&s, 0.5).unwrap().p_hat;
        prop_assert!(p.row_sums().iter().all(|v| (v - 1.0).abs() < 1e-12));
        Ok(())
    });
    match result {
        Ok(()) => Outcome::Pass("2000 random cases: NDCG, Gini in [0,1]; Gini(uniform) = 0; Gini(3r) = Gini(r)".into()),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn trend_config() -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs/trend.toml")).expect("trend config loads")
}

fn dynamic_trends() -> Outcome {
    let cfg = trend_config();
    let prep = match prepare(&cfg) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let base = match experiment::baseline(&cfg, &prep) {
        Ok(b) => b,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let run = |kind| run_policy(&cfg, &prep, kind);
    let (acc, agent, non_agent) = match (run(PolicyKind::AccuracyOnly), run(PolicyKind::AgentBased), run(PolicyKind::NonAgent)) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return Outcome::Fail(e.to_string()),
    };
    let last = |r: &perfrank_core::dynamics::DynamicsRun| r.records.last().cloned().expect("rounds > 0");
    let (acc_1, acc_t) = (acc.records[0].clone(), last(&acc));
    let (agent_t, non_agent_t) = (last(&agent), last(&non_agent));

    let a = acc_t.mean_ndcg_at_k >= acc_1.mean_ndcg_at_k;
    let b = agent_t.mean_gini_at_k - acc_t.mean_gini_at_k >= 0.02;
    let c = agent_t.mean_gini_at_k >= non_agent_t.mean_gini_at_k;
    let d = agent_t.category_freq[4] < base.category_freq[4];
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    verdict(
        a && b && c && d,
        format!(
            "(a) accuracy_only NDCG {:.4} -> {:.4} {}; (b) Gini agent_based {:.4} vs accuracy_only {:.4} {}; \
             (c) vs non_agent {:.4} {}; (d) top-category frequency {:.2} -> {:.2} {} [lambda {}, batch {}]",
            acc_1.mean_ndcg_at_k,
            acc_t.mean_ndcg_at_k,
            mark(a),
            agent_t.mean_gini_at_k,
            acc_t.mean_gini_at_k,
            mark(b),
            non_agent_t.mean_gini_at_k,
            mark(c),
            base.category_freq[4],
            agent_t.category_freq[4],
            mark(d),
            cfg.hyper.lambda,
            cfg.hyper.batch_size,
        ),
    )
}

fn alpha_monotonicity() -> Outcome {
    let mut cfg = trend_config();
    cfg.hyper.rounds = 1;
    let prep = match prepare(&cfg) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut disp = Vec::new();
    for alpha in [1.0, 5.0] {
        cfg.hyper.alpha = alpha;
        match run_policy(&cfg, &prep, PolicyKind::AgentBased) {
            Ok(r) => disp.push(r.displacements[0]),
            Err(e) => return Outcome::Fail(e.to_string()),
        }
    }
    verdict(
        disp[1] < disp[0],
        format!("mean displacement at round 1: alpha=1 {:.4}, alpha=5 {:.4}", disp[0], disp[1]),
    )
}

fn real_data_baseline() -> Outcome {
    let Ok(path) = std::env::var("PERFRANK_YELP_CONFIG") else {
        return Outcome::Skip("set PERFRANK_YELP_CONFIG to a config with a [data.csv] source to run".into());
    };
    let cfg = match ExperimentConfig::load(Path::new(&path)) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let result = prepare(&cfg).and_then(|p| experiment::baseline(&cfg, &p));
    match result {
        Ok(e) => verdict(
            (e.mean_gini - 0.0149).abs() <= 0.005,
            format!("mean Gini@{} {:.4} (target 0.0149 +- 0.005)", cfg.hyper.k, e.mean_gini),
        ),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn determinism() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let config = repo_root().join("configs/quick.toml");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let status = Command::new(env!("CARGO_BIN_EXE_perfrank"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(name))
            .output();
        match status {
            Ok(o) if o.status.success() => {}
            Ok(o) => return Outcome::Fail(String::from_utf8_lossy(&o.stderr).into_owned()),
            Err(e) => return Outcome::Fail(e.to_string()),
        }
        outputs.push(std::fs::read(dir.path().join(name).join("metrics.csv")).unwrap_or_default());
    }
    verdict(
        !outputs[0].is_empty() && outputs[0] == outputs[1],
        format!("two `perfrank run` invocations, metrics.csv {} bytes each, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form best response matches the numeric optimum", best_response_oracle),
        ("relaxed metrics converge to exact at low temperature", relaxed_to_exact),
        ("agent-based loss gradient matches finite differences", loss_gradient),
        ("Sinkhorn scaling is doubly stochastic", sinkhorn),
        ("ranking metric bounds and invariances", metric_bounds),
        ("dynamic trends on the synthetic market", dynamic_trends),
        ("larger alpha moves items less", alpha_monotonicity),
        ("real-data round-0 Gini", real_data_baseline),
        ("identical runs give identical metrics", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = check();
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {} {name} ({secs:.1}s): {detail}", i + 1);
    }
    println!("acceptance: {} of {} criteria failed", failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
