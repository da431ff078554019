//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function wraps a plain Rust function of the same name
//! prefixed with `compute_`, which is what the native tests exercise.

use perfrank_core::agent::{best_response, response_objective};
use perfrank_core::diffrank::{build_relaxed, exact_rank, sinkhorn_scale, DEFAULT_SINKHORN_TOL};
use perfrank_core::dynamics::{baseline_metrics, run_dynamics, Environment, Policy, PolicyKind};
use perfrank_core::simulator::{
    categorize_by_popularity, generate_synthetic_market, train_relevance_model, SyntheticConfig, TrainConfig,
    SYNTHETIC_THRESHOLDS,
};
use perfrank_core::{HyperParams, ItemFeatures};
use wasm_bindgen::prelude::*;

/// A `c × c` relaxed permutation matrix, row-major.
#[wasm_bindgen]
pub struct Heatmap {
    size: usize,
    cells: Vec<f64>,
    order: Vec<u32>,
    row_deviation: f64,
    col_deviation: f64,
}

#[wasm_bindgen]
impl Heatmap {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> Vec<f64> {
        self.cells.clone()
    }

    /// Item index at each position of the exact descending sort.
    pub fn hard_order(&self) -> Vec<u32> {
        self.order.clone()
    }

    pub fn row_deviation(&self) -> f64 {
        self.row_deviation
    }

    pub fn col_deviation(&self) -> f64 {
        self.col_deviation
    }
}

pub fn compute_relaxed_permutation(scores: &[f64], tau: f64, sinkhorn_iters: usize) -> Result<Heatmap, String> {
    let relaxed = build_relaxed(scores, tau).map_err(|e| e.to_string())?;
    let p = if sinkhorn_iters > 0 {
        sinkhorn_scale(&relaxed, sinkhorn_iters, DEFAULT_SINKHORN_TOL).scaled.p_hat
    } else {
        relaxed.p_hat
    };
    let (row_deviation, col_deviation) = p.stochastic_deviation();
    let order = exact_rank(scores).map_err(|e| e.to_string())?;
    Ok(Heatmap {
        size: scores.len(),
        cells: p.data.clone(),
        order: order.perm.iter().map(|&i| i as u32).collect(),
        row_deviation,
        col_deviation,
    })
}

/// Relaxed permutation of `scores` at temperature `tau`, optionally
/// Sinkhorn-scaled (`sinkhorn_iters = 0` skips scaling).
#[wasm_bindgen]
pub fn relaxed_permutation(scores: Vec<f64>, tau: f64, sinkhorn_iters: usize) -> Result<Heatmap, JsError> {
    compute_relaxed_permutation(&scores, tau, sinkhorn_iters).map_err(|e| JsError::new(&e))
}

/// Best response of an item on the unit circle.
#[wasm_bindgen]
pub struct Geometry {
    item: Vec<f64>,
    audience: Vec<f64>,
    response: Vec<f64>,
    objective: Vec<f64>,
}

#[wasm_bindgen]
impl Geometry {
    pub fn item(&self) -> Vec<f64> {
        self.item.clone()
    }

    pub fn audience(&self) -> Vec<f64> {
        self.audience.clone()
    }

    pub fn response(&self) -> Vec<f64> {
        self.response.clone()
    }

    /// Creator objective at `samples` equally spaced angles, starting at 0.
    pub fn objective(&self) -> Vec<f64> {
        self.objective.clone()
    }
}

fn at(angle: f64) -> Vec<f64> {
    vec![angle.cos(), angle.sin()]
}

pub fn compute_best_response_2d(item_angle: f64, audience_angle: f64, alpha: f64, samples: usize) -> Result<Geometry, String> {
    let x = at(item_angle);
    let w = at(audience_angle);
    let item = ItemFeatures::new(0, x.clone()).map_err(|e| e.to_string())?;
    let response = best_response(&item, &w, alpha).map_err(|e| format!("{e:?}"))?.x;
    let objective = (0..samples)
        .map(|s| response_objective(&x, &w, alpha, &at(std::f64::consts::TAU * s as f64 / samples as f64)))
        .collect();
    Ok(Geometry {
        item: x,
        audience: w,
        response,
        objective,
    })
}

#[wasm_bindgen]
pub fn best_response_2d(item_angle: f64, audience_angle: f64, alpha: f64, samples: usize) -> Result<Geometry, JsError> {
    compute_best_response_2d(item_angle, audience_angle, alpha, samples).map_err(|e| JsError::new(&e))
}

/// Per-round metrics of a small market run; index 0 is the relevance-ranked baseline.
#[wasm_bindgen]
pub struct MarketRun {
    ndcg: Vec<f64>,
    gini: Vec<f64>,
    top_share: Vec<f64>,
    displacement: Vec<f64>,
    simulator_accuracy: f64,
}

#[wasm_bindgen]
impl MarketRun {
    pub fn ndcg(&self) -> Vec<f64> {
        self.ndcg.clone()
    }

    pub fn gini(&self) -> Vec<f64> {
        self.gini.clone()
    }

    /// Share of top-k slots held by the most popular category.
    pub fn top_share(&self) -> Vec<f64> {
        self.top_share.clone()
    }

    /// Mean distance items moved after each round (no entry for round 0).
    pub fn displacement(&self) -> Vec<f64> {
        self.displacement.clone()
    }

    pub fn simulator_accuracy(&self) -> f64 {
        self.simulator_accuracy
    }
}

const DEMO_K: usize = 5;

pub fn compute_run_market(policy: &str, lambda: f64, alpha: f64, rounds: usize, seed: u32) -> Result<MarketRun, String> {
    let kind: PolicyKind = policy.parse().map_err(|e: perfrank_core::Error| e.to_string())?;
    let seed = u64::from(seed);
    let syn = SyntheticConfig {
        m: 24,
        n: 80,
        d: 8,
        c: 12,
        seed,
        ..SyntheticConfig::default()
    };
    let (state, log) = generate_synthetic_market(&syn).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        epochs: 150,
        learning_rate: 3e-3,
        seed,
        ..TrainConfig::default()
    };
    let (model, report) = train_relevance_model(&log, &state.items, &state.prefs, &train).map_err(|e| e.to_string())?;
    let categories = categorize_by_popularity(&state.candidates, syn.n, &SYNTHETIC_THRESHOLDS).map_err(|e| e.to_string())?;
    let env = Environment {
        model: &model,
        categories: &categories,
        trace_eval: false,
    };
    let hyper = HyperParams {
        k: DEMO_K,
        c: syn.c,
        rounds,
        epochs: 15,
        learning_rate: 0.1,
        batch_size: 6,
        lambda,
        alpha,
        train_holdout: 4,
        seed,
        ..HyperParams::default()
    };
    let base = baseline_metrics(&state, &env, DEMO_K).map_err(|e| e.to_string())?;
    let run = run_dynamics(&state, &Policy::new(kind, hyper), &env, rounds).map_err(|e| e.to_string())?;

    let share = |c: &[f64; 5]| c[4] / DEMO_K as f64;
    let mut out = MarketRun {
        ndcg: vec![base.mean_ndcg],
        gini: vec![base.mean_gini],
        top_share: vec![share(&base.category_freq)],
        displacement: run.displacements.clone(),
        simulator_accuracy: report.test_accuracy,
    };
    for r in &run.records {
        out.ndcg.push(r.mean_ndcg_at_k);
        out.gini.push(r.mean_gini_at_k);
        out.top_share.push(share(&r.category_freq));
    }
    Ok(out)
}

/// Runs `policy` on a small seeded synthetic market (24 users, 80 items).
#[wasm_bindgen]
pub fn run_market(policy: &str, lambda: f64, alpha: f64, rounds: usize, seed: u32) -> Result<MarketRun, JsError> {
    compute_run_market(policy, lambda, alpha, rounds, seed).map_err(|e| JsError::new(&e))
}
