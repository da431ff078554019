use perfrank_core::agent::{best_response, response_objective};
use perfrank_core::diffrank::{
    build_relaxed, exact_gini, exact_ndcg, exact_rank, gini_of, sinkhorn_scale, RelaxedPermutation,
};
use perfrank_core::linalg::{norm, Matrix};
use perfrank_core::ItemFeatures;
use proptest::prelude::*;

fn relevance(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, c)
}

fn pairwise_gini(v: &[f64]) -> f64 {
    let k = v.len() as f64;
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let pairs: f64 = v.iter().flat_map(|a| v.iter().map(move |b| (a - b).abs())).sum();
    pairs / (2.0 * k * total)
}

fn softmax_rows(logits: &[f64], c: usize) -> Matrix {
    let mut m = Matrix::zeros(c, c);
    for r in 0..c {
        let row = &logits[r * c..(r + 1) * c];
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - top).exp()).sum();
        for (q, v) in row.iter().enumerate() {
            m.set(r, q, (v - top).exp() / z);
        }
    }
    m
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    (n > 1e-3).then(|| v.iter().map(|a| a / n).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ndcg_and_gini_are_bounded(
        (r, s) in (2usize..24).prop_flat_map(|c| (relevance(c), prop::collection::vec(-5.0f64..5.0, c))),
        k in 1usize..12,
    ) {
        let pi = exact_rank(&s).unwrap();
        let ndcg = exact_ndcg(&r, &pi, k);
        let gini = exact_gini(&r, &pi, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg), "ndcg {ndcg}");
        prop_assert!((0.0..=1.0).contains(&gini), "gini {gini}");
    }

    #[test]
    fn gini_of_uniform_is_zero(v in 0.01f64..100.0, k in 1usize..40) {
        let mut xs = vec![v; k];
        prop_assert!(gini_of(&mut xs).abs() < 1e-12);
    }

    #[test]
    fn gini_is_scale_invariant(r in prop::collection::vec(0.0f64..10.0, 1..30)) {
        let mut a = r.clone();
        let mut b: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        prop_assert!((gini_of(&mut a) - gini_of(&mut b)).abs() < 1e-10);
    }

    #[test]
    fn sorted_gini_matches_pairwise_form(r in prop::collection::vec(0.0f64..10.0, 1..30)) {
        let mut a = r.clone();
        prop_assert!((gini_of(&mut a) - pairwise_gini(&r)).abs() < 1e-10);
    }

    #[test]
    fn ndcg_of_ideal_order_is_one(r in prop::collection::vec(0.01f64..1.0, 2..20), k in 1usize..10) {
        let pi = exact_rank(&r).unwrap();
        prop_assert!((exact_ndcg(&r, &pi, k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relaxed_rows_are_distributions(s in prop::collection::vec(-3.0f64..3.0, 2..16), tau in 0.01f64..5.0) {
        let p = build_relaxed(&s, tau).unwrap().p_hat;
        for r in 0..p.rows {
            prop_assert!(p.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_makes_softmax_doubly_stochastic(
        (c, logits) in (2usize..=32).prop_flat_map(|c| (Just(c), prop::collection::vec(-4.0f64..4.0, c * c))),
    ) {
        let p = RelaxedPermutation { p_hat: softmax_rows(&logits, c), tau: 1.0 };
        let out = sinkhorn_scale(&p, 10_000, 1e-9);
        prop_assert!(out.converged);
        let m = &out.scaled.p_hat;
        for s in m.row_sums().into_iter().chain(m.col_sums()) {
            prop_assert!((s - 1.0).abs() < 1e-6, "sum {s}");
        }
    }

    #[test]
    fn best_response_is_unit_and_beats_anchors(
        (x, w) in (2usize..20).prop_flat_map(|d| (
            prop::collection::vec(-1.0f64..1.0, d),
            prop::collection::vec(-1.0f64..1.0, d),
        )),
        alpha in 0.05f64..10.0,
    ) {
        let (Some(x), Some(w)) = (unit(x), unit(w)) else { return Ok(()) };
        let item = ItemFeatures::new(0, x.clone()).unwrap();
        let Ok(moved) = best_response(&item, &w, alpha) else { return Ok(()) };
        prop_assert!((norm(&moved.x) - 1.0).abs() < 1e-12);
        let best = response_objective(&x, &w, alpha, &moved.x);
        prop_assert!(best >= response_objective(&x, &w, alpha, &x) - 1e-12);
        prop_assert!(best >= response_objective(&x, &w, alpha, &w) - 1e-12);
    }
}
