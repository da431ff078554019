//! The frozen relevance simulator, synthetic markets and real-data loading.

#[cfg(feature = "io")]
mod ingest;
mod model;
mod popularity;
mod synthetic;
mod train;

#[cfg(feature = "io")]
pub use ingest::{
    ingest_csv, ingest_readers, CandidatePolicy, Encoding, IngestOptions, Ingested, LoadReport,
    PreprocessManifest,
};
pub use model::{layer_widths, relevance, relevance_node, relevance_vector, Layer, RelevanceModel, TapeModel};
pub use popularity::{
    categorize_by_popularity, category_counts, item_frequencies, CATEGORIES, SYNTHETIC_THRESHOLDS,
    YELP_THRESHOLDS,
};
pub use synthetic::{generate_synthetic_market, SyntheticConfig};
pub use train::{train_relevance_model, Interaction, InteractionLog, TrainConfig, TrainReport};

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::Rng;

    use super::*;
    use crate::grad::{check_gradients, Tape};
    use crate::linalg::{dot, Matrix};
    use crate::rng;
    use crate::types::{CandidateList, GroundTruthPref, ItemFeatures};

    #[test]
    fn widths_halve() {
        assert_eq!(layer_widths(16), vec![32, 64, 32, 16, 8, 1]);
        assert_eq!(layer_widths(5), vec![10, 20, 10, 5, 3, 1]);
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = RelevanceModel::zeros(4);
        let mut g = rng::seeded(1);
        for _ in 0..10 {
            let x = rng::unit_vec(&mut g, 4);
            let u = rng::unit_vec(&mut g, 4);
            assert_eq!(m.score_pair(&x, &u).unwrap(), 0.5);
        }
    }

    #[test]
    fn output_strictly_inside_unit_interval() {
        let mut g = rng::seeded(2);
        let m = RelevanceModel::random(6, &mut g);
        for _ in 0..1000 {
            let x = rng::gaussian_vec(&mut g, 6, 3.0);
            let u = rng::gaussian_vec(&mut g, 6, 3.0);
            let r = m.score_pair(&x, &u).unwrap();
            assert!(r > 0.0 && r < 1.0);
        }
    }

    #[test]
    fn hand_set_network_matches_hand_arithmetic() {
        // d = 1: widths 2 → 4 → 2 → 1 → 1 → 1
        let layer = |rows: Vec<Vec<f64>>, b: Vec<f64>| Layer { w: Matrix::from_rows(&rows), b };
        let m = RelevanceModel::from_layers(
            1,
            vec![
                layer(vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 0.0], vec![0.3, -0.3]], vec![0.1, 0.0, 0.2, -5.0]),
                layer(vec![vec![1.0, 1.0, 1.0, 1.0], vec![-1.0, 0.0, 0.0, 0.0]], vec![0.0, 0.5]),
                layer(vec![vec![0.5, 2.0]], vec![-0.25]),
                layer(vec![vec![3.0]], vec![0.0]),
                layer(vec![vec![-0.5]], vec![0.4]),
            ],
        )
        .unwrap();
        let (x, u) = (0.6, 0.8);
        // layer 1
        let h1 = [
            (1.0 * x + 2.0 * u + 0.1f64).max(0.0),
            (-1.0 * x + 0.5 * u + 0.0f64).max(0.0),
            (0.2f64).max(0.0),
            (0.3 * x - 0.3 * u - 5.0f64).max(0.0),
        ];
        let h2 = [(h1.iter().sum::<f64>()).max(0.0), (-h1[0] + 0.5f64).max(0.0)];
        let h3 = (0.5 * h2[0] + 2.0 * h2[1] - 0.25f64).max(0.0);
        let h4 = (3.0 * h3).max(0.0);
        let z = -0.5 * h4 + 0.4;
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((m.score_pair(&[x], &[u]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn relevance_is_deterministic_and_checks_dims() {
        let m = RelevanceModel::random(3, &mut rng::seeded(3));
        let x = ItemFeatures::new(0, vec![1.0, 2.0, 2.0]).unwrap();
        let p = GroundTruthPref { id: 0, u_star: vec![0.0, 1.0, 0.0] };
        assert_eq!(relevance(&m, &x, &p).unwrap(), relevance(&m, &x, &p).unwrap());
        assert!(m.score_pair(&[1.0, 0.0], &p.u_star).is_err());
    }

    #[test]
    fn tape_forward_matches_and_differentiates() {
        let mut g = rng::seeded(4);
        let m = RelevanceModel::random(5, &mut g);
        let u = rng::unit_vec(&mut g, 5);
        let x0 = rng::unit_vec(&mut g, 5);
        let mut tape = Tape::new();
        let xv = tape.const_vec(&x0);
        let r = relevance_node(&mut tape, &m, xv, &u);
        assert!((tape.scalar(r) - m.score_pair(&x0, &u).unwrap()).abs() < 1e-14);

        let report = check_gradients(|t, x| relevance_node(t, &m, x, &u), &x0, 1e-6, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = RelevanceModel::random(7, &mut rng::seeded(5));
        let back = RelevanceModel::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn text_format_rejects_bad_input() {
        let text = RelevanceModel::zeros(2).to_text();
        assert!(RelevanceModel::from_text(&text.replace("v1", "v9")).is_err());
        let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(RelevanceModel::from_text(&truncated).is_err());
        assert!(RelevanceModel::from_text(&text.replacen("layer 0 8 4", "layer 0 8 5", 1)).is_err());
    }

    /// Users and items on the sphere, labelled positive when `u*·x > 0.5`.
    fn separable_log(seed: u64, shuffle_labels: bool) -> (InteractionLog, Vec<ItemFeatures>, Vec<GroundTruthPref>) {
        let mut g = rng::seeded(seed);
        let d = 4;
        let items: Vec<ItemFeatures> = (0..200).map(|j| ItemFeatures::new(j, rng::unit_vec(&mut g, d)).unwrap()).collect();
        let prefs: Vec<GroundTruthPref> =
            (0..100).map(|id| GroundTruthPref { id, u_star: rng::unit_vec(&mut g, d) }).collect();
        let mut rows = Vec::new();
        for p in &prefs {
            // balance classes: take the items near u* plus as many others
            let mut near: Vec<usize> = (0..items.len()).filter(|&j| dot(&p.u_star, &items[j].x) > 0.5).collect();
            let mut far: Vec<usize> = (0..items.len()).filter(|&j| dot(&p.u_star, &items[j].x) <= 0.5).collect();
            near.shuffle(&mut g);
            far.shuffle(&mut g);
            let take = near.len().min(30);
            for &j in near.iter().take(take).chain(far.iter().take(take)) {
                rows.push(Interaction { user: p.id, item: j, label: dot(&p.u_star, &items[j].x) > 0.5 });
            }
        }
        if shuffle_labels {
            let mut labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
            labels.shuffle(&mut g);
            rows.iter_mut().zip(labels).for_each(|(r, l)| r.label = l);
        }
        (InteractionLog { rows }, items, prefs)
    }

    #[test]
    fn separable_log_is_learned() {
        let (log, items, prefs) = separable_log(6, false);
        let cfg = TrainConfig { epochs: 200, learning_rate: 3e-3, ..TrainConfig::default() };
        let (_, report) = train_relevance_model(&log, &items, &prefs, &cfg).unwrap();
        assert!(report.test_accuracy > 0.95, "{report:?}");
        assert_eq!(report.n_train + report.n_val + report.n_test, log.len());
    }

    #[test]
    fn shuffled_labels_are_not_learned() {
        let (log, items, prefs) = separable_log(7, true);
        let cfg = TrainConfig { epochs: 60, ..TrainConfig::default() };
        let (_, report) = train_relevance_model(&log, &items, &prefs, &cfg).unwrap();
        assert!((report.test_accuracy - 0.5).abs() <= 0.05, "{report:?}");
    }

    #[test]
    fn single_class_log_is_rejected() {
        let (mut log, items, prefs) = separable_log(8, false);
        log.rows.iter_mut().for_each(|r| r.label = true);
        let err = train_relevance_model(&log, &items, &prefs, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig { m: 20, n: 50, c: 10, ..SyntheticConfig::default() };
        let (a, la) = generate_synthetic_market(&cfg).unwrap();
        let (b, lb) = generate_synthetic_market(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        a.validate().unwrap();
        assert!(la.positives() > 0 && la.positives() < la.len());
    }

    #[test]
    fn synthetic_rejects_infeasible() {
        let cfg = SyntheticConfig { n: 10, c: 11, ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic_market(&cfg), Err(crate::Error::Infeasible(_))));
    }

    #[test]
    fn zero_skew_gives_binomial_frequencies() {
        let cfg = SyntheticConfig { popularity_skew: 0.0, ..SyntheticConfig::default() };
        let (st, _) = generate_synthetic_market(&cfg).unwrap();
        let freq = item_frequencies(&st.candidates, cfg.n);
        let p = cfg.c as f64 / cfg.n as f64;
        let mean = cfg.m as f64 * p;
        let sd = (cfg.m as f64 * p * (1.0 - p)).sqrt();
        // every item within 3σ would fail by chance for some of 200 items;
        // check the spread of the whole sample instead, plus a 5σ per-item cap
        assert!(freq.iter().all(|&f| (f as f64 - mean).abs() < 5.0 * sd), "{freq:?}");
        let within = freq.iter().filter(|&&f| (f as f64 - mean).abs() <= 3.0 * sd).count();
        assert!(within as f64 >= 0.99 * cfg.n as f64);
        let avg = freq.iter().sum::<usize>() as f64 / cfg.n as f64;
        assert!((avg - mean).abs() < 1e-12);
    }

    #[test]
    fn skew_concentrates_slots_in_top_decile() {
        let cfg = SyntheticConfig { popularity_skew: 1.2, n: 200, ..SyntheticConfig::default() };
        let (st, _) = generate_synthetic_market(&cfg).unwrap();
        let mut freq = item_frequencies(&st.candidates, cfg.n);
        freq.sort_unstable_by(|a, b| b.cmp(a));
        let total: usize = freq.iter().sum();
        let top: usize = freq[..cfg.n / 10].iter().sum();
        assert!(top as f64 > 0.3 * total as f64, "{top}/{total}");
    }

    #[test]
    fn categories() {
        let lists = |v: Vec<Vec<usize>>| -> Vec<CandidateList> {
            v.into_iter().enumerate().map(|(user_id, items)| CandidateList { user_id, items }).collect()
        };
        let cands = lists(vec![vec![0, 1], vec![2, 3]]);
        let cats = categorize_by_popularity(&cands, 5, &YELP_THRESHOLDS).unwrap();
        assert_eq!(cats, vec![Some(1), Some(1), Some(1), Some(1), None]);
        assert_eq!(category_counts(&cats), [4, 0, 0, 0, 0]);

        // frequencies 1, 6, 11, 16, 21 land in one category each
        let mut g = rng::seeded(3);
        let mut rows = Vec::new();
        for _ in 0..21 {
            let mut r = vec![4];
            for (j, f) in [(0usize, 1usize), (1, 6), (2, 11), (3, 16)] {
                if rows.len() < f {
                    r.push(j);
                }
            }
            rows.push(r);
        }
        rows.shuffle(&mut g);
        let cats = categorize_by_popularity(&lists(rows), 6, &YELP_THRESHOLDS).unwrap();
        assert_eq!(cats, vec![Some(1), Some(2), Some(3), Some(4), Some(5), None]);
        assert!(categorize_by_popularity(&cands, 5, &[1, 1, 2, 3]).is_err());
    }

    #[test]
    fn category_counts_cover_nonzero_items() {
        let mut g = rng::seeded(10);
        for _ in 0..20 {
            let n = 30;
            let cands: Vec<CandidateList> = (0..g.random_range(1..15))
                .map(|user_id| CandidateList {
                    user_id,
                    items: rand::seq::index::sample(&mut g, n, 5).into_vec(),
                })
                .collect();
            let cats = categorize_by_popularity(&cands, n, &SYNTHETIC_THRESHOLDS).unwrap();
            let nonzero = item_frequencies(&cands, n).iter().filter(|&&f| f > 0).count();
            assert_eq!(category_counts(&cats).iter().sum::<usize>(), nonzero);
        }
    }
}
