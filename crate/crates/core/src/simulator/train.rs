use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::RelevanceModel;
use crate::linalg::Matrix;
use crate::rng;
use crate::types::{GroundTruthPref, ItemFeatures};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub rows: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label).count()
    }

    pub fn validate(&self, n_users: usize, n_items: usize) -> Result<()> {
        for r in &self.rows {
            if r.user >= n_users || r.item >= n_items {
                return Err(Error::Load(format!(
                    "interaction ({}, {}) out of range",
                    r.user, r.item
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Train / validation fractions; the rest is the test split.
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    /// Fresh initializations to try when training ends with a network whose
    /// output no longer depends on its input (all units of a layer dead).
    pub max_attempts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 1e-3,
            batch_size: 32,
            train_frac: 0.7,
            val_frac: 0.2,
            seed: 0,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Epoch whose weights were kept (lowest validation loss), 1-based; 0
    /// means the initial weights.
    pub best_epoch: usize,
    /// Initializations used; more than one means earlier ones collapsed.
    pub attempts: usize,
}

struct Sample {
    input: Vec<f64>,
    label: f64,
}

/// `-[y ln p + (1-y) ln(1-p)]` from the logit, without overflow.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn mean_loss(model: &RelevanceModel, data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter().map(|s| bce_from_logit(model.logit(&s.input), s.label)).sum::<f64>() / data.len() as f64
}

fn accuracy(model: &RelevanceModel, data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .iter()
        .filter(|s| (model.logit(&s.input) > 0.0) == (s.label > 0.5))
        .count();
    hits as f64 / data.len() as f64
}

/// Adds the BCE gradient of one sample to `grads` (same shapes as the layers).
fn accumulate(model: &RelevanceModel, s: &Sample, grads: &mut [(Matrix, Vec<f64>)]) {
    let acts = model.forward_trace(&s.input);
    let mut delta = vec![acts.last().unwrap()[0] - s.label];
    for l in (0..model.layers.len()).rev() {
        let a_in = &acts[l];
        let (gw, gb) = &mut grads[l];
        for (o, dl) in delta.iter().enumerate() {
            gb[o] += dl;
            let row = &mut gw.data[o * gw.cols..(o + 1) * gw.cols];
            row.iter_mut().zip(a_in).for_each(|(g, a)| *g += dl * a);
        }
        if l == 0 {
            break;
        }
        let w = &model.layers[l].w;
        let mut prev = vec![0.0; w.cols];
        for (o, dl) in delta.iter().enumerate() {
            prev.iter_mut().zip(w.row(o)).for_each(|(p, wv)| *p += dl * wv);
        }
        // ReLU derivative, 0 at the kink.
        prev.iter_mut().zip(a_in).for_each(|(p, a)| {
            if *a <= 0.0 {
                *p = 0.0
            }
        });
        delta = prev;
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            **p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits the relevance model to a labelled log by minimizing binary
/// cross-entropy with Adam. Rows are shuffled once and split into
/// train / validation / test; the weights with the lowest validation loss
/// are returned.
pub fn train_relevance_model(
    log: &InteractionLog,
    items: &[ItemFeatures],
    prefs: &[GroundTruthPref],
    cfg: &TrainConfig,
) -> Result<(RelevanceModel, TrainReport)> {
    let pos = log.positives();
    if pos == 0 || pos == log.len() {
        return Err(Error::DegenerateLabels);
    }
    if !(cfg.train_frac > 0.0 && cfg.val_frac >= 0.0 && cfg.train_frac + cfg.val_frac <= 1.0) {
        return Err(Error::InvalidHyperParams("train/validation fractions must be in [0, 1] and sum to at most 1".into()));
    }
    log.validate(prefs.len(), items.len())?;
    let d = items.first().map(|i| i.dim()).ok_or_else(|| Error::Load("no items".into()))?;

    let mut g = rng::seeded(cfg.seed);
    let mut samples: Vec<Sample> = log
        .rows
        .iter()
        .map(|r| {
            let mut input = items[r.item].x.clone();
            input.extend_from_slice(&prefs[r.user].u_star);
            Sample { input, label: if r.label { 1.0 } else { 0.0 } }
        })
        .collect();
    samples.shuffle(&mut g);
    let n = samples.len();
    let n_train = ((n as f64 * cfg.train_frac).round() as usize).clamp(1, n);
    let n_val = ((n as f64 * cfg.val_frac).round() as usize).min(n - n_train);
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    let mut train = samples;

    let mut attempts = 0;
    let (model, best_epoch) = loop {
        attempts += 1;
        let (model, epoch) = fit(RelevanceModel::random(d, &mut g), &mut train, &val, cfg, &mut g)?;
        if attempts >= cfg.max_attempts.max(1) || !is_constant(&model, &train) {
            break (model, epoch);
        }
    };
    let report = TrainReport {
        train_accuracy: accuracy(&model, &train),
        val_accuracy: accuracy(&model, &val),
        test_accuracy: accuracy(&model, &test),
        test_loss: mean_loss(&model, &test),
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        best_epoch,
        attempts,
    };
    Ok((model, report))
}

/// Adam on mini-batches; returns the weights with the lowest validation loss
/// (training loss when there is no validation split) and their epoch.
fn fit(
    mut model: RelevanceModel,
    train: &mut [Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    g: &mut rng::SimRng,
) -> Result<(RelevanceModel, usize)> {
    let n_params: usize = model.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
    let mut adam = Adam::new(n_params);
    let selection_loss = |model: &RelevanceModel, train: &[Sample]| {
        if val.is_empty() {
            mean_loss(model, train)
        } else {
            mean_loss(model, val)
        }
    };
    let mut best = (selection_loss(&model, train), model.clone(), 0);

    for epoch in 1..=cfg.epochs {
        train.shuffle(g);
        for batch in train.chunks(cfg.batch_size.max(1)) {
            let mut grads: Vec<(Matrix, Vec<f64>)> = model
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.w.rows, l.w.cols), vec![0.0; l.b.len()]))
                .collect();
            for s in batch {
                accumulate(&model, s, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            let flat: Vec<f64> = grads
                .iter()
                .flat_map(|(w, b)| w.data.iter().chain(b.iter()))
                .map(|g| g * scale)
                .collect();
            let mut params: Vec<&mut f64> = model
                .layers
                .iter_mut()
                .flat_map(|l| l.w.data.iter_mut().chain(l.b.iter_mut()))
                .collect();
            adam.step(&mut params, &flat, cfg.learning_rate);
        }
        let loss = selection_loss(&model, train);
        if !loss.is_finite() {
            return Err(Error::NonFinite("relevance model training loss"));
        }
        if loss < best.0 {
            best = (loss, model.clone(), epoch);
        }
    }
    Ok((best.1, best.2))
}

fn is_constant(model: &RelevanceModel, data: &[Sample]) -> bool {
    let mut logits = data.iter().map(|s| model.logit(&s.input));
    let Some(first) = logits.next() else { return true };
    logits.all(|z| (z - first).abs() < 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_direct_formula() {
        for z in [-8.0, -2.0, 0.0, 0.7, 6.0] {
            let p = crate::grad::sigmoid(z);
            for y in [0.0, 1.0] {
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                if direct.is_finite() {
                    assert!((bce_from_logit(z, y) - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut g = rng::seeded(12);
        let model = RelevanceModel::random(3, &mut g);
        let input: Vec<f64> = rng::gaussian_vec(&mut g, 6, 1.0);
        let s = Sample { input: input.clone(), label: 1.0 };
        let mut grads: Vec<(Matrix, Vec<f64>)> = model
            .layers
            .iter()
            .map(|l| (Matrix::zeros(l.w.rows, l.w.cols), vec![0.0; l.b.len()]))
            .collect();
        accumulate(&model, &s, &mut grads);
        let h = 1e-6;
        for (l, (gw, gb)) in grads.iter().enumerate() {
            for idx in [0, gw.data.len() / 2, gw.data.len() - 1] {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.layers[l].w.data[idx] += h;
                minus.layers[l].w.data[idx] -= h;
                let fd = (bce_from_logit(plus.logit(&input), 1.0) - bce_from_logit(minus.logit(&input), 1.0)) / (2.0 * h);
                assert!((fd - gw.data[idx]).abs() < 1e-6, "layer {l} w[{idx}]: {fd} vs {}", gw.data[idx]);
            }
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.layers[l].b[0] += h;
            minus.layers[l].b[0] -= h;
            let fd = (bce_from_logit(plus.logit(&input), 1.0) - bce_from_logit(minus.logit(&input), 1.0)) / (2.0 * h);
            assert!((fd - gb[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn collapsed_fit_is_retried() {
        let syn = crate::simulator::SyntheticConfig { m: 24, n: 80, d: 8, c: 12, seed: 0, ..Default::default() };
        let (state, log) = crate::simulator::generate_synthetic_market(&syn).unwrap();
        let cfg = TrainConfig { epochs: 150, learning_rate: 3e-3, ..TrainConfig::default() };
        let once = TrainConfig { max_attempts: 1, ..cfg };
        let (_, r1) = train_relevance_model(&log, &state.items, &state.prefs, &once).unwrap();
        assert_eq!(r1.attempts, 1);
        assert!(r1.train_accuracy < 0.55, "seed no longer collapses: {}", r1.train_accuracy);
        let (_, r) = train_relevance_model(&log, &state.items, &state.prefs, &cfg).unwrap();
        assert!(r.attempts > 1);
        assert!(r.train_accuracy > 0.8, "{}", r.train_accuracy);
    }
}
