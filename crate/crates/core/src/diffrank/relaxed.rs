use serde::{Deserialize, Serialize};

use super::exact::{discount, ideal_dcg};
use crate::grad::{Tape, Var};
use crate::linalg::Matrix;
use crate::{Error, Result};

pub const DEFAULT_SINKHORN_ITERS: usize = 30;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-6;

/// Temperature-smoothed permutation matrix. Row `p` is a distribution over
/// which item sits at position `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedPermutation {
    pub p_hat: Matrix,
    pub tau: f64,
}

/// Result of [`sinkhorn_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub scaled: RelaxedPermutation,
    pub iterations: usize,
    /// `false` when `iters` ran out before reaching `tol`; the best iterate is still returned.
    pub converged: bool,
    pub max_deviation: f64,
}

/// Coefficient `(c + 1 - 2p)` for 1-based position `p`, indexed from 0.
fn position_coefficients(c: usize) -> Vec<f64> {
    (0..c).map(|p| c as f64 - 1.0 - 2.0 * p as f64).collect()
}

/// Per-row logits `(c + 1 - 2p) r - A 1` with `A[p, q] = |r_p - r_q|`.
fn perm_logits(r: &[f64]) -> Matrix {
    let c = r.len();
    let spread: Vec<f64> = r
        .iter()
        .map(|&x| r.iter().map(|&y| (x - y).abs()).sum())
        .collect();
    let coef = position_coefficients(c);
    let mut m = Matrix::zeros(c, c);
    for (p, cp) in coef.iter().enumerate() {
        for q in 0..c {
            m.set(p, q, cp * r[q] - spread[q]);
        }
    }
    m
}

/// Deterministic sorting permutation as a 0/1 matrix: `P · r` is `r` sorted descending.
pub fn hard_perm_matrix(r: &[f64]) -> Result<Matrix> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hard_perm_matrix"));
    }
    let c = r.len();
    let logits = perm_logits(r);
    let mut out = Matrix::zeros(c, c);
    for p in 0..c {
        let row = logits.row(p);
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..c).filter(|&q| row[q] == best).collect();
        if winners.len() != 1 {
            return Err(Error::AmbiguousArgmax);
        }
        out.set(p, winners[0], 1.0);
    }
    // Rows pick the same column only when entries repeat.
    if out.col_sums().iter().any(|&s| s != 1.0) {
        return Err(Error::AmbiguousArgmax);
    }
    Ok(out)
}

/// Row-wise softmax of the permutation logits at temperature `tau`.
pub fn build_relaxed(r: &[f64], tau: f64) -> Result<RelaxedPermutation> {
    if !(tau > 0.0) || r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("build_relaxed"));
    }
    let mut tape = Tape::new();
    let s = tape.const_vec(r);
    let p = relaxed_perm_node(&mut tape, s, tau);
    Ok(RelaxedPermutation {
        p_hat: tape.value(p).clone(),
        tau,
    })
}

/// Alternating column/row normalization until every row and column sum is
/// within `tol` of one, or `iters` sweeps have run.
pub fn sinkhorn_scale(p_hat: &RelaxedPermutation, iters: usize, tol: f64) -> SinkhornOutcome {
    let mut m = p_hat.p_hat.clone();
    let dev = |m: &Matrix| {
        let (r, c) = m.stochastic_deviation();
        r.max(c)
    };
    let mut max_deviation = dev(&m);
    let mut iterations = 0;
    while max_deviation >= tol && iterations < iters {
        let cols = m.col_sums();
        for r in 0..m.rows {
            for (q, s) in cols.iter().enumerate() {
                if *s > 0.0 {
                    let v = m.get(r, q) / s;
                    m.set(r, q, v);
                }
            }
        }
        let rows = m.row_sums();
        for (r, s) in rows.iter().enumerate() {
            if *s > 0.0 {
                for q in 0..m.cols {
                    let v = m.get(r, q) / s;
                    m.set(r, q, v);
                }
            }
        }
        iterations += 1;
        max_deviation = dev(&m);
    }
    SinkhornOutcome {
        scaled: RelaxedPermutation {
            p_hat: m,
            tau: p_hat.tau,
        },
        iterations,
        converged: max_deviation < tol,
        max_deviation,
    }
}

// ---- tape builders ----

/// Relaxed permutation matrix of the scores node `s` (length `c`), as a `c × c` node.
pub fn relaxed_perm_node(tape: &mut Tape, s: Var, tau: f64) -> Var {
    let c = tape.value(s).len();
    let diffs = tape.outer_diff(s);
    let abs = tape.abs(diffs);
    let spread = tape.row_sums(abs);
    let lin = tape.outer(position_coefficients(c), s);
    let pen = tape.outer(vec![1.0; c], spread);
    let logits = tape.sub(lin, pen);
    let logits = tape.scale(logits, 1.0 / tau);
    tape.softmax_rows(logits)
}

/// Unrolled Sinkhorn scaling with a fixed sweep count, so the recorded graph
/// does not depend on the input values.
pub fn sinkhorn_node(tape: &mut Tape, p: Var, iters: usize) -> Var {
    let mut m = p;
    for _ in 0..iters {
        m = tape.normalize_cols(m);
        m = tape.normalize_rows(m);
    }
    m
}

/// Settings of a relaxed top-k metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxConfig {
    pub k: usize,
    pub tau: f64,
    pub sinkhorn_iters: usize,
}

impl RelaxConfig {
    pub fn new(k: usize, tau: f64) -> Self {
        Self {
            k,
            tau,
            sinkhorn_iters: DEFAULT_SINKHORN_ITERS,
        }
    }
}

/// Sinkhorn-scaled relaxed permutation of predicted scores, first `k` rows.
pub fn top_k_rows(tape: &mut Tape, pred: Var, cfg: RelaxConfig) -> Var {
    let c = tape.value(pred).len();
    let p = relaxed_perm_node(tape, pred, cfg.tau);
    let p = sinkhorn_node(tape, p, cfg.sinkhorn_iters);
    tape.rows(p, 0, cfg.k.min(c))
}

/// Relaxed NDCG@k: the permutation comes from `pred`, the gains from the
/// ground-truth relevance `r_true`, and the normalizer is its ideal DCG@k.
pub fn dr_ndcg_node(tape: &mut Tape, pred: Var, r_true: &[f64], cfg: RelaxConfig) -> Var {
    let c = r_true.len();
    assert_eq!(tape.value(pred).len(), c, "dr_ndcg: length mismatch");
    let ideal = ideal_dcg(r_true, cfg.k);
    if ideal <= 0.0 {
        return tape.const_scalar(1.0);
    }
    let k = cfg.k.min(c);
    let top = top_k_rows(tape, pred, cfg);
    let r = tape.const_vec(r_true);
    let gains = tape.gain(r);
    let positioned = tape.matvec(top, gains);
    let disc: Vec<f64> = (1..=k).map(discount).collect();
    let disc = tape.const_vec(&disc);
    let dcg = tape.dot(positioned, disc);
    tape.scale(dcg, 1.0 / ideal)
}

/// Relaxed pairwise Gini@k, `(1 / (r̄ k²)) Σ_p Σ_q |y_p - y_q|` over the
/// relaxed top-k relevances `y`. `relevance` may itself carry gradient.
///
/// This is the mean-absolute-difference form without the ½ factor, so at
/// low temperature it tends to twice the sorted-form [`super::exact_gini`].
pub fn dr_gini_node(tape: &mut Tape, pred: Var, relevance: Var, cfg: RelaxConfig) -> Var {
    let c = tape.value(relevance).len();
    assert_eq!(tape.value(pred).len(), c, "dr_gini: length mismatch");
    let k = cfg.k.min(c);
    if k < 2 {
        return tape.const_scalar(0.0);
    }
    let top = top_k_rows(tape, pred, cfg);
    let y = tape.matvec(top, relevance);
    let total = tape.sum(y);
    if tape.scalar(total) <= 0.0 {
        return tape.const_scalar(0.0);
    }
    let diffs = tape.outer_diff(y);
    let abs = tape.abs(diffs);
    let pairs = tape.sum(abs);
    // r̄ k² = k · Σ y
    let den = tape.scale(total, k as f64);
    tape.div_by(pairs, den)
}

/// Value of [`dr_ndcg_node`] for plain inputs.
pub fn dr_ndcg(pred: &[f64], r_true: &[f64], cfg: RelaxConfig) -> f64 {
    let mut tape = Tape::new();
    let s = tape.const_vec(pred);
    let out = dr_ndcg_node(&mut tape, s, r_true, cfg);
    tape.scalar(out)
}

/// Value of [`dr_gini_node`] for plain inputs.
pub fn dr_gini(pred: &[f64], r_true: &[f64], cfg: RelaxConfig) -> f64 {
    let mut tape = Tape::new();
    let s = tape.const_vec(pred);
    let r = tape.const_vec(r_true);
    let out = dr_gini_node(&mut tape, s, r, cfg);
    tape.scalar(out)
}
