use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `perm[l]` is the index of the item ranked at position `l` (0 = best).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardPermutation {
    pub perm: Vec<usize>,
}

impl HardPermutation {
    pub fn identity(c: usize) -> Self {
        Self {
            perm: (0..c).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.perm[..k.min(self.perm.len())]
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        self.perm.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }
}

/// Sorts by descending score; ties keep ascending index order.
pub fn exact_rank(scores: &[f64]) -> Result<HardPermutation> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("exact_rank"));
    }
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(HardPermutation { perm })
}

/// Position discount `1 / log2(1 + l)` for 1-based position `l`.
pub fn discount(position: usize) -> f64 {
    1.0 / ((position as f64) + 1.0).log2()
}

pub fn gain(r: f64) -> f64 {
    r.exp2() - 1.0
}

pub fn exact_dcg(r: &[f64], pi: &HardPermutation, k: usize) -> f64 {
    pi.top(k)
        .iter()
        .enumerate()
        .map(|(l, &i)| gain(r[i]) * discount(l + 1))
        .sum()
}

/// Best achievable DCG@k: relevance sorted in decreasing order.
pub fn ideal_dcg(r: &[f64], k: usize) -> f64 {
    let mut sorted = r.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .take(k)
        .enumerate()
        .map(|(l, &x)| gain(x) * discount(l + 1))
        .sum()
}

/// NDCG@k. A list with zero ideal DCG counts as perfectly ranked (1.0).
pub fn exact_ndcg(r: &[f64], pi: &HardPermutation, k: usize) -> f64 {
    let ideal = ideal_dcg(r, k);
    if ideal <= 0.0 {
        return 1.0;
    }
    exact_dcg(r, pi, k) / ideal
}

/// Gini coefficient of the top-k relevances, sorted-form. Zero total
/// relevance gives 0.0.
pub fn exact_gini(r: &[f64], pi: &HardPermutation, k: usize) -> f64 {
    let mut top: Vec<f64> = pi.top(k).iter().map(|&i| r[i]).collect();
    gini_of(&mut top)
}

/// Sorted-form Gini of an arbitrary non-negative sample (sorted in place).
pub fn gini_of(values: &mut [f64]) -> f64 {
    let k = values.len();
    let total: f64 = values.iter().sum();
    if k == 0 || total <= 0.0 {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let kf = k as f64;
    let num: f64 = values
        .iter()
        .enumerate()
        .map(|(l, &x)| (2.0 * (l as f64 + 1.0) - kf - 1.0) * x)
        .sum();
    num / (kf * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(exact_rank(&[0.1, 0.9, 0.5]).unwrap().perm, vec![1, 2, 0]);
        assert_eq!(exact_rank(&[5.0, 5.0, 5.0]).unwrap().perm, vec![0, 1, 2]);
        assert_eq!(exact_rank(&[4.0, 3.0, 1.0, -2.0]).unwrap(), HardPermutation::identity(4));
        assert!(exact_rank(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn dcg_examples() {
        let one = HardPermutation::identity(1);
        assert_eq!(exact_dcg(&[1.0], &one, 1), 1.0);

        // r = [3, 2] ranked worst-first: the item with relevance 2 at position 1.
        let worst_first = HardPermutation { perm: vec![1, 0] };
        let expected = 7.0 / 3f64.log2() + 3.0;
        let dcg = exact_dcg(&[3.0, 2.0], &worst_first, 2);
        assert!((dcg - expected).abs() < 1e-12);
        assert!((dcg - 7.416_508).abs() < 1e-6);

        assert_eq!(exact_dcg(&[0.0, 0.0, 0.0], &HardPermutation::identity(3), 3), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let r = [0.2, 0.9, 0.5];
        let perfect = exact_rank(&r).unwrap();
        assert!((exact_ndcg(&r, &perfect, 3) - 1.0).abs() < 1e-15);

        let worst_first = HardPermutation { perm: vec![1, 0] };
        let ndcg = exact_ndcg(&[3.0, 2.0], &worst_first, 2);
        assert!((ndcg - 0.833_99).abs() < 1e-4, "{ndcg}");

        let top_is_max = HardPermutation { perm: vec![1, 0, 2] };
        assert_eq!(exact_ndcg(&r, &top_is_max, 1), 1.0);

        assert_eq!(exact_ndcg(&[0.0, 0.0], &HardPermutation::identity(2), 2), 1.0);
    }

    #[test]
    fn gini_examples() {
        let id = HardPermutation::identity(4);
        assert_eq!(exact_gini(&[0.4, 0.4, 0.4, 0.4], &id, 4), 0.0);
        assert!((exact_gini(&[1.0, 0.0, 0.7], &HardPermutation::identity(3), 2) - 0.5).abs() < 1e-15);
        assert_eq!(exact_gini(&[0.0, 0.0, 0.3], &id_of(3), 2), 0.0);
    }

    fn id_of(c: usize) -> HardPermutation {
        HardPermutation::identity(c)
    }
}
