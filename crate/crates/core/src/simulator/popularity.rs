use crate::types::CandidateList;
use crate::{Error, Result};

pub const CATEGORIES: usize = 5;

/// Upper bounds of categories 1–4 for the Yelp-derived data.
pub const YELP_THRESHOLDS: [usize; 4] = [5, 10, 15, 20];
/// Upper bounds of categories 1–4 for the default synthetic market.
pub const SYNTHETIC_THRESHOLDS: [usize; 4] = [2, 5, 10, 20];

/// Number of candidate lists containing each item.
pub fn item_frequencies(candidates: &[CandidateList], n_items: usize) -> Vec<usize> {
    let mut freq = vec![0; n_items];
    for list in candidates {
        for &j in &list.items {
            freq[j] += 1;
        }
    }
    freq
}

/// Popularity category in `1..=5` per item: one plus the number of
/// thresholds the item's frequency exceeds. Items in no candidate list get
/// `None`.
pub fn categorize_by_popularity(
    candidates: &[CandidateList],
    n_items: usize,
    thresholds: &[usize; 4],
) -> Result<Vec<Option<u8>>> {
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidHyperParams(format!(
            "popularity thresholds must be strictly increasing, got {thresholds:?}"
        )));
    }
    Ok(item_frequencies(candidates, n_items)
        .into_iter()
        .map(|f| (f > 0).then(|| 1 + thresholds.iter().filter(|&&b| f > b).count() as u8))
        .collect())
}

/// Items per category, index 0 = category 1.
pub fn category_counts(categories: &[Option<u8>]) -> [usize; CATEGORIES] {
    let mut out = [0; CATEGORIES];
    for c in categories.iter().flatten() {
        out[(*c - 1) as usize] += 1;
    }
    out
}
