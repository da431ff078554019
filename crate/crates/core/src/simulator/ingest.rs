use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::train::{Interaction, InteractionLog};
use crate::rng;
use crate::types::{ground_truth_pref, CandidateList, ItemFeatures, MarketState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// One 0/1 column per distinct value, in sorted order.
    Onehot,
    /// `(v - min) / (max - min)`; a constant column maps to 0.
    Minmax,
    /// Ordered levels mapped evenly onto `[0, 1]`.
    Graded,
}

/// Column name → encoding rule, with optional explicit level order for
/// graded columns. Columns not listed must already be numeric.
///
/// ```toml
/// [columns]
/// stars = "minmax"
/// price = "graded"
/// category = "onehot"
///
/// [levels]
/// price = ["$", "$$", "$$$"]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessManifest {
    #[serde(default)]
    pub columns: BTreeMap<String, Encoding>,
    #[serde(default)]
    pub levels: BTreeMap<String, Vec<String>>,
}

impl PreprocessManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Load(format!("preprocessing manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidatePolicy {
    /// The first `c` distinct items by timestamp (file order without one).
    #[default]
    First,
    /// `c` distinct items chosen uniformly with the ingest seed, kept in order.
    Random,
}

impl FromStr for CandidatePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidHyperParams(format!(
                "unknown candidate policy `{other}` (expected first | random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub c: usize,
    pub min_interactions: usize,
    pub candidate_policy: CandidatePolicy,
    pub seed: u64,
    pub init_noise: f64,
    pub manifest: PreprocessManifest,
}

impl IngestOptions {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            min_interactions: c,
            candidate_policy: CandidatePolicy::First,
            seed: 0,
            init_noise: 0.1,
            manifest: PreprocessManifest::default(),
        }
    }
}

/// What was read, kept and rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub item_rows: usize,
    pub items_kept: usize,
    pub interaction_rows: usize,
    pub interactions_kept: usize,
    pub users_seen: usize,
    pub users_kept: usize,
    pub dropped_below_min: usize,
    pub dropped_short: usize,
    pub row_errors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub state: MarketState,
    pub log: InteractionLog,
    pub report: LoadReport,
    /// Names of the feature columns after one-hot expansion.
    pub feature_names: Vec<String>,
    pub item_keys: Vec<String>,
    pub user_keys: Vec<String>,
}

pub fn ingest_csv(items_path: &Path, interactions_path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| Error::Load(format!("{}: {e}", p.display())))
    };
    ingest_readers(open(items_path)?, open(interactions_path)?, opts)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(r)
}

fn column(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Load(format!("{file}: missing column `{name}`")))
}

fn numeric_order(values: &BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = values.iter().cloned().collect();
    let parsed: Option<Vec<f64>> = v.iter().map(|s| s.parse().ok()).collect();
    if let Some(nums) = parsed {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        v = pairs.into_iter().map(|p| p.1).collect();
    }
    v
}

struct ItemTable {
    keys: Vec<String>,
    features: Vec<Vec<f64>>,
    names: Vec<String>,
}

fn read_items<R: Read>(reader: R, manifest: &PreprocessManifest, report: &mut LoadReport) -> Result<ItemTable> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Load(format!("items: {e}")))?.clone();
    let id_col = column(&headers, "item_id", "items")?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != id_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Load("items: no feature columns".into()));
    }
    for name in manifest.columns.keys().chain(manifest.levels.keys()) {
        column(&headers, name, "items")?;
    }
    let rule = |col: usize| manifest.columns.get(&headers[col]).copied();

    // Pass 1: raw rows, numeric columns parsed.
    let mut rows: Vec<(String, Vec<String>, usize)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, rec) in rdr.records().enumerate() {
        let line = line + 2;
        report.item_rows += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.row_errors.push(format!("items line {line}: {e}"));
                continue;
            }
        };
        if rec.len() != headers.len() {
            report.row_errors.push(format!(
                "items line {line}: expected {} fields, got {}",
                headers.len(),
                rec.len()
            ));
            continue;
        }
        let key = rec[id_col].to_string();
        let cells: Vec<String> = feature_cols.iter().map(|&c| rec[c].to_string()).collect();
        let bad = feature_cols.iter().zip(&cells).find(|(&c, v)| {
            matches!(rule(c), None | Some(Encoding::Minmax)) && v.parse::<f64>().map_or(true, |x| !x.is_finite())
        });
        if let Some((&c, v)) = bad {
            report.row_errors.push(format!("items line {line}: column `{}` value `{v}` is not numeric", &headers[c]));
            continue;
        }
        if !seen.insert(key.clone()) {
            report.row_errors.push(format!("items line {line}: duplicate item_id `{key}`"));
            continue;
        }
        rows.push((key, cells, line));
    }

    // Per-column encoders fitted on the surviving rows.
    enum Enc {
        Raw,
        Minmax(f64, f64),
        Onehot(Vec<String>),
        Graded(Vec<String>),
    }
    let mut names = Vec::new();
    let encoders: Vec<Enc> = feature_cols
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let name = &headers[c];
            let distinct = || rows.iter().map(|r| r.1[k].clone()).collect::<BTreeSet<_>>();
            match rule(c) {
                None => {
                    names.push(name.to_string());
                    Enc::Raw
                }
                Some(Encoding::Minmax) => {
                    names.push(name.to_string());
                    let vals = rows.iter().map(|r| r.1[k].parse::<f64>().unwrap());
                    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                    Enc::Minmax(lo, hi)
                }
                Some(Encoding::Onehot) => {
                    let levels: Vec<String> = distinct().into_iter().collect();
                    names.extend(levels.iter().map(|l| format!("{name}={l}")));
                    Enc::Onehot(levels)
                }
                Some(Encoding::Graded) => {
                    names.push(name.to_string());
                    let levels = manifest
                        .levels
                        .get(name)
                        .cloned()
                        .unwrap_or_else(|| numeric_order(&distinct()));
                    Enc::Graded(levels)
                }
            }
        })
        .collect();

    let mut table = ItemTable { keys: Vec::new(), features: Vec::new(), names };
    'rows: for (key, cells, line) in rows {
        let mut x = Vec::with_capacity(table.names.len());
        for (k, enc) in encoders.iter().enumerate() {
            let v = &cells[k];
            match enc {
                Enc::Raw => x.push(v.parse().unwrap()),
                Enc::Minmax(lo, hi) => {
                    let v: f64 = v.parse().unwrap();
                    x.push(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 });
                }
                Enc::Onehot(levels) => x.extend(levels.iter().map(|l| if l == v { 1.0 } else { 0.0 })),
                Enc::Graded(levels) => match levels.iter().position(|l| l == v) {
                    Some(p) if levels.len() > 1 => x.push(p as f64 / (levels.len() - 1) as f64),
                    Some(_) => x.push(0.0),
                    None => {
                        report.row_errors.push(format!(
                            "items line {line}: `{v}` is not a listed level of `{}`",
                            &headers[feature_cols[k]]
                        ));
                        continue 'rows;
                    }
                },
            }
        }
        if x.iter().all(|v| *v == 0.0) {
            report.row_errors.push(format!("items line {line}: all-zero feature vector cannot be normalized"));
            continue;
        }
        table.keys.push(key);
        table.features.push(x);
    }
    report.items_kept = table.keys.len();
    Ok(table)
}

fn parse_label(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "pos" | "positive" => Some(true),
        "0" | "-1" | "false" | "neg" | "negative" => Some(false),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v > 0.0),
    }
}

/// Loads items and interactions, applies the preprocessing manifest, builds
/// one candidate list of `c` distinct items per qualifying user, and returns
/// the round-0 market with its interaction log.
pub fn ingest_readers<A: Read, B: Read>(items: A, interactions: B, opts: &IngestOptions) -> Result<Ingested> {
    if opts.c == 0 {
        return Err(Error::InvalidHyperParams("c must be positive".into()));
    }
    let mut report = LoadReport::default();
    let table = read_items(items, &opts.manifest, &mut report)?;
    let item_index: HashMap<&str, usize> =
        table.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();

    let mut rdr = csv_reader(interactions);
    let headers = rdr.headers().map_err(|e| Error::Load(format!("interactions: {e}")))?.clone();
    let user_col = column(&headers, "user_id", "interactions")?;
    let item_col = column(&headers, "item_id", "interactions")?;
    let label_col = column(&headers, "label", "interactions")?;
    let ts_col = headers.iter().position(|h| h == "timestamp");

    // user key → (rows of (timestamp, file order, item, label))
    let mut order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, Vec<(f64, usize, usize, bool)>> = HashMap::new();
    for (pos, rec) in rdr.records().enumerate() {
        let line = pos + 2;
        report.interaction_rows += 1;
        let rec = match rec {
            Ok(r) if r.len() == headers.len() => r,
            Ok(r) => {
                report.row_errors.push(format!(
                    "interactions line {line}: expected {} fields, got {}",
                    headers.len(),
                    r.len()
                ));
                continue;
            }
            Err(e) => {
                report.row_errors.push(format!("interactions line {line}: {e}"));
                continue;
            }
        };
        let Some(&item) = item_index.get(&rec[item_col]) else {
            report.row_errors.push(format!("interactions line {line}: unknown item `{}`", &rec[item_col]));
            continue;
        };
        let Some(label) = parse_label(&rec[label_col]) else {
            report.row_errors.push(format!("interactions line {line}: bad label `{}`", &rec[label_col]));
            continue;
        };
        let ts = match ts_col {
            Some(t) => match rec[t].parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    report.row_errors.push(format!("interactions line {line}: bad timestamp `{}`", &rec[t]));
                    continue;
                }
            },
            None => 0.0,
        };
        let user = rec[user_col].to_string();
        per_user
            .entry(user.clone())
            .or_insert_with(|| {
                order.push(user);
                Vec::new()
            })
            .push((ts, pos, item, label));
    }
    report.users_seen = order.len();

    let items: Vec<ItemFeatures> = table
        .features
        .iter()
        .enumerate()
        .map(|(j, x)| ItemFeatures::new(j, x.clone()))
        .collect::<Result<_>>()?;

    let mut g = rng::seeded(opts.seed);
    let mut candidates = Vec::new();
    let mut user_keys = Vec::new();
    let mut log = InteractionLog::default();
    for key in order {
        let mut rows = per_user.remove(&key).unwrap_or_default();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut distinct: Vec<usize> = Vec::new();
        for r in &rows {
            if !distinct.contains(&r.2) {
                distinct.push(r.2);
            }
        }
        if distinct.len() < opts.min_interactions {
            report.dropped_below_min += 1;
            continue;
        }
        if distinct.len() < opts.c {
            report.dropped_short += 1;
            report.row_errors.push(format!(
                "user `{key}`: {} distinct items, fewer than c = {}",
                distinct.len(),
                opts.c
            ));
            continue;
        }
        let chosen: Vec<usize> = match opts.candidate_policy {
            CandidatePolicy::First => distinct[..opts.c].to_vec(),
            CandidatePolicy::Random => {
                let mut idx = index::sample(&mut g, distinct.len(), opts.c).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| distinct[i]).collect()
            }
        };
        let user_id = candidates.len();
        let list = CandidateList { user_id, items: chosen };
        if ground_truth_pref(&list, &items).is_err() {
            report.row_errors.push(format!("user `{key}`: candidate features average to zero"));
            continue;
        }
        log.rows.extend(rows.iter().map(|r| Interaction { user: user_id, item: r.2, label: r.3 }));
        candidates.push(list);
        user_keys.push(key);
    }
    report.users_kept = candidates.len();
    report.interactions_kept = log.len();
    if candidates.is_empty() {
        return Err(Error::Load(format!(
            "no users left after filtering ({} row errors)",
            report.row_errors.len()
        )));
    }

    let state = MarketState::new(items, candidates, opts.init_noise, &mut g)?;
    Ok(Ingested {
        state,
        log,
        report,
        feature_names: table.names,
        item_keys: table.keys,
        user_keys,
    })
}
