//! Experiment configuration: one TOML file describing the data source, the
//! relevance simulator, the hyperparameters and the policy grid.
//!
//! A single top-level `seed` drives every stochastic component; it is copied
//! into the synthetic generator, the simulator trainer and the dynamics loop.
//! The synthetic market also takes `c` and `init_noise` from `[hyper]`.

use std::path::{Path, PathBuf};

use perfrank_core::dynamics::{PolicyKind, DEFAULT_MMR_BETA};
use perfrank_core::simulator::{CandidatePolicy, SyntheticConfig, TrainConfig, SYNTHETIC_THRESHOLDS, YELP_THRESHOLDS};
use perfrank_core::HyperParams;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

pub const DEFAULT_OUT: &str = "perfrank-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub simulator: SimulatorConfig,
    pub hyper: HyperParams,
    pub run: RunConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataConfig::default(),
            simulator: SimulatorConfig::default(),
            hyper: HyperParams::default(),
            run: RunConfig::default(),
            report: ReportConfig::default(),
        };
        cfg.propagate();
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic market parameters; used when no `[data.csv]` is given.
    pub synthetic: Option<SyntheticConfig>,
    pub csv: Option<CsvSource>,
    /// Interaction-count thresholds separating the five popularity categories.
    pub thresholds: Option<[usize; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub items: PathBuf,
    pub interactions: PathBuf,
    /// Preprocessing manifest (TOML) for raw item columns.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Users with fewer interactions are dropped; defaults to `c`.
    #[serde(default)]
    pub min_interactions: Option<usize>,
    #[serde(default)]
    pub candidate_policy: CandidatePolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    /// Load a trained model instead of training one.
    pub model: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub policies: Vec<PolicyKind>,
    pub mmr_beta: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            mmr_beta: DEFAULT_MMR_BETA,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Rounds compared against round 0 in the category shift table.
    pub rounds: Vec<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { rounds: vec![5, 9] }
    }
}

/// Keys that are derived from other tables and may not be set directly.
const DERIVED_KEYS: [(&str, &str, &str); 5] = [
    ("data.synthetic", "seed", "the top-level `seed`"),
    ("data.synthetic", "c", "`hyper.c`"),
    ("data.synthetic", "init_noise", "`hyper.init_noise`"),
    ("simulator.train", "seed", "the top-level `seed`"),
    ("hyper", "seed", "the top-level `seed`"),
];

impl ExperimentConfig {
    /// Parses and validates `text`. `origin` names the file in messages and
    /// anchors relative paths.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let name = origin.display().to_string();
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("{name}:{}: ", line_of_offset(text, s.start)))
                .unwrap_or_else(|| format!("{name}: "));
            CliError::Config(vec![format!("{at}{}", e.message())])
        })?;

        let raw: Value = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![format!("{name}: {}", e.message())]))?;
        let mut errors = Vec::new();
        for (table, key, source) in DERIVED_KEYS {
            if lookup(&raw, table, key).is_some() {
                errors.push(format!(
                    "{name}:{}: `{table}.{key}` is set from {source}; remove it",
                    key_line(text, table, key).unwrap_or(0)
                ));
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }

        let base = origin.parent().unwrap_or(Path::new(""));
        if let Some(csv) = cfg.data.csv.as_mut() {
            for p in [&mut csv.items, &mut csv.interactions] {
                *p = anchor(base, p);
            }
            if let Some(m) = csv.manifest.as_mut() {
                *m = anchor(base, m);
            }
        }
        if let Some(m) = cfg.simulator.model.as_mut() {
            *m = anchor(base, m);
        }
        cfg.propagate();
        cfg.validate_located(text, &name)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text, path)
    }

    /// Replaces the experiment seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.propagate();
    }

    fn propagate(&mut self) {
        self.hyper.seed = self.seed;
        self.simulator.train.seed = self.seed;
        if self.data.csv.is_none() && self.data.synthetic.is_none() {
            self.data.synthetic = Some(SyntheticConfig::default());
        }
        if let Some(s) = self.data.synthetic.as_mut() {
            s.seed = self.seed;
            s.c = self.hyper.c;
            s.init_noise = self.hyper.init_noise;
        }
    }

    pub fn thresholds(&self) -> [usize; 4] {
        self.data.thresholds.unwrap_or(if self.data.csv.is_some() {
            YELP_THRESHOLDS
        } else {
            SYNTHETIC_THRESHOLDS
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.run.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Semantic checks, without source locations.
    pub fn validate(&self) -> Result<(), CliError> {
        self.validate_located("", "config")
    }

    fn validate_located(&self, text: &str, name: &str) -> Result<(), CliError> {
        let at = |table: &str, key: &str| match key_line(text, table, key) {
            Some(l) => format!("{name}:{l}: "),
            None => format!("{name}: "),
        };
        let h = &self.hyper;
        let mut errors = Vec::new();
        if h.k > h.c {
            errors.push(format!(
                "{}hyper.k ({}) must not exceed hyper.c ({})",
                at("hyper", "k"),
                h.k,
                h.c
            ));
        } else if let Err(e) = h.validate() {
            errors.push(format!("{}{e}", at("hyper", "")));
        }
        if self.data.csv.is_some() && self.data.synthetic.is_some() {
            errors.push(format!(
                "{}give either [data.synthetic] or [data.csv], not both",
                at("data.csv", "")
            ));
        }
        if let Some(s) = &self.data.synthetic {
            if let Err(e) = s.validate() {
                errors.push(format!("{}{e}", at("data.synthetic", "")));
            }
        }
        if let Some(t) = self.data.thresholds {
            if t.windows(2).any(|w| w[0] >= w[1]) {
                errors.push(format!(
                    "{}data.thresholds must be strictly increasing, got {t:?}",
                    at("data", "thresholds")
                ));
            }
        }
        let t = &self.simulator.train;
        if !(t.train_frac > 0.0 && t.val_frac >= 0.0 && t.train_frac + t.val_frac <= 1.0) {
            errors.push(format!(
                "{}simulator.train fractions must satisfy 0 < train_frac, 0 <= val_frac, train_frac + val_frac <= 1",
                at("simulator.train", "")
            ));
        }
        if t.batch_size == 0 {
            errors.push(format!("{}simulator.train.batch_size must be at least 1", at("simulator.train", "batch_size")));
        }
        if self.run.policies.is_empty() {
            errors.push(format!("{}run.policies is empty", at("run", "policies")));
        }
        if !(0.0..=1.0).contains(&self.run.mmr_beta) {
            errors.push(format!(
                "{}run.mmr_beta must be in [0, 1], got {}",
                at("run", "mmr_beta"),
                self.run.mmr_beta
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors))
        }
    }

    /// The resolved configuration as TOML. Loading it back gives the same
    /// experiment.
    pub fn to_toml(&self) -> String {
        let mut v = Value::try_from(self).expect("config serializes");
        for (table, key, _) in DERIVED_KEYS {
            if let Some(t) = table_mut(&mut v, table) {
                t.remove(key);
            }
        }
        toml::to_string(&v).expect("config serializes")
    }
}

fn anchor(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn lookup<'a>(v: &'a Value, table: &str, key: &str) -> Option<&'a Value> {
    let mut cur = v;
    for part in table.split('.') {
        cur = cur.get(part)?;
    }
    cur.get(key)
}

fn table_mut<'a>(v: &'a mut Value, table: &str) -> Option<&'a mut toml::Table> {
    let mut cur = v;
    for part in table.split('.') {
        cur = cur.get_mut(part)?;
    }
    cur.as_table_mut()
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[table]`, or of the table header when
/// `key` is empty. A line-oriented scan; good enough for hand-written files.
pub fn key_line(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header_line = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = h.trim().to_string();
            if current == table {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current != table || key.is_empty() {
            continue;
        }
        if let Some((lhs, _)) = t.split_once('=') {
            if lhs.trim() == key {
                return Some(i + 1);
            }
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_toml(text, Path::new("exp.toml"))
    }

    fn messages(r: Result<ExperimentConfig, CliError>) -> Vec<String> {
        match r {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.thresholds(), SYNTHETIC_THRESHOLDS);
    }

    #[test]
    fn seed_reaches_every_component() {
        let cfg = parse("seed = 42\n[hyper]\nc = 12\nk = 4\n").unwrap();
        let s = cfg.data.synthetic.unwrap();
        assert_eq!((s.seed, s.c), (42, 12));
        assert_eq!(cfg.simulator.train.seed, 42);
        assert_eq!(cfg.hyper.seed, 42);
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let m = messages(parse("seed = 1\n\n[hyper]\nk = 5\nlamda = 3\n"));
        assert_eq!(m.len(), 1);
        assert!(m[0].starts_with("exp.toml:5:"), "{}", m[0]);
        assert!(m[0].contains("lamda"), "{}", m[0]);
    }

    #[test]
    fn k_above_c_names_both_fields() {
        let m = messages(parse("[hyper]\nc = 8\nk = 10\n"));
        assert!(m[0].starts_with("exp.toml:3:"), "{}", m[0]);
        assert!(m[0].contains("hyper.k") && m[0].contains("hyper.c"), "{}", m[0]);
    }

    #[test]
    fn derived_keys_are_rejected() {
        let m = messages(parse("[data.synthetic]\nm = 10\nseed = 3\n"));
        assert!(m[0].starts_with("exp.toml:3:") && m[0].contains("data.synthetic.seed"), "{}", m[0]);
    }

    #[test]
    fn both_sources_are_rejected() {
        let m = messages(parse("[data.synthetic]\nm = 10\n[data.csv]\nitems = \"a\"\ninteractions = \"b\"\n"));
        assert!(m.iter().any(|s| s.contains("not both")), "{m:?}");
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let text = "[data.csv]\nitems = \"items.csv\"\ninteractions = \"/abs/inter.csv\"\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("/data/exp/exp.toml")).unwrap();
        let csv = cfg.data.csv.unwrap();
        assert_eq!(csv.items, Path::new("/data/exp/items.csv"));
        assert_eq!(csv.interactions, Path::new("/abs/inter.csv"));
        assert!(cfg.data.synthetic.is_none());
    }

    #[test]
    fn resolved_toml_round_trips() {
        let mut cfg = parse("seed = 9\n[hyper]\nlambda = 5.0\nrounds = 3\n[run]\npolicies = [\"agent_based\", \"mmr\"]\n").unwrap();
        cfg.set_seed(11);
        let back = parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_policy_is_a_schema_error() {
        let m = messages(parse("[run]\npolicies = [\"greedy\"]\n"));
        assert!(m[0].starts_with("exp.toml:2:"), "{}", m[0]);
    }
}
