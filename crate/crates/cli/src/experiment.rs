//! Turns a resolved configuration into a market, a relevance simulator and
//! a set of policy runs.

use perfrank_core::dynamics::{
    baseline_metrics, run_dynamics, DynamicsRun, Environment, Evaluation, Policy, PolicyKind, RoundRecord,
};
use perfrank_core::simulator::{
    categorize_by_popularity, generate_synthetic_market, ingest_csv, train_relevance_model, IngestOptions,
    InteractionLog, LoadReport, PreprocessManifest, RelevanceModel, TrainReport,
};
use perfrank_core::{Error, MarketState};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Label used for round-0 rows.
pub const BASELINE_LABEL: &str = "baseline";

pub struct Market {
    pub state: MarketState,
    pub log: InteractionLog,
    pub n_items: usize,
    /// Present for CSV sources.
    pub load_report: Option<LoadReport>,
}

pub fn load_market(cfg: &ExperimentConfig) -> Result<Market, CliError> {
    if let Some(src) = &cfg.data.csv {
        let manifest = match &src.manifest {
            Some(p) => PreprocessManifest::load(p).map_err(CliError::from_core)?,
            None => PreprocessManifest::default(),
        };
        let opts = IngestOptions {
            c: cfg.hyper.c,
            min_interactions: src.min_interactions.unwrap_or(cfg.hyper.c),
            candidate_policy: src.candidate_policy,
            seed: cfg.seed,
            init_noise: cfg.hyper.init_noise,
            manifest,
        };
        let ing = ingest_csv(&src.items, &src.interactions, &opts).map_err(CliError::from_core)?;
        let n_items = ing.state.items.len();
        return Ok(Market {
            state: ing.state,
            log: ing.log,
            n_items,
            load_report: Some(ing.report),
        });
    }
    let syn = cfg.data.synthetic.unwrap_or_default();
    let (state, log) = generate_synthetic_market(&syn).map_err(CliError::from_core)?;
    Ok(Market {
        state,
        log,
        n_items: syn.n,
        load_report: None,
    })
}

/// Loads the configured model, or trains one on the market's log.
pub fn obtain_model(cfg: &ExperimentConfig, market: &Market) -> Result<(RelevanceModel, Option<TrainReport>), CliError> {
    if let Some(path) = &cfg.simulator.model {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let model = RelevanceModel::from_text(&text).map_err(CliError::from_core)?;
        let d = market.state.items.first().map_or(0, |x| x.x.len());
        if model.d != d {
            return Err(CliError::Run(format!(
                "model {} expects d = {}, market has d = {d}",
                path.display(),
                model.d
            )));
        }
        return Ok((model, None));
    }
    let (model, report) = train_relevance_model(&market.log, &market.state.items, &market.state.prefs, &cfg.simulator.train)
        .map_err(CliError::from_core)?;
    Ok((model, Some(report)))
}

pub struct Prepared {
    pub market: Market,
    pub model: RelevanceModel,
    pub sim_report: Option<TrainReport>,
    pub categories: Vec<Option<u8>>,
}

impl Prepared {
    pub fn env(&self) -> Environment<'_> {
        Environment {
            model: &self.model,
            categories: &self.categories,
            trace_eval: false,
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let market = load_market(cfg)?;
    let (model, sim_report) = obtain_model(cfg, &market)?;
    let categories = categorize_by_popularity(&market.state.candidates, market.n_items, &cfg.thresholds())
        .map_err(CliError::from_core)?;
    Ok(Prepared {
        market,
        model,
        sim_report,
        categories,
    })
}

pub fn baseline(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Evaluation, CliError> {
    baseline_metrics(&prep.market.state, &prep.env(), cfg.hyper.k).map_err(CliError::from_core)
}

pub fn baseline_record(e: &Evaluation) -> RoundRecord {
    RoundRecord::from_eval(BASELINE_LABEL, 0, e, 0)
}

pub fn policy_for(cfg: &ExperimentConfig, kind: PolicyKind) -> Policy {
    Policy::new(kind, cfg.hyper.clone()).with_mmr_beta(cfg.run.mmr_beta)
}

/// Runs one policy for `hyper.rounds` rounds; a diverging round is reported
/// with the policy name.
pub fn run_policy(cfg: &ExperimentConfig, prep: &Prepared, kind: PolicyKind) -> Result<DynamicsRun, CliError> {
    let policy = policy_for(cfg, kind);
    run_dynamics(&prep.market.state, &policy, &prep.env(), cfg.hyper.rounds).map_err(|e| match e {
        Error::Diverged { round, reason } => {
            let detail = reason.strip_prefix(policy.label()).unwrap_or(&reason).trim_start_matches([':', ' ']);
            CliError::Diverged(format!("policy {} diverged in round {round}: {detail}", policy.label()))
        }
        other => CliError::Run(format!("policy {}: {other}", policy.label())),
    })
}

pub struct GridResult {
    pub baseline: Evaluation,
    pub runs: Vec<(PolicyKind, DynamicsRun)>,
}

impl GridResult {
    /// All round records in grid order.
    pub fn records(&self) -> impl Iterator<Item = &RoundRecord> {
        self.runs.iter().flat_map(|(_, r)| r.records.iter())
    }
}

pub fn run_grid(cfg: &ExperimentConfig, prep: &Prepared) -> Result<GridResult, CliError> {
    let baseline = baseline(cfg, prep)?;
    let runs = cfg
        .run
        .policies
        .iter()
        .map(|&kind| Ok((kind, run_policy(cfg, prep, kind)?)))
        .collect::<Result<_, CliError>>()?;
    Ok(GridResult { baseline, runs })
}
