//! Subcommand bodies. Each returns the text printed on success.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use perfrank_core::dynamics::Evaluation;
use perfrank_core::simulator::{category_counts, TrainReport};

use crate::config::ExperimentConfig;
use crate::experiment::{self, baseline_record, Prepared};
use crate::{metrics, report, CliError};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Loads the config file (or the defaults) and applies flag overrides.
pub fn resolve(g: &Globals) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &g.out {
        cfg.run.out = Some(out.clone());
    }
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn sim_line(r: &Option<TrainReport>) -> String {
    match r {
        Some(r) => {
            let retries = if r.attempts > 1 { format!(", {} initializations", r.attempts) } else { String::new() };
            format!(
                "simulator: trained, accuracy train {:.3} / val {:.3} / test {:.3} (best epoch {}{retries})",
                r.train_accuracy, r.val_accuracy, r.test_accuracy, r.best_epoch
            )
        }
        None => "simulator: loaded".to_string(),
    }
}

fn eval_line(label: &str, k: usize, e: &Evaluation) -> String {
    format!(
        "{label}: mean NDCG@{k} {:.4}, mean Gini@{k} {:.4}, categories {:?}",
        e.mean_ndcg,
        e.mean_gini,
        e.category_freq.map(|v| (v * 1000.0).round() / 1000.0)
    )
}

fn market_line(prep: &Prepared) -> String {
    let s = &prep.market.state;
    format!(
        "market: {} users, {} items, d = {}, category sizes {:?}",
        s.users.len(),
        s.items.len(),
        s.items.first().map_or(0, |x| x.x.len()),
        category_counts(&prep.categories)
    )
}

/// Writes a synthetic market as `items.csv` and `interactions.csv`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<String, CliError> {
    if cfg.data.csv.is_some() {
        return Err(CliError::Run("gen-data needs a synthetic data source".into()));
    }
    let market = experiment::load_market(cfg)?;
    let dir = out_dir(cfg)?;
    let d = market.state.items.first().map_or(0, |x| x.x.len());

    let items_path = dir.join("items.csv");
    let mut w = csv::Writer::from_path(&items_path).map_err(CliError::io)?;
    let mut header = vec!["item_id".to_string()];
    header.extend((1..=d).map(|f| format!("f{f}")));
    w.write_record(&header).map_err(CliError::io)?;
    for it in &market.state.items {
        let mut row = vec![it.id.to_string()];
        row.extend(it.x.iter().map(f64::to_string));
        w.write_record(&row).map_err(CliError::io)?;
    }
    w.flush().map_err(CliError::io)?;

    // Each user's candidates come first, so ingesting with the `first`
    // candidate policy recovers the same candidate lists.
    let inter_path = dir.join("interactions.csv");
    let mut w = csv::Writer::from_path(&inter_path).map_err(CliError::io)?;
    w.write_record(["user_id", "item_id", "label"]).map_err(CliError::io)?;
    for r in &market.log.rows {
        w.write_record([r.user.to_string(), r.item.to_string(), u8::from(r.label).to_string()])
            .map_err(CliError::io)?;
    }
    w.flush().map_err(CliError::io)?;

    Ok(format!(
        "wrote {} ({} items) and {} ({} interactions)",
        items_path.display(),
        market.state.items.len(),
        inter_path.display(),
        market.log.len()
    ))
}

/// Trains the relevance simulator and writes `model.txt`.
pub fn train_sim(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let market = experiment::load_market(cfg)?;
    let (model, rep) = experiment::obtain_model(cfg, &market)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("model.txt");
    write(&path, model.to_text())?;
    let mut msg = sim_line(&rep);
    if let Some(r) = rep {
        let _ = write!(msg, "\n  test loss {:.4}, split {}/{}/{}", r.test_loss, r.n_train, r.n_val, r.n_test);
    }
    let _ = write!(msg, "\nwrote {}", path.display());
    Ok(msg)
}

/// Round-0 metrics: every user's candidates ranked by simulator relevance.
pub fn baseline(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let prep = experiment::prepare(cfg)?;
    let e = experiment::baseline(cfg, &prep)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("baseline.csv");
    write(&path, metrics::to_string([&baseline_record(&e)]))?;
    Ok(format!(
        "{}\n{}\n{}\nwrote {}",
        sim_line(&prep.sim_report),
        market_line(&prep),
        eval_line("baseline", cfg.hyper.k, &e),
        path.display()
    ))
}

/// Full policy grid. Writes `metrics.csv`, `baseline.csv`, `manifest.toml`,
/// `model.txt` and `summary.txt`.
pub fn run(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let prep = experiment::prepare(cfg)?;
    let grid = experiment::run_grid(cfg, &prep)?;
    let dir = out_dir(cfg)?;

    let metrics_path = dir.join("metrics.csv");
    write(&metrics_path, metrics::to_string(grid.records()))?;
    let base = baseline_record(&grid.baseline);
    write(&dir.join("baseline.csv"), metrics::to_string([&base]))?;
    write(&dir.join("model.txt"), prep.model.to_text())?;

    let manifest = format!(
        "# perfrank run manifest: perfrank-cli {}, perfrank-core {}\n# reproduce with: perfrank run --config manifest.toml\n{}",
        env!("CARGO_PKG_VERSION"),
        perfrank_core::VERSION,
        cfg.to_toml()
    );
    write(&dir.join("manifest.toml"), manifest)?;

    let mut records: Vec<_> = vec![base];
    records.extend(grid.records().cloned());
    let rep = report::build(&records, &cfg.report.rounds, Vec::new())?;
    let mut summary = String::new();
    let _ = writeln!(summary, "seed {}", cfg.seed);
    let _ = writeln!(summary, "{}", sim_line(&prep.sim_report));
    let _ = writeln!(summary, "{}", market_line(&prep));
    let _ = writeln!(summary, "{}\n", eval_line("round 0", cfg.hyper.k, &grid.baseline));
    summary.push_str(&report::render(&rep));
    let warnings: usize = grid.records().map(|r| r.warnings).sum();
    if warnings > 0 {
        let _ = writeln!(summary, "\nagent skipped {warnings} item update(s) in total (see the warnings column)");
    }
    write(&dir.join("summary.txt"), &summary)?;

    Ok(format!("{summary}\nwrote {}", metrics_path.display()))
}

/// Summarizes a metrics file. A sibling `baseline.csv` supplies round 0 when
/// the file itself has none.
pub fn report(path: &Path, rounds: &[usize]) -> Result<String, CliError> {
    let open = |p: &Path| fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
    let mut parsed = metrics::read_records(open(path)?)?;
    if !parsed.records.iter().any(|r| r.round == 0) {
        let sibling = path.with_file_name("baseline.csv");
        if sibling != path && sibling.exists() {
            if let Ok(b) = metrics::read_records(open(&sibling)?) {
                parsed.records.splice(0..0, b.records.into_iter().filter(|r| r.round == 0).take(1));
            }
        }
    }
    let rep = report::build(&parsed.records, rounds, parsed.skipped)?;
    Ok(report::render(&rep))
}
