//! Per-policy trend summary and popularity-category shift table built from
//! metrics records.

use std::fmt::Write;

use perfrank_core::dynamics::RoundRecord;
use perfrank_core::simulator::CATEGORIES;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrend {
    pub policy: String,
    pub first: RoundRecord,
    pub last: RoundRecord,
}

impl PolicyTrend {
    pub fn delta_gini(&self) -> f64 {
        self.last.mean_gini_at_k - self.first.mean_gini_at_k
    }

    pub fn delta_ndcg(&self) -> f64 {
        self.last.mean_ndcg_at_k - self.first.mean_ndcg_at_k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub trends: Vec<PolicyTrend>,
    /// Round-0 ranking by the simulator alone, when present.
    pub baseline: Option<RoundRecord>,
    /// Per policy, the category frequencies at each requested round (`None` if absent).
    pub shifts: Vec<(String, Vec<(usize, Option<[f64; CATEGORIES]>)>)>,
    pub skipped: Vec<String>,
}

/// Groups `records` by policy (in order of first appearance). Rows with
/// round 0 are taken as the baseline.
pub fn build(records: &[RoundRecord], rounds: &[usize], skipped: Vec<String>) -> Result<Report, CliError> {
    if records.is_empty() {
        return Err(CliError::Run("no records".into()));
    }
    let baseline = records.iter().find(|r| r.round == 0).cloned();
    let mut policies: Vec<&str> = Vec::new();
    for r in records.iter().filter(|r| r.round > 0) {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    let mut trends = Vec::new();
    let mut shifts = Vec::new();
    for p in policies {
        let rows: Vec<&RoundRecord> = records.iter().filter(|r| r.policy == p && r.round > 0).collect();
        let first = rows.iter().min_by_key(|r| r.round).expect("non-empty");
        let last = rows.iter().max_by_key(|r| r.round).expect("non-empty");
        trends.push(PolicyTrend {
            policy: p.to_string(),
            first: (*first).clone(),
            last: (*last).clone(),
        });
        let at = rounds
            .iter()
            .map(|&t| (t, rows.iter().find(|r| r.round == t).map(|r| r.category_freq)))
            .collect();
        shifts.push((p.to_string(), at));
    }
    Ok(Report {
        trends,
        baseline,
        shifts,
        skipped,
    })
}

fn cats(out: &mut String, label: &str, c: Option<[f64; CATEGORIES]>) {
    let _ = write!(out, "  {label:<10}");
    match c {
        Some(c) => c.iter().for_each(|v| {
            let _ = write!(out, "{v:>8.3}");
        }),
        None => out.push_str("  (not recorded)"),
    }
    out.push('\n');
}

pub fn render(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16}{:>7}{:>11}{:>11}{:>11}{:>11}{:>11}{:>11}",
        "policy", "rounds", "gini_first", "gini_last", "d_gini", "ndcg_first", "ndcg_last", "d_ndcg"
    );
    for t in &report.trends {
        let _ = writeln!(
            out,
            "{:<16}{:>7}{:>11.4}{:>11.4}{:>+11.4}{:>11.4}{:>11.4}{:>+11.4}",
            t.policy,
            format!("{}-{}", t.first.round, t.last.round),
            t.first.mean_gini_at_k,
            t.last.mean_gini_at_k,
            t.delta_gini(),
            t.first.mean_ndcg_at_k,
            t.last.mean_ndcg_at_k,
            t.delta_ndcg(),
        );
    }

    out.push_str("\ncategory frequency in top-k (mean count per user; cat1 = least popular)\n");
    for (policy, at) in &report.shifts {
        let _ = writeln!(out, "{policy}");
        let _ = write!(out, "  {:<10}", "round");
        (1..=CATEGORIES).for_each(|c| {
            let _ = write!(out, "{:>8}", format!("cat{c}"));
        });
        out.push('\n');
        cats(&mut out, "0", report.baseline.as_ref().map(|b| b.category_freq));
        for (t, c) in at {
            cats(&mut out, &t.to_string(), *c);
        }
    }

    if !report.skipped.is_empty() {
        let _ = writeln!(out, "\nskipped {} malformed row(s):", report.skipped.len());
        for s in &report.skipped {
            let _ = writeln!(out, "  {s}");
        }
    }
    out
}
