//! The `metrics.csv` format: one row per (policy, round).

use std::io::{Read, Write};

use perfrank_core::dynamics::RoundRecord;
use perfrank_core::simulator::CATEGORIES;

use crate::CliError;

pub const HEADER: [&str; 10] = [
    "policy",
    "round",
    "mean_ndcg_at_k",
    "mean_gini_at_k",
    "cat1",
    "cat2",
    "cat3",
    "cat4",
    "cat5",
    "warnings",
];

/// Writes the header and `records`. Floats use the shortest representation
/// that round-trips, so equal runs give equal bytes.
pub fn write_records<'a, W: Write>(out: W, records: impl IntoIterator<Item = &'a RoundRecord>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(CliError::io)?;
    for r in records {
        let mut row = vec![
            r.policy.clone(),
            r.round.to_string(),
            r.mean_ndcg_at_k.to_string(),
            r.mean_gini_at_k.to_string(),
        ];
        row.extend(r.category_freq.iter().map(f64::to_string));
        row.push(r.warnings.to_string());
        w.write_record(&row).map_err(CliError::io)?;
    }
    w.flush().map_err(CliError::io)?;
    Ok(())
}

pub fn to_string<'a>(records: impl IntoIterator<Item = &'a RoundRecord>) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Rows that parsed, and a description of each row that did not.
#[derive(Debug, Default)]
pub struct Parsed {
    pub records: Vec<RoundRecord>,
    pub skipped: Vec<String>,
}

fn parse_row(row: &csv::StringRecord) -> Result<RoundRecord, String> {
    if row.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), row.len()));
    }
    let num = |i: usize| -> Result<f64, String> {
        let v: f64 = row[i].trim().parse().map_err(|_| format!("{} = `{}` is not a number", HEADER[i], &row[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{} is not finite", HEADER[i]))
        }
    };
    let int = |i: usize| -> Result<usize, String> {
        row[i].trim().parse().map_err(|_| format!("{} = `{}` is not a count", HEADER[i], &row[i]))
    };
    let policy = row[0].trim();
    if policy.is_empty() {
        return Err("empty policy".into());
    }
    let mut category_freq = [0.0; CATEGORIES];
    for (c, slot) in category_freq.iter_mut().enumerate() {
        *slot = num(4 + c)?;
    }
    Ok(RoundRecord {
        policy: policy.to_string(),
        round: int(1)?,
        mean_ndcg_at_k: num(2)?,
        mean_gini_at_k: num(3)?,
        category_freq,
        warnings: int(9)?,
    })
}

/// Reads a metrics file, skipping malformed rows. A missing or wrong header
/// is an error.
pub fn read_records<R: Read>(input: R) -> Result<Parsed, CliError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows = rd.records();
    let header = match rows.next() {
        None => return Err(CliError::Run("no records".into())),
        Some(h) => h.map_err(CliError::io)?,
    };
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(CliError::Run(format!("unexpected header; expected `{}`", HEADER.join(","))));
    }
    let mut parsed = Parsed::default();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        match row.map_err(|e| e.to_string()).and_then(|r| parse_row(&r)) {
            Ok(rec) => parsed.records.push(rec),
            Err(e) => parsed.skipped.push(format!("line {line}: {e}")),
        }
    }
    Ok(parsed)
}
