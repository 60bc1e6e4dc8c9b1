//! Per-(method, N, T) aggregates of `results.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use crate::runner::{read_records, ResultRecord, RESULTS_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub t: Option<usize>,
    pub seeds: usize,
    pub mean_regret: Option<f64>,
    pub se_regret: Option<f64>,
    pub mean_value: Option<f64>,
    pub se_value: Option<f64>,
    pub mean_pessimistic_value: Option<f64>,
    /// Set when only one seed contributed, so the standard errors are 0.
    pub single_seed: bool,
}

/// Mean and standard error of the mean; the error is 0 for one sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn column(records: &[&ResultRecord], f: impl Fn(&ResultRecord) -> Option<f64>) -> Option<(f64, f64)> {
    let xs: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
    if xs.is_empty() {
        None
    } else {
        Some(mean_se(&xs))
    }
}

/// Later records replace earlier ones for the same (method, N, T, seed).
pub fn summarize_records(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut latest: BTreeMap<(String, usize, Option<usize>, u64), &ResultRecord> = BTreeMap::new();
    for r in records {
        latest.insert((r.method.clone(), r.n, r.t, r.seed), r);
    }
    let mut groups: BTreeMap<(String, usize, Option<usize>), Vec<&ResultRecord>> = BTreeMap::new();
    for ((method, n, t, _), r) in latest {
        groups.entry((method, n, t)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, n, t), rs)| {
            let regret = column(&rs, |r| r.regret);
            let value = column(&rs, |r| r.value);
            let pess = column(&rs, |r| r.pessimistic_value);
            SummaryRow {
                method,
                n,
                t,
                seeds: rs.len(),
                mean_regret: regret.map(|v| v.0),
                se_regret: regret.map(|v| v.1),
                mean_value: value.map(|v| v.0),
                se_value: value.map(|v| v.1),
                mean_pessimistic_value: pess.map(|v| v.0),
                single_seed: rs.len() == 1,
            }
        })
        .collect()
}

/// Writes `summary.csv` next to `results.jsonl` and returns its path.
pub fn summarize(dir: &Path) -> Result<PathBuf> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        bail!("no {RESULTS_FILE} in {}", dir.display());
    }
    let records = read_records(&path)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    let out = dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&out)?;
    for row in summarize_records(&records) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(out)
}
