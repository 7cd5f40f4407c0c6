use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::HarnessError;

use super::run::SummaryRow;

/// Mean, population standard deviation and minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
}

pub fn stats(values: &[f64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Some(Stats { mean, std: var.sqrt(), min })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub mode: String,
    pub axis: String,
    pub value: Option<f64>,
    pub runs: usize,
    pub failed: usize,
    pub wcsr_mean: f64,
    pub wcsr_std: f64,
    pub wcsr_min: f64,
    pub gamma_r_mean: f64,
    pub sum_gamma_c_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Key(f64);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Groups rows by (mode, axis, value) in sorted order and aggregates the
/// completed runs of each group. Groups with no completed run are dropped.
pub fn aggregate(rows: &[SummaryRow]) -> Result<Vec<AggregateRow>, HarnessError> {
    if !rows.iter().any(SummaryRow::is_ok) {
        return Err(HarnessError::Plan("no completed runs to summarize".into()));
    }
    let mut groups: BTreeMap<(String, String, Key), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.mode.clone(), r.axis.clone(), Key(r.value.unwrap_or(f64::NAN)));
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((mode, axis, Key(value)), g) in groups {
        let ok: Vec<&SummaryRow> = g.iter().copied().filter(|r| r.is_ok()).collect();
        let col = |f: fn(&SummaryRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
        let Some(w) = stats(&col(|r| r.wcsr)) else { continue };
        let mean = |v: Vec<f64>| stats(&v).map_or(f64::NAN, |s| s.mean);
        out.push(AggregateRow {
            mode,
            axis,
            value: (!value.is_nan()).then_some(value),
            runs: ok.len(),
            failed: g.len() - ok.len(),
            wcsr_mean: w.mean,
            wcsr_std: w.std,
            wcsr_min: w.min,
            gamma_r_mean: mean(col(|r| r.gamma_r)),
            sum_gamma_c_mean: mean(col(|r| r.sum_gamma_c)),
        });
    }
    Ok(out)
}

pub fn render_report(rows: &[SummaryRow], agg: &[AggregateRow]) -> String {
    let mut s = String::new();
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let _ = writeln!(s, "runs: {} completed, {} failed", rows.len() - failed, failed);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14} {:<16} {:>10} {:>5} {:>14} {:>12} {:>12}", "mode", "axis", "value", "n", "wcsr_mean", "wcsr_std", "wcsr_min");
    for a in agg {
        let v = a.value.map_or("-".to_string(), |v| format!("{v}"));
        let _ = writeln!(s, "{:<14} {:<16} {:>10} {:>5} {:>14.6e} {:>12.4e} {:>12.4e}", a.mode, a.axis, v, a.runs, a.wcsr_mean, a.wcsr_std, a.wcsr_min);
    }
    if failed > 0 {
        let _ = writeln!(s);
        let _ = writeln!(s, "failures:");
        for r in rows.iter().filter(|r| !r.is_ok()) {
            let _ = writeln!(s, "  {}: {}", r.run_id, r.status);
        }
    }
    s
}

/// Writes `aggregate.csv` and `report.txt` into `dir`.
pub fn summarize_into(rows: &[SummaryRow], dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    let agg = aggregate(rows)?;
    let agg_path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&agg_path)?;
    for a in &agg {
        w.serialize(a)?;
    }
    w.flush()?;
    let report = dir.join("report.txt");
    std::fs::write(&report, render_report(rows, &agg))?;
    Ok((agg_path, report))
}
