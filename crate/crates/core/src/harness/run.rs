use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::mrl::train::{final_metrics, train, write_curve_csv, FinalMetrics};
use crate::robust_cfo::RobustConfig;

use super::plan::{ExperimentPlan, Method, SweepAxis};

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub mode: String,
    pub axis: String,
    /// Empty when the axis is `none`.
    pub value: Option<f64>,
    pub seed: u64,
    pub wcsr: Option<f64>,
    pub gamma_r: Option<f64>,
    pub sum_gamma_c: Option<f64>,
    /// Empty unless the plan records wall-clock time.
    pub runtime_s: Option<f64>,
    /// `ok` or the error that ended the run.
    pub status: String,
}

impl SummaryRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
}

impl RunSpec {
    /// File-name-safe identifier, also used for the curve file.
    pub fn run_id(&self) -> String {
        let v = if self.value.is_nan() { "na".to_string() } else { format!("{}", self.value).replace('-', "m") };
        format!("{}_{}_{}_s{}", self.method, self.axis, v, self.seed)
    }
}

/// Runs in plan order: mode, then grid point, then seed.
pub fn run_specs(plan: &ExperimentPlan) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &method in &plan.modes {
        for value in plan.points() {
            for &seed in &plan.seeds {
                out.push(RunSpec { method, axis: plan.axis, value, seed });
            }
        }
    }
    out
}

/// Result of a single training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub metrics: Result<FinalMetrics, String>,
    pub runtime_s: f64,
}

fn execute(plan: &ExperimentPlan, spec: &RunSpec, curve_dir: Option<&Path>) -> Result<FinalMetrics, HarnessError> {
    let swept = spec.axis.apply(&plan.scenario, spec.value)?;
    let (scenario, mut cfg) = spec.method.configure(&swept, &plan.train)?;
    cfg.seed = spec.seed;
    let out = train(&scenario, &cfg)?;
    if let Some(dir) = curve_dir {
        let f = fs::File::create(dir.join(format!("{}.csv", spec.run_id())))?;
        write_curve_csv(&out.curve, f)?;
    }
    final_metrics(&scenario, &cfg, &out.policy, plan.final_tasks, &RobustConfig::default())
}

/// Runs every (mode, grid point, seed) of `plan` in parallel. Results come
/// back in [`run_specs`] order; failures are kept per run.
pub fn run_all(plan: &ExperimentPlan, curve_dir: Option<&Path>) -> Vec<RunResult> {
    run_specs(plan)
        .into_par_iter()
        .map(|spec| {
            let t0 = Instant::now();
            let metrics = execute(plan, &spec, curve_dir).map_err(|e| {
                log::error!("run {} failed: {e}", spec.run_id());
                e.to_string()
            });
            RunResult { spec, metrics, runtime_s: t0.elapsed().as_secs_f64() }
        })
        .collect()
}

pub fn summary_rows(plan: &ExperimentPlan, results: &[RunResult]) -> Vec<SummaryRow> {
    results
        .iter()
        .map(|r| {
            let m = r.metrics.as_ref().ok();
            SummaryRow {
                run_id: r.spec.run_id(),
                mode: r.spec.method.to_string(),
                axis: r.spec.axis.to_string(),
                value: (!r.spec.value.is_nan()).then_some(r.spec.value),
                seed: r.spec.seed,
                wcsr: m.map(|m| m.wcsr),
                gamma_r: m.map(|m| m.gamma_r),
                sum_gamma_c: m.map(|m| m.sum_gamma_c),
                runtime_s: plan.record_runtime.then_some(r.runtime_s),
                status: match &r.metrics {
                    Ok(_) => "ok".to_string(),
                    Err(e) => e.replace(['\n', '\r'], " "),
                },
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?)
}

/// Output locations of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: PathBuf,
    pub aggregate: PathBuf,
    pub report: PathBuf,
    pub curves: PathBuf,
    pub rows: Vec<SummaryRow>,
}

/// Runs `plan` and writes `summary.csv`, `aggregate.csv`, `report.txt` and
/// `curves/<run id>.csv` under the plan's output directory.
pub fn run(plan: &ExperimentPlan) -> Result<ExperimentOutput, HarnessError> {
    plan.check()?;
    let curves = plan.out_dir.join("curves");
    fs::create_dir_all(&curves)?;
    let results = run_all(plan, Some(&curves));
    let rows = summary_rows(plan, &results);
    let summary = plan.out_dir.join("summary.csv");
    write_summary(&rows, &summary)?;
    let (aggregate, report) = super::summary::summarize_into(&rows, &plan.out_dir)?;
    Ok(ExperimentOutput { summary, aggregate, report, curves, rows })
}
