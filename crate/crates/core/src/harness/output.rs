//! Result files. Every writer is deterministic and atomic; nothing here
//! records wall-clock time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    recall_by_visible_fraction, Evaluation, HarnessError, RecallReport, SweepGrid, TargetResult,
    VisibilityBin,
};
use crate::dataset::write_atomic;

pub const LEDGER_FILE: &str = "ledger.csv";
pub const REPORT_FILE: &str = "report.json";
pub const RECALL_FILE: &str = "recall.csv";
pub const VISIBILITY_FILE: &str = "visibility.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Report plus the thresholds that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tau_mm: f64,
    pub theta: f64,
    pub delta_mm: f64,
    pub report: RecallReport,
}

impl ReportFile {
    pub fn of(eval: &Evaluation) -> Self {
        Self {
            tau_mm: eval.config.vsd.tau,
            theta: eval.config.vsd.theta,
            delta_mm: eval.config.visibility.delta,
            report: eval.report.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn ledger_csv(results: &BTreeMap<String, Vec<TargetResult>>) -> String {
    let mut s = String::from(
        "dataset,scene_id,im_id,obj_id,matched_instance,error,correct,skipped_reason,max_visible_fraction,eligible_instances,score,time_s\n",
    );
    for (name, list) in results {
        for r in list {
            let t = r.target;
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{},{},{},{}",
                t.scene_id,
                t.im_id,
                t.obj_id,
                opt_usize(r.matched_instance),
                opt(r.error.map(|e| e.value)),
                r.correct,
                r.skipped_reason.map(|k| k.as_str()).unwrap_or(""),
                r.max_visible_fraction,
                r.eligible_instances,
                opt(r.estimate_score),
                opt(r.time_s),
            );
        }
    }
    s
}

/// One row per object, one summary row per dataset (`obj_id` empty) and
/// the overall row (`dataset` empty).
pub fn recall_csv(report: &RecallReport) -> String {
    let mut s = String::from("dataset,obj_id,recall\n");
    for (name, d) in &report.per_dataset {
        for (obj, r) in &d.per_object {
            let _ = writeln!(s, "{name},{obj},{}", opt(*r));
        }
        let _ = writeln!(s, "{name},,{}", opt(d.recall));
    }
    let _ = writeln!(s, ",,{}", opt(report.overall));
    s
}

pub fn sweep_csv(grid: &SweepGrid) -> String {
    let names: Vec<&String> = grid
        .cells
        .first()
        .map(|c| c.report.per_dataset.keys().collect())
        .unwrap_or_default();
    let mut s = String::from("tau_mm,theta,overall");
    for n in &names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for c in &grid.cells {
        let _ = write!(s, "{},{},{}", c.tau, c.theta, opt(c.report.overall));
        for n in &names {
            let _ = write!(s, ",{}", opt(c.report.per_dataset[*n].recall));
        }
        s.push('\n');
    }
    s
}

pub fn visibility_csv(bins: &[VisibilityBin]) -> String {
    let mut s = String::from("lo,hi,targets,correct,recall\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{},{}", b.lo, b.hi, b.targets, b.correct, opt(b.recall));
    }
    s
}

/// Writes the ledger, report, recall table and visibility histogram.
pub fn write_evaluation(dir: &Path, eval: &Evaluation, bin_edges: &[f64]) -> Result<(), HarnessError> {
    let bins = recall_by_visible_fraction(eval.results.values().flatten(), bin_edges)?;
    write_atomic(&dir.join(LEDGER_FILE), ledger_csv(&eval.results).as_bytes())?;
    write_atomic(&dir.join(RECALL_FILE), recall_csv(&eval.report).as_bytes())?;
    write_atomic(&dir.join(VISIBILITY_FILE), visibility_csv(&bins).as_bytes())?;
    write_atomic(&dir.join(REPORT_FILE), ReportFile::of(eval).to_json().as_bytes())?;
    Ok(())
}

pub fn write_sweep(dir: &Path, grid: &SweepGrid) -> Result<(), HarnessError> {
    write_atomic(&dir.join(SWEEP_FILE), sweep_csv(grid).as_bytes())?;
    Ok(())
}
