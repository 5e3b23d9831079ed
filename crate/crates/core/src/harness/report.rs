use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HarnessError, SkipReason, TargetResult};
use crate::metrics::VsdConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    /// `total − skipped_visibility`; the recall denominator.
    pub evaluated: usize,
    pub skipped_visibility: usize,
    pub no_estimate: usize,
    pub empty_union: usize,
    pub correct: usize,
}

impl Counts {
    fn add(&mut self, skip: Option<SkipReason>, correct: bool) {
        self.total += 1;
        match skip {
            Some(SkipReason::BelowVisibilityFilter) => {
                self.skipped_visibility += 1;
                return;
            }
            Some(SkipReason::NoEstimate) => self.no_estimate += 1,
            Some(SkipReason::EmptyUnion) => self.empty_union += 1,
            None => {}
        }
        self.evaluated += 1;
        if correct {
            self.correct += 1;
        }
    }

    fn merge(&mut self, o: &Counts) {
        self.total += o.total;
        self.evaluated += o.evaluated;
        self.skipped_visibility += o.skipped_visibility;
        self.no_estimate += o.no_estimate;
        self.empty_union += o.empty_union;
        self.correct += o.correct;
    }

    /// `correct / evaluated`, absent when nothing was evaluated.
    pub fn recall(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.correct as f64 / self.evaluated as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecall {
    pub recall: Option<f64>,
    pub per_object: BTreeMap<u32, Option<f64>>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub per_dataset: BTreeMap<String, DatasetRecall>,
    /// Unweighted mean of the per-dataset recalls that are present.
    pub overall: Option<f64>,
    pub counts: Counts,
}

fn tally<'a>(
    results: &'a BTreeMap<String, Vec<TargetResult>>,
    correct: impl Fn(&'a TargetResult) -> bool,
) -> RecallReport {
    let mut per_dataset = BTreeMap::new();
    let mut counts = Counts::default();
    for (name, list) in results {
        let mut objects: BTreeMap<u32, Counts> = BTreeMap::new();
        let mut c = Counts::default();
        for r in list {
            let ok = r.skipped_reason.is_none() && correct(r);
            c.add(r.skipped_reason, ok);
            objects.entry(r.target.obj_id).or_default().add(r.skipped_reason, ok);
        }
        counts.merge(&c);
        per_dataset.insert(
            name.clone(),
            DatasetRecall {
                recall: c.recall(),
                per_object: objects.into_iter().map(|(k, v)| (k, v.recall())).collect(),
                counts: c,
            },
        );
    }
    let present: Vec<f64> = per_dataset.values().filter_map(|d: &DatasetRecall| d.recall).collect();
    let overall = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    RecallReport {
        per_dataset,
        overall,
        counts,
    }
}

/// Recall per object, per dataset and overall.
///
/// Targets excluded by the visibility filter leave the denominator; missing
/// estimates and empty unions stay in it as failures.
pub fn score(results: &BTreeMap<String, Vec<TargetResult>>) -> RecallReport {
    tally(results, |r| r.correct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub tau: f64,
    pub theta: f64,
    pub report: RecallReport,
}

/// Recall over a `τ × θ` grid, τ-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub taus: Vec<f64>,
    pub thetas: Vec<f64>,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, ti: usize, hi: usize) -> &SweepCell {
        &self.cells[ti * self.thetas.len() + hi]
    }
}

/// Rescores cached results over a threshold grid without rendering.
pub fn sweep(
    results: &BTreeMap<String, Vec<TargetResult>>,
    taus: &[f64],
    thetas: &[f64],
) -> Result<SweepGrid, HarnessError> {
    if taus.is_empty() || thetas.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one tau and one theta".into()));
    }
    let mut cells = Vec::with_capacity(taus.len() * thetas.len());
    for &tau in taus {
        for &theta in thetas {
            VsdConfig::new(tau, theta)?;
            cells.push(SweepCell {
                tau,
                theta,
                report: tally(results, |r| r.correct_at(tau, theta)),
            });
        }
    }
    Ok(SweepGrid {
        taus: taus.to_vec(),
        thetas: thetas.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityBin {
    /// Exclusive lower edge.
    pub lo: f64,
    /// Inclusive upper edge.
    pub hi: f64,
    pub targets: usize,
    pub correct: usize,
    pub recall: Option<f64>,
}

/// Recall of the evaluated targets grouped by their largest instance
/// visible fraction into bins `(lo, hi]`.
pub fn recall_by_visible_fraction<'a>(
    results: impl IntoIterator<Item = &'a TargetResult>,
    edges: &[f64],
) -> Result<Vec<VisibilityBin>, HarnessError> {
    if edges.len() < 2 {
        return Err(HarnessError::EmptyBins);
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::InvalidBins("edges must be finite and strictly increasing".into()));
    }
    if edges[0] > 0.0 || edges[edges.len() - 1] < 1.0 {
        return Err(HarnessError::InvalidBins("bins must cover (0, 1]".into()));
    }
    let mut bins: Vec<VisibilityBin> = edges
        .windows(2)
        .map(|w| VisibilityBin {
            lo: w[0],
            hi: w[1],
            targets: 0,
            correct: 0,
            recall: None,
        })
        .collect();
    for r in results {
        if r.excluded() {
            continue;
        }
        let f = r.max_visible_fraction;
        let i = edges[1..].partition_point(|&hi| hi < f).min(bins.len() - 1);
        bins[i].targets += 1;
        if r.correct {
            bins[i].correct += 1;
        }
    }
    for b in &mut bins {
        b.recall = (b.targets > 0).then(|| b.correct as f64 / b.targets as f64);
    }
    Ok(bins)
}

/// Ten equal bins over `(0, 1]`.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
