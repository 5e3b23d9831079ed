//! Per-target evaluation and recall aggregation.

mod cache;
pub mod output;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{render_distance, RenderCache, Rendered};
pub use report::{
    default_bin_edges, recall_by_visible_fraction, score, sweep, Counts, DatasetRecall, RecallReport, SweepCell,
    SweepGrid, VisibilityBin,
};

use crate::dataset::{
    self, derive_targets, open_benchmark, Dataset, DatasetError, EstimateRecord, ImageMeta,
    Sectioned, TestTarget, DEFAULT_SECTION,
};
use crate::geometry::Mesh;
use crate::maps::DistanceMap;
use crate::metrics::{ErrorKind, MetricError, PoseError, VsdConfig, VsdProfile};
use crate::raster::{depth_to_distance, RenderError};
use crate::visibility::{
    visib_mask_est, visib_mask_gt, VisibilityConfig, VisibilityError, MIN_VISIBLE_FRACTION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset '{dataset}': model of object {obj_id} unavailable: {reason}")]
    MissingModel {
        dataset: String,
        obj_id: u32,
        reason: String,
    },
    #[error("dataset '{dataset}', target {target:?}: rendering failed: {source}")]
    Render {
        dataset: String,
        target: TestTarget,
        #[source]
        source: RenderError,
    },
    #[error("dataset '{dataset}', target {target:?}: {source}")]
    Visibility {
        dataset: String,
        target: TestTarget,
        #[source]
        source: VisibilityError,
    },
    #[error("dataset '{dataset}', target {target:?}: {msg}")]
    InvalidTarget {
        dataset: String,
        target: TestTarget,
        msg: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("histogram needs at least two bin edges")]
    EmptyBins,
    #[error("invalid bin edges: {0}")]
    InvalidBins(String),
}

impl HarnessError {
    /// I/O problems as opposed to invalid input or configuration.
    pub fn is_io(&self) -> bool {
        match self {
            HarnessError::Dataset(e) => e.is_io(),
            HarnessError::MissingModel { .. } => true,
            _ => false,
        }
    }
}

impl From<MetricError> for HarnessError {
    fn from(e: MetricError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

/// Thresholds plus the size of the worker pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub vsd: VsdConfig,
    pub visibility: VisibilityConfig,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vsd: VsdConfig::default(),
            visibility: VisibilityConfig::default(),
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn new(tau: f64, theta: f64, delta: f64, workers: usize) -> Result<Self, HarnessError> {
        let vsd = VsdConfig::new(tau, theta)?;
        let visibility =
            VisibilityConfig::new(delta).map_err(|e| HarnessError::Config(e.to_string()))?;
        if workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            vsd,
            visibility,
            workers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkipReason {
    /// No ground-truth instance is visible enough; excluded from recall.
    BelowVisibilityFilter,
    /// Nothing was submitted; counts as a failure.
    NoEstimate,
    /// Degenerate geometry; counts as a failure.
    EmptyUnion,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::BelowVisibilityFilter => "BelowVisibilityFilter",
            SkipReason::NoEstimate => "NoEstimate",
            SkipReason::EmptyUnion => "EmptyUnion",
        }
    }
}

/// Pixel statistics of the estimate against one eligible instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProfile {
    pub index: usize,
    pub visible_fraction: f64,
    pub profile: VsdProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetResult {
    pub target: TestTarget,
    /// Index into the image's ground-truth list.
    pub matched_instance: Option<usize>,
    pub error: Option<PoseError>,
    pub correct: bool,
    pub skipped_reason: Option<SkipReason>,
    /// Largest visible fraction over the target's instances.
    pub max_visible_fraction: f64,
    pub eligible_instances: usize,
    pub estimate_score: Option<f64>,
    pub time_s: Option<f64>,
    /// Lets the target be rescored at other thresholds without rendering.
    #[serde(skip)]
    pub profiles: Vec<InstanceProfile>,
}

/// Matching and correctness at one `(τ, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub matched_instance: Option<usize>,
    pub error: Option<f64>,
    pub correct: bool,
    pub empty_union: bool,
}

/// Keeps the instance with the smallest error, the lowest index on ties.
pub fn decide(profiles: &[InstanceProfile], tau: f64, theta: f64) -> Decision {
    let mut best: Option<(usize, f64)> = None;
    for p in profiles {
        if let Ok(e) = p.profile.error(tau) {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((p.index, e));
            }
        }
    }
    match best {
        Some((index, e)) => Decision {
            matched_instance: Some(index),
            error: Some(e),
            correct: e < theta,
            empty_union: false,
        },
        None => Decision {
            matched_instance: None,
            error: None,
            correct: false,
            empty_union: true,
        },
    }
}

impl TargetResult {
    pub fn excluded(&self) -> bool {
        self.skipped_reason == Some(SkipReason::BelowVisibilityFilter)
    }

    /// Correctness at other thresholds, from the cached profiles.
    pub fn correct_at(&self, tau: f64, theta: f64) -> bool {
        match self.skipped_reason {
            None | Some(SkipReason::EmptyUnion) => decide(&self.profiles, tau, theta).correct,
            _ => false,
        }
    }
}

/// An image's metadata and its measured distance map.
#[derive(Debug, Clone, Copy)]
pub struct SceneView<'a> {
    pub meta: &'a ImageMeta,
    pub distance: &'a DistanceMap,
}

/// The estimate with the highest score for `target`; the earliest wins ties.
pub fn select_estimate<'a>(
    target: &TestTarget,
    estimates: &'a [EstimateRecord],
) -> Option<&'a EstimateRecord> {
    let mut best: Option<&EstimateRecord> = None;
    for e in estimates {
        if (e.scene_id, e.im_id, e.obj_id) != (target.scene_id, target.im_id, target.obj_id) {
            continue;
        }
        if best.is_none_or(|b| e.score > b.score) {
            best = Some(e);
        }
    }
    best
}

/// Scores one target.
///
/// Every ground-truth instance of the target object is checked against the
/// visibility filter; the selected estimate is compared with each eligible
/// instance and the smallest VSD wins.
pub fn evaluate_target(
    dataset: &str,
    target: &TestTarget,
    estimates: &[EstimateRecord],
    scene: SceneView<'_>,
    mesh: &Mesh,
    cfg: &EvalConfig,
    renders: &RenderCache,
) -> Result<TargetResult, HarnessError> {
    let k = scene.meta.intrinsics;
    let render_err = |source| HarnessError::Render {
        dataset: dataset.to_string(),
        target: *target,
        source,
    };
    let vis_err = |source| HarnessError::Visibility {
        dataset: dataset.to_string(),
        target: *target,
        source,
    };

    let mut eligible = Vec::new();
    let mut max_visible_fraction = 0.0_f64;
    let mut any_instance = false;
    for (index, g) in scene.meta.gt_instances.iter().enumerate() {
        if g.obj_id != target.obj_id {
            continue;
        }
        any_instance = true;
        let gt = renders
            .get_or_render(g.obj_id, mesh, &g.pose, &k)
            .map_err(render_err)?;
        let mask =
            visib_mask_gt(&gt.distance, scene.distance, &cfg.visibility).map_err(vis_err)?;
        let fraction = if gt.silhouette == 0 {
            0.0
        } else {
            mask.count() as f64 / gt.silhouette as f64
        };
        max_visible_fraction = max_visible_fraction.max(fraction);
        if fraction >= MIN_VISIBLE_FRACTION {
            eligible.push((index, fraction, gt, mask));
        }
    }
    if !any_instance {
        return Err(HarnessError::InvalidTarget {
            dataset: dataset.to_string(),
            target: *target,
            msg: "image has no ground-truth instance of this object".into(),
        });
    }

    let estimate = select_estimate(target, estimates);
    let mut result = TargetResult {
        target: *target,
        matched_instance: None,
        error: None,
        correct: false,
        skipped_reason: None,
        max_visible_fraction,
        eligible_instances: eligible.len(),
        estimate_score: estimate.map(|e| e.score),
        time_s: estimate.map(|e| e.time_s),
        profiles: Vec::new(),
    };
    if eligible.is_empty() {
        if estimate.is_some() {
            log::info!(
                "{dataset}: target {target:?} excluded by the visibility filter despite an estimate"
            );
        }
        result.skipped_reason = Some(SkipReason::BelowVisibilityFilter);
        return Ok(result);
    }
    let Some(estimate) = estimate else {
        result.skipped_reason = Some(SkipReason::NoEstimate);
        return Ok(result);
    };

    let est = renders
        .get_or_render(target.obj_id, mesh, &estimate.pose, &k)
        .map_err(render_err)?;
    for (index, visible_fraction, gt, gt_mask) in eligible {
        let est_mask = visib_mask_est(&est.distance, scene.distance, &gt_mask, &cfg.visibility)
            .map_err(vis_err)?;
        let profile = VsdProfile::new(&est.distance, &gt.distance, &est_mask, &gt_mask)
            .expect("maps share the image size");
        result.profiles.push(InstanceProfile {
            index,
            visible_fraction,
            profile,
        });
    }
    let d = decide(&result.profiles, cfg.vsd.tau, cfg.vsd.theta);
    if d.empty_union {
        log::warn!("{dataset}: target {target:?} has an empty mask union; counted as incorrect");
        result.skipped_reason = Some(SkipReason::EmptyUnion);
    }
    result.matched_instance = d.matched_instance;
    result.error = d.error.map(|value| PoseError {
        kind: ErrorKind::Vsd,
        value,
    });
    result.correct = d.correct;
    Ok(result)
}

/// A dataset with its metadata, models and caches loaded.
pub struct DatasetContext {
    pub dataset: Dataset,
    pub metas: BTreeMap<(u32, u32), ImageMeta>,
    models: BTreeMap<u32, Result<Arc<Mesh>, String>>,
    scenes: RwLock<HashMap<(u32, u32), Arc<DistanceMap>>>,
    renders: RenderCache,
}

impl DatasetContext {
    pub fn open(dataset: Dataset) -> Result<Self, HarnessError> {
        let metas = dataset.load_all_meta()?;
        let mut obj_ids: Vec<u32> = dataset.manifest.obj_ids.clone();
        obj_ids.extend(metas.values().flat_map(|m| m.gt_instances.iter().map(|g| g.obj_id)));
        obj_ids.sort_unstable();
        obj_ids.dedup();
        let models = obj_ids
            .into_iter()
            .map(|id| {
                let m = dataset.load_model(id).map(Arc::new).map_err(|e| e.to_string());
                (id, m)
            })
            .collect();
        Ok(Self {
            dataset,
            metas,
            models,
            scenes: RwLock::new(HashMap::new()),
            renders: RenderCache::default(),
        })
    }

    pub fn name(&self) -> &str {
        self.dataset.name()
    }

    pub fn model(&self, obj_id: u32) -> Result<Arc<Mesh>, HarnessError> {
        let missing = |reason: String| HarnessError::MissingModel {
            dataset: self.name().to_string(),
            obj_id,
            reason,
        };
        match self.models.get(&obj_id) {
            Some(Ok(m)) => Ok(Arc::clone(m)),
            Some(Err(e)) => Err(missing(e.clone())),
            None => Err(missing(format!("{} not found", self.dataset.model_path(obj_id).display()))),
        }
    }

    /// Measured distance map of an image, loaded once.
    pub fn scene_distance(&self, meta: &ImageMeta) -> Result<Arc<DistanceMap>, HarnessError> {
        let key = (meta.scene_id, meta.im_id);
        if let Some(d) = self.scenes.read().get(&key) {
            return Ok(Arc::clone(d));
        }
        let depth = dataset::scene::load_depth(meta)?;
        let distance = Arc::new(
            depth_to_distance(&depth, &meta.intrinsics).expect("depth size checked on load"),
        );
        self.scenes.write().insert(key, Arc::clone(&distance));
        Ok(distance)
    }

    pub fn derived_targets(&self) -> Vec<TestTarget> {
        derive_targets(self.metas.values())
    }

    fn check_target(&self, t: &TestTarget) -> Result<&ImageMeta, HarnessError> {
        let invalid = |msg: &str| HarnessError::InvalidTarget {
            dataset: self.name().to_string(),
            target: *t,
            msg: msg.to_string(),
        };
        let meta = self
            .metas
            .get(&(t.scene_id, t.im_id))
            .ok_or_else(|| invalid("no such image"))?;
        if !meta.gt_instances.iter().any(|g| g.obj_id == t.obj_id) {
            return Err(invalid("image has no ground-truth instance of this object"));
        }
        Ok(meta)
    }
}

/// Every evaluated target, grouped by dataset, plus the recall summary.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub config: EvalConfig,
    pub results: BTreeMap<String, Vec<TargetResult>>,
    pub report: RecallReport,
}

/// A benchmark held open across evaluations; renders and scene depth are
/// cached between runs.
pub struct Evaluator {
    datasets: Vec<DatasetContext>,
}

fn assign_sections<T>(
    sections: Sectioned<T>,
    names: &[&str],
    what: &str,
) -> Result<BTreeMap<String, Vec<T>>, HarnessError> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (section, rows) in sections {
        let name = if section == DEFAULT_SECTION {
            match names {
                [only] => only.to_string(),
                _ => {
                    return Err(HarnessError::Config(format!(
                        "{what} without a [dataset] section are ambiguous with {} datasets",
                        names.len()
                    )))
                }
            }
        } else if names.contains(&section.as_str()) {
            section
        } else {
            return Err(DatasetError::UnknownDataset(section).into());
        };
        out.entry(name).or_default().extend(rows);
    }
    Ok(out)
}

impl Evaluator {
    pub fn open(root: &Path) -> Result<Self, HarnessError> {
        let datasets = open_benchmark(root)?
            .into_iter()
            .map(DatasetContext::open)
            .collect::<Result<_, _>>()?;
        Ok(Self { datasets })
    }

    pub fn datasets(&self) -> &[DatasetContext] {
        &self.datasets
    }

    pub fn names(&self) -> Vec<&str> {
        self.datasets.iter().map(|d| d.name()).collect()
    }

    /// Targets per dataset: from a targets file when given, otherwise one
    /// per annotated object in every image.
    pub fn resolve_targets(
        &self,
        file: Option<Sectioned<TestTarget>>,
    ) -> Result<BTreeMap<String, Vec<TestTarget>>, HarnessError> {
        let mut out: BTreeMap<String, Vec<TestTarget>> = match file {
            Some(sections) => assign_sections(sections, &self.names(), "targets")?,
            None => self
                .datasets
                .iter()
                .map(|d| (d.name().to_string(), d.derived_targets()))
                .collect(),
        };
        for d in &self.datasets {
            let list = out.entry(d.name().to_string()).or_default();
            list.sort_unstable();
            list.dedup();
            for t in list.iter() {
                d.check_target(t)?;
            }
        }
        Ok(out)
    }

    pub fn resolve_estimates(
        &self,
        estimates: Sectioned<EstimateRecord>,
    ) -> Result<BTreeMap<String, Vec<EstimateRecord>>, HarnessError> {
        assign_sections(estimates, &self.names(), "estimates")
    }

    /// Evaluates every target in parallel on `cfg.workers` threads. The
    /// result does not depend on the worker count.
    pub fn evaluate(
        &self,
        targets: &BTreeMap<String, Vec<TestTarget>>,
        estimates: &BTreeMap<String, Vec<EstimateRecord>>,
        cfg: &EvalConfig,
    ) -> Result<Evaluation, HarnessError> {
        let empty = Vec::new();
        let mut work = Vec::new();
        let mut grouped: Vec<HashMap<(u32, u32, u32), Vec<EstimateRecord>>> = Vec::new();
        for (di, d) in self.datasets.iter().enumerate() {
            let ts = targets.get(d.name()).unwrap_or(&empty);
            let mut by_target: HashMap<(u32, u32, u32), Vec<EstimateRecord>> = HashMap::new();
            for e in estimates.get(d.name()).unwrap_or(&Vec::new()) {
                by_target.entry((e.scene_id, e.im_id, e.obj_id)).or_default().push(*e);
            }
            let mut extra = 0;
            let mut matched = 0;
            for t in ts {
                if let Some(list) = by_target.get(&(t.scene_id, t.im_id, t.obj_id)) {
                    matched += list.len();
                    extra += list.len() - 1;
                }
                work.push((di, *t));
            }
            let total: usize = by_target.values().map(Vec::len).sum();
            if extra > 0 {
                log::warn!("{}: {extra} extra estimates ignored (one pose per target)", d.name());
            }
            if total > matched {
                log::warn!("{}: {} estimates do not match any target", d.name(), total - matched);
            }
            grouped.push(by_target);
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
        let outcomes: Vec<Result<TargetResult, HarnessError>> = pool.install(|| {
            work.par_iter()
                .map(|(di, t)| {
                    let d = &self.datasets[*di];
                    let meta = d.check_target(t)?;
                    let mesh = d.model(t.obj_id)?;
                    let distance = d.scene_distance(meta)?;
                    let ests = grouped[*di]
                        .get(&(t.scene_id, t.im_id, t.obj_id))
                        .map(Vec::as_slice)
                        .unwrap_or(&[]);
                    let scene = SceneView {
                        meta,
                        distance: &distance,
                    };
                    evaluate_target(d.name(), t, ests, scene, &mesh, cfg, &d.renders)
                })
                .collect()
        });

        let mut results: BTreeMap<String, Vec<TargetResult>> = self
            .datasets
            .iter()
            .map(|d| (d.name().to_string(), Vec::new()))
            .collect();
        for ((di, _), r) in work.iter().zip(outcomes) {
            results
                .get_mut(self.datasets[*di].name())
                .expect("every dataset has an entry")
                .push(r?);
        }
        let report = score(&results);
        Ok(Evaluation {
            config: *cfg,
            results,
            report,
        })
    }

    /// Resolves targets and estimates, then evaluates.
    pub fn run(
        &self,
        targets: Option<Sectioned<TestTarget>>,
        estimates: Sectioned<EstimateRecord>,
        cfg: &EvalConfig,
    ) -> Result<Evaluation, HarnessError> {
        let targets = self.resolve_targets(targets)?;
        let estimates = self.resolve_estimates(estimates)?;
        self.evaluate(&targets, &estimates, cfg)
    }
}

/// Opens the benchmark at `root`, loads the files and evaluates.
pub fn run_evaluation(
    root: &Path,
    targets_file: Option<&Path>,
    estimates_file: &Path,
    cfg: &EvalConfig,
) -> Result<Evaluation, HarnessError> {
    let estimates = dataset::load_estimates(estimates_file)?;
    let targets = targets_file.map(dataset::load_targets).transpose()?;
    Evaluator::open(root)?.run(targets, estimates, cfg)
}
