//! Consistency checks across manifest, models and scenes.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use super::scene::{load_depth, scan_scene};
use super::{open_benchmark, Dataset, DatasetError, Location};

/// One problem, tagged with the dataset it was found in.
#[derive(Debug)]
pub struct Finding {
    pub dataset: String,
    pub error: DatasetError,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.dataset, self.error)
    }
}

/// Checks one dataset and returns every problem found.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Finding> {
    let mut issues = Vec::new();
    let mut models = BTreeSet::new();
    for &obj_id in &dataset.manifest.obj_ids {
        match dataset.load_model(obj_id) {
            Ok(_) => {
                models.insert(obj_id);
            }
            Err(e) => issues.push(e),
        }
    }
    match dataset.scene_ids() {
        Err(e) => issues.push(e),
        Ok(ids) => {
            for scene_id in ids {
                let dir = dataset.scene_dir(scene_id);
                let images = scan_scene(&dir, dataset.manifest.depth_scale, &mut issues);
                for meta in &images {
                    for (k, g) in meta.gt_instances.iter().enumerate() {
                        if !models.contains(&g.obj_id) {
                            issues.push(DatasetError::InconsistentIds {
                                origin: format!(
                                    "{}, {}",
                                    dir.join(super::SCENE_GT_FILE).display(),
                                    Location::Entry(format!(
                                        "scene {scene_id} image {} instance {k}",
                                        meta.im_id
                                    ))
                                ),
                                msg: format!(
                                    "object {} has no loadable model ({})",
                                    g.obj_id,
                                    dataset.model_path(g.obj_id).display()
                                ),
                            });
                        }
                    }
                    if let Err(e) = load_depth(meta) {
                        issues.push(e);
                    }
                }
            }
        }
    }
    issues
        .into_iter()
        .map(|error| Finding {
            dataset: dataset.name().to_string(),
            error,
        })
        .collect()
}

/// Validates every dataset below `root`. Fails only when the benchmark
/// itself cannot be opened.
pub fn validate_benchmark(root: &Path) -> Result<Vec<Finding>, DatasetError> {
    Ok(open_benchmark(root)?.iter().flat_map(validate_dataset).collect())
}
