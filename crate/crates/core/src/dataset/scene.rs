//! Per-scene camera and ground-truth files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::depth_png::read_depth_png;
use super::{read_json, DatasetError, Location, SCENE_CAMERA_FILE, SCENE_GT_FILE};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::maps::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtInstance {
    pub obj_id: u32,
    pub pose: Pose,
}

/// Everything about a test image except its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub scene_id: u32,
    pub im_id: u32,
    pub intrinsics: CameraIntrinsics,
    /// Millimeters per raw depth unit.
    pub depth_scale: f64,
    pub gt_instances: Vec<GtInstance>,
    pub depth_path: PathBuf,
    pub rgb_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub meta: ImageMeta,
    /// Depth in millimeters.
    pub depth: DepthMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_scale: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtEntry {
    pub obj_id: u32,
    pub cam_R_m2c: Vec<f64>,
    pub cam_t_m2c: Vec<f64>,
}

pub fn depth_file(scene_dir: &Path, im_id: u32) -> PathBuf {
    scene_dir.join("depth").join(format!("{im_id:06}.png"))
}

pub fn rgb_file(scene_dir: &Path, im_id: u32) -> PathBuf {
    scene_dir.join("rgb").join(format!("{im_id:06}.png"))
}

fn parse_im_id(origin: &str, key: &str) -> Result<u32, DatasetError> {
    key.parse().map_err(|_| DatasetError::Parse {
        origin: origin.to_string(),
        location: Location::Entry(format!("key '{key}'")),
        msg: "image id must be a non-negative integer".into(),
    })
}

fn scene_id_of(dir: &Path) -> Option<u32> {
    dir.file_name()?.to_str()?.parse().ok()
}

/// Reads camera and ground-truth files, collecting every problem found.
///
/// Fatal problems (unreadable files) stop early; per-entry problems are
/// pushed to `issues` and the entry is skipped.
pub fn scan_scene(
    dir: &Path,
    default_depth_scale: f64,
    issues: &mut Vec<DatasetError>,
) -> Vec<ImageMeta> {
    let cam_path = dir.join(SCENE_CAMERA_FILE);
    let gt_path = dir.join(SCENE_GT_FILE);
    let Some(scene_id) = scene_id_of(dir) else {
        issues.push(DatasetError::format(dir, "scene directory name is not an integer id"));
        return Vec::new();
    };
    let cams: BTreeMap<String, CameraEntry> = match read_json(&cam_path) {
        Ok(c) => c,
        Err(e) => {
            issues.push(e);
            return Vec::new();
        }
    };
    let gts: BTreeMap<String, Vec<GtEntry>> = match read_json(&gt_path) {
        Ok(g) => g,
        Err(e) => {
            issues.push(e);
            return Vec::new();
        }
    };
    let cam_origin = cam_path.display().to_string();
    let gt_origin = gt_path.display().to_string();

    let mut images: BTreeMap<u32, ImageMeta> = BTreeMap::new();
    let cam_ids: std::collections::BTreeSet<u32> =
        cams.keys().filter_map(|k| k.parse().ok()).collect();
    for (key, c) in &cams {
        let im_id = match parse_im_id(&cam_origin, key) {
            Ok(id) => id,
            Err(e) => {
                issues.push(e);
                continue;
            }
        };
        let entry = |msg: String| DatasetError::Parse {
            origin: cam_origin.clone(),
            location: Location::Entry(format!("image {im_id}")),
            msg,
        };
        let intrinsics = match CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height) {
            Ok(k) => k,
            Err(e) => {
                issues.push(entry(e.to_string()));
                continue;
            }
        };
        let depth_scale = c.depth_scale.unwrap_or(default_depth_scale);
        if !(depth_scale.is_finite() && depth_scale > 0.0) {
            issues.push(entry(format!("depth_scale must be positive, got {depth_scale}")));
            continue;
        }
        let depth_path = depth_file(dir, im_id);
        if !depth_path.is_file() {
            issues.push(DatasetError::MissingFile(depth_path));
            continue;
        }
        let rgb = rgb_file(dir, im_id);
        images.insert(
            im_id,
            ImageMeta {
                scene_id,
                im_id,
                intrinsics,
                depth_scale,
                gt_instances: Vec::new(),
                depth_path,
                rgb_path: rgb.is_file().then_some(rgb),
            },
        );
    }

    for (key, list) in &gts {
        let im_id = match parse_im_id(&gt_origin, key) {
            Ok(id) => id,
            Err(e) => {
                issues.push(e);
                continue;
            }
        };
        let Some(meta) = images.get_mut(&im_id) else {
            if !cam_ids.contains(&im_id) {
                issues.push(DatasetError::InconsistentIds {
                    origin: gt_origin.clone(),
                    msg: format!("image {im_id} has ground truth but no camera entry"),
                });
            }
            continue;
        };
        for (k, g) in list.iter().enumerate() {
            let location = Location::Entry(format!("scene {scene_id} image {im_id} instance {k}"));
            let (Ok(r), Ok(t)) = (
                <[f64; 9]>::try_from(g.cam_R_m2c.as_slice()),
                <[f64; 3]>::try_from(g.cam_t_m2c.as_slice()),
            ) else {
                issues.push(DatasetError::Parse {
                    origin: gt_origin.clone(),
                    location,
                    msg: format!(
                        "expected 9 rotation and 3 translation values, got {} and {}",
                        g.cam_R_m2c.len(),
                        g.cam_t_m2c.len()
                    ),
                });
                continue;
            };
            match Pose::from_row_major(&r, &t) {
                Ok(checked) => {
                    if checked.repaired {
                        log::warn!("{gt_origin}, {location}: rotation re-orthonormalized");
                    }
                    meta.gt_instances.push(GtInstance {
                        obj_id: g.obj_id,
                        pose: checked.pose,
                    });
                }
                Err(source) => issues.push(DatasetError::InvalidPose {
                    origin: gt_origin.clone(),
                    location,
                    source,
                }),
            }
        }
    }
    images.into_values().collect()
}

/// Camera and ground truth of every image in a scene, ordered by image id.
pub fn load_scene_meta(
    dir: &Path,
    default_depth_scale: f64,
) -> Result<Vec<ImageMeta>, DatasetError> {
    let mut issues = Vec::new();
    let images = scan_scene(dir, default_depth_scale, &mut issues);
    match issues.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(images),
    }
}

/// Reads an image's depth in millimeters.
pub fn load_depth(meta: &ImageMeta) -> Result<DepthMap, DatasetError> {
    let raw = read_depth_png(&meta.depth_path)?;
    let (w, h) = (meta.intrinsics.width, meta.intrinsics.height);
    if (raw.width, raw.height) != (w, h) {
        return Err(DatasetError::InconsistentIds {
            origin: meta.depth_path.display().to_string(),
            msg: format!(
                "depth image is {}x{} but the camera entry says {w}x{h}",
                raw.width, raw.height
            ),
        });
    }
    Ok(raw.to_depth_map(meta.depth_scale))
}

/// Loads a whole scene with depth converted to millimeters.
pub fn load_scene(dir: &Path, default_depth_scale: f64) -> Result<Vec<SceneImage>, DatasetError> {
    load_scene_meta(dir, default_depth_scale)?
        .into_iter()
        .map(|meta| {
            let depth = load_depth(&meta)?;
            Ok(SceneImage { meta, depth })
        })
        .collect()
}
