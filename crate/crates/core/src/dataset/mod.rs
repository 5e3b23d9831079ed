//! On-disk dataset layout.
//!
//! ```text
//! <benchmark root>/                  one dataset directory, or several as subdirectories
//!   <dataset>/
//!     dataset.json                   {"name", "model_unit_mm", "depth_scale", "obj_ids"}
//!     models/obj_000001.ply
//!     test/000001/
//!       scene_camera.json            {"<im_id>": {"fx","fy","cx","cy","width","height","depth_scale"?}}
//!       scene_gt.json                {"<im_id>": [{"obj_id", "cam_R_m2c": [9, row-major], "cam_t_m2c": [3, mm]}]}
//!       depth/000000.png             16-bit single channel, mm = value * depth_scale
//!       rgb/000000.png               optional, never read by metrics
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Mesh};

pub mod depth_png;
pub mod estimates;
pub mod ply;
pub mod scene;
pub mod targets;
mod text;
pub mod validate;

pub use estimates::{
    format_estimates, load_estimates, parse_estimates, save_estimates, EstimateRecord,
    ESTIMATES_HEADER,
};
pub use scene::{GtInstance, ImageMeta, SceneImage};
pub use targets::{derive_targets, load_targets, parse_targets, TestTarget};
pub use text::{Sectioned, DEFAULT_SECTION};

pub const MANIFEST_FILE: &str = "dataset.json";
pub const SCENE_CAMERA_FILE: &str = "scene_camera.json";
pub const SCENE_GT_FILE: &str = "scene_gt.json";

/// Where in a file a problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
    Entry(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte {b}"),
            Location::Line(l) => write!(f, "line {l}"),
            Location::Entry(e) => f.write_str(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{origin}, {location}: {msg}")]
    Parse {
        origin: String,
        location: Location,
        msg: String,
    },
    #[error("{origin}, line {line}: non-finite value in field '{field}'")]
    NonFiniteValue {
        origin: String,
        line: usize,
        field: &'static str,
    },
    #[error("{origin}, {location}: invalid pose: {source}")]
    InvalidPose {
        origin: String,
        location: Location,
        #[source]
        source: GeometryError,
    },
    #[error("{origin}: inconsistent ids: {msg}")]
    InconsistentIds { origin: String, msg: String },
    #[error("{}: {source}", path.display())]
    Ply {
        path: PathBuf,
        #[source]
        source: ply::PlyError,
    },
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        DatasetError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Line number of a problem in a text file, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Parse {
                location: Location::Line(l),
                ..
            }
            | DatasetError::InvalidPose {
                location: Location::Line(l),
                ..
            } => Some(*l),
            DatasetError::NonFiniteValue { line, .. } => Some(*line),
            _ => None,
        }
    }

    /// I/O problems (as opposed to malformed or inconsistent content).
    pub fn is_io(&self) -> bool {
        match self {
            DatasetError::Io { .. } | DatasetError::MissingFile(_) => true,
            DatasetError::Ply { source, .. } => matches!(source, ply::PlyError::Io { .. }),
            _ => false,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Per-dataset manifest. Depth scales and units are data, not code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    /// Millimeters per model file unit.
    #[serde(default = "one")]
    pub model_unit_mm: f64,
    /// Default millimeters per depth-image unit.
    #[serde(default = "one")]
    pub depth_scale: f64,
    pub obj_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        origin: path.display().to_string(),
        location: Location::Line(e.line()),
        msg: e.to_string(),
    })
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join(MANIFEST_FILE);
        let manifest: Manifest = read_json(&path)?;
        let origin = path.display().to_string();
        for (field, v) in [
            ("model_unit_mm", manifest.model_unit_mm),
            ("depth_scale", manifest.depth_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DatasetError::Parse {
                    origin,
                    location: Location::Entry(field.into()),
                    msg: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn model_path(&self, obj_id: u32) -> PathBuf {
        self.root.join("models").join(format!("obj_{obj_id:06}.ply"))
    }

    /// Loads a model in millimeters. Non-fatal PLY findings are logged.
    pub fn load_model(&self, obj_id: u32) -> Result<Mesh, DatasetError> {
        let path = self.model_path(obj_id);
        if !path.exists() {
            return Err(DatasetError::MissingFile(path));
        }
        let ply = ply::load_model(&path, self.manifest.model_unit_mm)
            .map_err(|source| DatasetError::Ply { path: path.clone(), source })?;
        for w in &ply.warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(ply.mesh)
    }

    pub fn scene_dir(&self, scene_id: u32) -> PathBuf {
        self.root.join("test").join(format!("{scene_id:06}"))
    }

    /// Scene ids present under `test/`, ascending.
    pub fn scene_ids(&self) -> Result<Vec<u32>, DatasetError> {
        let dir = self.root.join("test");
        let rd = std::fs::read_dir(&dir).map_err(|e| DatasetError::io(&dir, e))?;
        let mut ids = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|e| DatasetError::io(&dir, e))?;
            if entry.path().is_dir() {
                if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn load_scene_meta(&self, scene_id: u32) -> Result<Vec<ImageMeta>, DatasetError> {
        scene::load_scene_meta(&self.scene_dir(scene_id), self.manifest.depth_scale)
    }

    /// Metadata of every image, keyed by `(scene_id, im_id)`.
    pub fn load_all_meta(&self) -> Result<BTreeMap<(u32, u32), ImageMeta>, DatasetError> {
        let mut out = BTreeMap::new();
        for scene_id in self.scene_ids()? {
            for m in self.load_scene_meta(scene_id)? {
                out.insert((m.scene_id, m.im_id), m);
            }
        }
        Ok(out)
    }
}

/// Opens every dataset below `root`, sorted by name.
///
/// `root` is either a dataset directory itself or a directory whose
/// subdirectories are datasets.
pub fn open_benchmark(root: &Path) -> Result<Vec<Dataset>, DatasetError> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![Dataset::open(root)?]);
    }
    let rd = std::fs::read_dir(root).map_err(|e| DatasetError::io(root, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| DatasetError::io(root, e))?;
        let p = entry.path();
        if p.join(MANIFEST_FILE).is_file() {
            out.push(Dataset::open(&p)?);
        }
    }
    if out.is_empty() {
        return Err(DatasetError::MissingFile(root.join(MANIFEST_FILE)));
    }
    out.sort_by(|a, b| a.name().cmp(b.name()));
    for w in out.windows(2) {
        if w[0].name() == w[1].name() {
            return Err(DatasetError::InconsistentIds {
                origin: root.display().to_string(),
                msg: format!("dataset name '{}' used twice", w[0].name()),
            });
        }
    }
    Ok(out)
}

/// Writes `bytes` to `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DatasetError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| DatasetError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| DatasetError::io(path, e))?;
    tmp.persist(path).map_err(|e| DatasetError::io(path, e.error))?;
    Ok(())
}
