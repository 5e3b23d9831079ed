use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::geometry::{CameraIntrinsics, Mesh, Pose};
use crate::maps::DistanceMap;
use crate::raster::{depth_to_distance, render_depth, RenderError};

/// A rendering reduced to what scoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub distance: DistanceMap,
    /// Number of pixels covered by the model.
    pub silhouette: usize,
}

/// Renders `mesh` at `pose`. A model entirely behind the camera renders as
/// an empty image rather than failing.
pub fn render_distance(
    mesh: &Mesh,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Rendered, RenderError> {
    let distance = match render_depth(mesh, pose, k) {
        Ok(depth) => depth_to_distance(&depth, k)?,
        Err(RenderError::MeshEntirelyBehindCamera) => DistanceMap::empty(k.width, k.height),
        Err(e) => return Err(e),
    };
    let silhouette = distance.valid_count();
    Ok(Rendered {
        distance,
        silhouette,
    })
}

const POSE_QUANTUM: f64 = 1e-6;

type Key = (u32, [i64; 12], [u64; 4], (u32, u32));

fn key(obj_id: u32, pose: &Pose, k: &CameraIntrinsics) -> Key {
    let r = pose.rotation_row_major();
    let t = pose.translation();
    let mut q = [0i64; 12];
    for (dst, v) in q.iter_mut().zip(r.iter().chain([t.x, t.y, t.z].iter())) {
        *dst = (v / POSE_QUANTUM).round() as i64;
    }
    (
        obj_id,
        q,
        [k.fx, k.fy, k.cx, k.cy].map(f64::to_bits),
        (k.width, k.height),
    )
}

/// Concurrent render memo keyed by object, quantized pose and intrinsics.
///
/// Entries also remember the exact pose; a quantized-key hit for a
/// different exact pose renders afresh, so results never depend on which
/// of two nearby poses was cached first.
pub struct RenderCache {
    entries: RwLock<HashMap<Key, (Pose, Arc<Rendered>)>>,
    capacity: usize,
}

impl RenderCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_render(
        &self,
        obj_id: u32,
        mesh: &Mesh,
        pose: &Pose,
        k: &CameraIntrinsics,
    ) -> Result<Arc<Rendered>, RenderError> {
        let key = key(obj_id, pose, k);
        if let Some((cached_pose, r)) = self.entries.read().get(&key) {
            if cached_pose == pose {
                return Ok(Arc::clone(r));
            }
        }
        let rendered = Arc::new(render_distance(mesh, pose, k)?);
        let mut map = self.entries.write();
        if map.len() < self.capacity || map.contains_key(&key) {
            map.insert(key, (*pose, Arc::clone(&rendered)));
        }
        Ok(rendered)
    }
}

impl Default for RenderCache {
    fn default() -> Self {
        Self::new(4096)
    }
}
