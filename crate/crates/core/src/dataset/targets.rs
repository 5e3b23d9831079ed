//! Test targets: an image paired with the id of an object to localize.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::ImageMeta;
use super::text::{parse_err, parse_sectioned, parse_u32, Sectioned};
use super::DatasetError;

pub const TARGETS_HEADER: &str = "scene_id,im_id,obj_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TestTarget {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
}

/// Parses `scene_id,im_id,obj_id` rows. Each section comes back
/// deduplicated and sorted.
pub fn parse_targets(text: &str, origin: &str) -> Result<Sectioned<TestTarget>, DatasetError> {
    let rows = parse_sectioned(text, origin, TARGETS_HEADER, |line, row| {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 3 {
            return Err(parse_err(origin, line, format!("expected 3 fields, got {}", f.len())));
        }
        Ok(TestTarget {
            scene_id: parse_u32(origin, line, "scene_id", f[0])?,
            im_id: parse_u32(origin, line, "im_id", f[1])?,
            obj_id: parse_u32(origin, line, "obj_id", f[2])?,
        })
    })?;
    Ok(rows
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect::<BTreeSet<_>>().into_iter().collect()))
        .collect())
}

pub fn load_targets(path: &Path) -> Result<Sectioned<TestTarget>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_targets(&text, &path.display().to_string())
}

/// One target per distinct object annotated in each image.
pub fn derive_targets<'a>(images: impl IntoIterator<Item = &'a ImageMeta>) -> Vec<TestTarget> {
    let set: BTreeSet<TestTarget> = images
        .into_iter()
        .flat_map(|m| {
            m.gt_instances.iter().map(move |g| TestTarget {
                scene_id: m.scene_id,
                im_id: m.im_id,
                obj_id: g.obj_id,
            })
        })
        .collect();
    set.into_iter().collect()
}

pub fn format_targets(sections: &Sectioned<TestTarget>) -> String {
    let mut out = String::new();
    for (name, rows) in sections {
        if !name.is_empty() {
            out.push_str(&format!("[{name}]\n"));
        }
        out.push_str(TARGETS_HEADER);
        out.push('\n');
        for t in rows {
            out.push_str(&format!("{},{},{}\n", t.scene_id, t.im_id, t.obj_id));
        }
    }
    out
}
