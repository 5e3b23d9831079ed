//! Synthetic miniature datasets in the on-disk layout.
//!
//! Scenes are rendered with the same rasterizer the metrics use, so exact
//! ground-truth estimates reproduce the scene depth up to 16-bit
//! quantization and injected dropout.

pub mod shapes;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::depth_png::{write_depth_png, RawDepth};
use crate::dataset::ply::{write_ply_ascii, write_ply_binary_le};
use crate::dataset::scene::{depth_file, CameraEntry, GtEntry};
use crate::dataset::{
    write_atomic, Dataset, DatasetError, EstimateRecord, GtInstance, Manifest, MANIFEST_FILE,
    SCENE_CAMERA_FILE, SCENE_GT_FILE,
};
use crate::geometry::{CameraIntrinsics, Mesh, Pose};
use crate::maps::DepthMap;
use crate::raster::{depth_to_distance, render_depth, silhouette, Rasterizer, RenderError};
use crate::visibility::{visib_mask_gt, VisibilityConfig};

/// Scene geometry that is not an annotated object.
#[derive(Debug, Clone)]
pub struct Occluder {
    pub mesh: Mesh,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct ImageSpec {
    pub im_id: u32,
    pub intrinsics: CameraIntrinsics,
    pub instances: Vec<GtInstance>,
    pub occluders: Vec<Occluder>,
    /// Depth of a fronto-parallel wall filling the view, if any.
    pub background_mm: Option<f64>,
    /// Fraction of pixels whose measurement is dropped.
    pub dropout: f64,
    /// Per-image depth scale; the manifest default applies otherwise.
    pub depth_scale: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    /// Models are stored as `mesh / model_unit_mm`.
    pub model_unit_mm: f64,
    pub depth_scale: f64,
    pub binary_models: bool,
    pub models: BTreeMap<u32, Mesh>,
    pub scenes: BTreeMap<u32, Vec<ImageSpec>>,
    pub seed: u64,
}

fn draw_mesh(raster: &mut Rasterizer, mesh: &Mesh, pose: &Pose) {
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| pose.transform_point(v)).collect();
    for t in mesh.triangles() {
        raster.draw_triangle(&t.map(|i| cam[i as usize]));
    }
}

/// Renders the full scene (instances, occluders, background) in millimeters.
pub fn synthesize_depth(
    image: &ImageSpec,
    models: &BTreeMap<u32, Mesh>,
    rng: &mut impl Rng,
) -> Result<DepthMap, DatasetError> {
    let k = image.intrinsics;
    let mut raster = Rasterizer::new(k);
    for inst in &image.instances {
        let mesh = models.get(&inst.obj_id).ok_or_else(|| DatasetError::InconsistentIds {
            origin: format!("image {}", image.im_id),
            msg: format!("no model for object {}", inst.obj_id),
        })?;
        draw_mesh(&mut raster, mesh, &inst.pose);
    }
    for occ in &image.occluders {
        draw_mesh(&mut raster, &occ.mesh, &occ.pose);
    }
    if let Some(z) = image.background_mm {
        let (w, h) = (k.width as f64, k.height as f64);
        let corner = |u: f64, v: f64| Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
        let (a, b, c, d) = (
            corner(-1.0, -1.0),
            corner(w + 1.0, -1.0),
            corner(w + 1.0, h + 1.0),
            corner(-1.0, h + 1.0),
        );
        raster.draw_triangle(&[a, b, c]);
        raster.draw_triangle(&[a, c, d]);
    }
    let mut depth = raster.finish();
    if image.dropout > 0.0 {
        for i in 0..depth.len() {
            if rng.gen_bool(image.dropout) {
                depth.set(i, 0.0);
            }
        }
    }
    Ok(depth)
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("fixture types serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes a dataset below `root/<name>` and returns that directory.
pub fn write_dataset(root: &Path, spec: &DatasetSpec) -> Result<PathBuf, DatasetError> {
    let dir = root.join(&spec.name);
    let models_dir = dir.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| DatasetError::io(&models_dir, e))?;
    let manifest = Manifest {
        name: spec.name.clone(),
        model_unit_mm: spec.model_unit_mm,
        depth_scale: spec.depth_scale,
        obj_ids: spec.models.keys().copied().collect(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &to_json(&manifest))?;
    for (&obj_id, mesh) in &spec.models {
        let stored = if spec.model_unit_mm == 1.0 {
            mesh.clone()
        } else {
            mesh.scaled(1.0 / spec.model_unit_mm)
        };
        let bytes = if spec.binary_models {
            write_ply_binary_le(&stored)
        } else {
            write_ply_ascii(&stored)
        };
        write_atomic(&models_dir.join(format!("obj_{obj_id:06}.ply")), &bytes)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (&scene_id, images) in &spec.scenes {
        let scene_dir = dir.join("test").join(format!("{scene_id:06}"));
        let depth_dir = scene_dir.join("depth");
        std::fs::create_dir_all(&depth_dir).map_err(|e| DatasetError::io(&depth_dir, e))?;
        let mut cams = BTreeMap::new();
        let mut gts = BTreeMap::new();
        for image in images {
            let k = image.intrinsics;
            cams.insert(
                image.im_id.to_string(),
                CameraEntry {
                    fx: k.fx,
                    fy: k.fy,
                    cx: k.cx,
                    cy: k.cy,
                    width: k.width,
                    height: k.height,
                    depth_scale: image.depth_scale,
                },
            );
            gts.insert(
                image.im_id.to_string(),
                image
                    .instances
                    .iter()
                    .map(|g| {
                        let t = g.pose.translation();
                        GtEntry {
                            obj_id: g.obj_id,
                            cam_R_m2c: g.pose.rotation_row_major().to_vec(),
                            cam_t_m2c: vec![t.x, t.y, t.z],
                        }
                    })
                    .collect::<Vec<_>>(),
            );
            let depth = synthesize_depth(image, &spec.models, &mut rng)?;
            let scale = image.depth_scale.unwrap_or(spec.depth_scale);
            write_depth_png(&depth_file(&scene_dir, image.im_id), &RawDepth::from_map(&depth, scale))?;
        }
        write_atomic(&scene_dir.join(SCENE_CAMERA_FILE), &to_json(&cams))?;
        write_atomic(&scene_dir.join(SCENE_GT_FILE), &to_json(&gts))?;
    }
    Ok(dir)
}

fn random_rotation(rng: &mut impl Rng) -> Pose {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    Pose::from_axis_angle(axis, rng.gen_range(0.0..std::f64::consts::TAU))
}

fn cluttered_image(
    rng: &mut impl Rng,
    im_id: u32,
    k: CameraIntrinsics,
    obj_ids: &[u32],
    with_occluder: bool,
    depth_scale: Option<f64>,
) -> ImageSpec {
    // Four slots in a 2×2 layout; instances never overlap heavily.
    let slots = [(-95.0, -60.0), (95.0, -60.0), (-95.0, 60.0), (95.0, 60.0)];
    let n = rng.gen_range(2..=4);
    let mut instances = Vec::with_capacity(n);
    for &(sx, sy) in slots.iter().take(n) {
        let obj_id = obj_ids[rng.gen_range(0..obj_ids.len())];
        let t = Vector3::new(
            sx + rng.gen_range(-10.0..10.0),
            sy + rng.gen_range(-8.0..8.0),
            rng.gen_range(480.0..620.0),
        );
        instances.push(GtInstance {
            obj_id,
            pose: Pose::from_translation(t).compose(&random_rotation(rng)),
        });
    }
    let mut occluders = Vec::new();
    if with_occluder {
        // A thin board partly in front of the first slot.
        let t = instances[0].pose.translation();
        let shift = rng.gen_range(25.0..45.0);
        occluders.push(Occluder {
            mesh: shapes::cuboid(50.0, 60.0, 4.0),
            pose: Pose::from_translation(Vector3::new(t.x * 0.6 + shift, t.y * 0.6, 0.6 * t.z)),
        });
    }
    ImageSpec {
        im_id,
        intrinsics: k,
        instances,
        occluders,
        background_mm: Some(900.0),
        dropout: 0.02,
        depth_scale,
    }
}

/// Two small datasets with clutter, occlusion, sensor dropout, ASCII and
/// binary models, and both manifest-level and per-image depth scales.
pub fn miniature_benchmark(seed: u64) -> Vec<DatasetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CameraIntrinsics::new(200.0, 200.0, 80.0, 60.0, 160, 120).expect("valid intrinsics");

    let alpha_models: BTreeMap<u32, Mesh> = [
        (1, shapes::cuboid(50.0, 40.0, 30.0)),
        (2, shapes::cylinder(20.0, 60.0, 48)),
        (3, shapes::cuboid(70.0, 45.0, 12.0)),
    ]
    .into();
    let mut alpha_scenes = BTreeMap::new();
    for scene_id in 1..=2 {
        let images = (0..3)
            .map(|im_id| cluttered_image(&mut rng, im_id, k, &[1, 2, 3], im_id != 1, None))
            .collect();
        alpha_scenes.insert(scene_id, images);
    }

    let beta_models: BTreeMap<u32, Mesh> = [
        (1, shapes::cylinder(25.0, 50.0, 32)),
        (2, shapes::cuboid(30.0, 60.0, 30.0)),
    ]
    .into();
    let beta_images = (0..4)
        .map(|im_id| {
            let scale = (im_id % 2 == 1).then_some(0.05);
            cluttered_image(&mut rng, im_id, k, &[1, 2], im_id == 2, scale)
        })
        .collect();

    vec![
        DatasetSpec {
            name: "alpha".into(),
            model_unit_mm: 1.0,
            depth_scale: 0.1,
            binary_models: false,
            models: alpha_models,
            scenes: alpha_scenes,
            seed: seed ^ 0xA1,
        },
        DatasetSpec {
            name: "beta".into(),
            model_unit_mm: 1000.0,
            depth_scale: 0.25,
            binary_models: true,
            models: beta_models,
            scenes: [(7, beta_images)].into(),
            seed: seed ^ 0xB2,
        },
    ]
}

/// Writes [`miniature_benchmark`] below `root`.
pub fn write_benchmark(root: &Path, seed: u64) -> Result<Vec<PathBuf>, DatasetError> {
    miniature_benchmark(seed)
        .iter()
        .map(|spec| write_dataset(root, spec))
        .collect()
}

/// One estimate per (image, object) equal to the ground-truth pose of the
/// instance with the largest visible fraction in the stored scene depth.
pub fn exact_estimates(
    dataset: &Dataset,
    visibility: &VisibilityConfig,
) -> Result<Vec<EstimateRecord>, DatasetError> {
    let mut models = BTreeMap::new();
    for &obj_id in &dataset.manifest.obj_ids {
        models.insert(obj_id, dataset.load_model(obj_id)?);
    }
    let mut out = Vec::new();
    for meta in dataset.load_all_meta()?.values() {
        let scene = crate::dataset::scene::load_depth(meta)?;
        let k = meta.intrinsics;
        let scene_dist = depth_to_distance(&scene, &k).expect("depth matches intrinsics");
        let mut best: BTreeMap<u32, (f64, Pose)> = BTreeMap::new();
        for g in &meta.gt_instances {
            let Some(mesh) = models.get(&g.obj_id) else {
                continue;
            };
            let fraction = match render_depth(mesh, &g.pose, &k) {
                Ok(depth) => {
                    let sil = silhouette(&depth);
                    let dist = depth_to_distance(&depth, &k).expect("rendered at k");
                    let mask = visib_mask_gt(&dist, &scene_dist, visibility).expect("same size");
                    if sil.count() == 0 {
                        0.0
                    } else {
                        mask.count() as f64 / sil.count() as f64
                    }
                }
                Err(RenderError::MeshEntirelyBehindCamera) => 0.0,
                Err(e) => panic!("fixture model failed to render: {e}"),
            };
            let entry = best.entry(g.obj_id).or_insert((f64::NEG_INFINITY, g.pose));
            if fraction > entry.0 {
                *entry = (fraction, g.pose);
            }
        }
        for (obj_id, (_, pose)) in best {
            out.push(EstimateRecord {
                scene_id: meta.scene_id,
                im_id: meta.im_id,
                obj_id,
                score: 1.0,
                pose,
                time_s: 0.0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{derive_targets, open_benchmark};

    #[test]
    fn benchmark_roundtrips_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), 3).unwrap();
        let datasets = open_benchmark(dir.path()).unwrap();
        assert_eq!(datasets.iter().map(|d| d.name()).collect::<Vec<_>>(), ["alpha", "beta"]);
        let specs = miniature_benchmark(3);
        for (d, spec) in datasets.iter().zip(&specs) {
            for (&obj_id, mesh) in &spec.models {
                let loaded = d.load_model(obj_id).unwrap();
                assert_eq!(loaded.triangles(), mesh.triangles());
                for (a, b) in loaded.vertices().iter().zip(mesh.vertices()) {
                    assert!((a - b).norm() < 1e-9);
                }
            }
            let metas = d.load_all_meta().unwrap();
            let n_images: usize = spec.scenes.values().map(Vec::len).sum();
            assert_eq!(metas.len(), n_images);
            for m in metas.values() {
                let depth = crate::dataset::scene::load_depth(m).unwrap();
                assert!(depth.valid_count() > depth.len() / 2);
            }
            assert!(!derive_targets(metas.values()).is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_benchmark(a.path(), 11).unwrap();
        write_benchmark(b.path(), 11).unwrap();
        let p = Path::new("alpha/test/000002/depth/000000.png");
        assert_eq!(
            std::fs::read(a.path().join(p)).unwrap(),
            std::fs::read(b.path().join(p)).unwrap()
        );
        let g = Path::new("beta/test/000007/scene_gt.json");
        assert_eq!(
            std::fs::read(a.path().join(g)).unwrap(),
            std::fs::read(b.path().join(g)).unwrap()
        );
    }
}
