//! Software z-buffer rasterization of meshes into depth maps.
//!
//! Conventions:
//! - pixel `(u, v)` is sampled at its center `(u + 0.5, v + 0.5)`;
//! - edge ties follow a top-left fill rule, so a pixel center on an edge
//!   shared by two triangles is filled exactly once;
//! - depth is interpolated perspective-correctly (linear in `1/z`);
//! - geometry is clipped against the near plane `z = NEAR_PLANE_MM`;
//! - no backface culling and no anti-aliasing.

use nalgebra::{Point2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Mesh, Pose};
use crate::maps::{DepthMap, DistanceMap};
use crate::visibility::VisibilityMask;

pub const NEAR_PLANE_MM: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("every vertex lies at or behind the near plane (z <= {NEAR_PLANE_MM} mm)")]
    MeshEntirelyBehindCamera,
    #[error("depth map is {map:?} but intrinsics describe {intrinsics:?}")]
    DimensionMismatch { map: (u32, u32), intrinsics: (u32, u32) },
}

/// Renders the per-pixel Z of the nearest surface of `mesh` placed at `pose`.
pub fn render_depth(
    mesh: &Mesh,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<DepthMap, RenderError> {
    if mesh.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let cam: Vec<Vector3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| pose.transform_point(v))
        .collect();
    if cam.iter().all(|p| p.z <= NEAR_PLANE_MM) {
        return Err(RenderError::MeshEntirelyBehindCamera);
    }

    let mut raster = Rasterizer::new(*intrinsics);
    for tri in mesh.triangles() {
        let corners = tri.map(|i| cam[i as usize]);
        raster.draw_triangle(&corners);
    }
    Ok(raster.finish())
}

/// Z-buffer over a single image. Triangles are given in camera coordinates.
pub struct Rasterizer {
    k: CameraIntrinsics,
    zbuf: Vec<f64>,
}

impl Rasterizer {
    pub fn new(k: CameraIntrinsics) -> Self {
        Self {
            k,
            zbuf: vec![f64::INFINITY; k.pixel_count()],
        }
    }

    pub fn draw_triangle(&mut self, tri: &[Vector3<f64>; 3]) {
        let behind = tri.iter().filter(|p| p.z < NEAR_PLANE_MM).count();
        match behind {
            0 => self.fill(tri),
            3 => {}
            _ => {
                let poly = clip_near(tri);
                for i in 1..poly.len().saturating_sub(1) {
                    self.fill(&[poly[0], poly[i], poly[i + 1]]);
                }
            }
        }
    }

    fn fill(&mut self, tri: &[Vector3<f64>; 3]) {
        let k = &self.k;
        let mut s = tri.map(|p| Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
        let mut inv_z = tri.map(|p| 1.0 / p.z);
        let mut area = edge(&s[0], &s[1], &s[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            s.swap(1, 2);
            inv_z.swap(1, 2);
            area = -area;
        }

        let min_x = s[0].x.min(s[1].x).min(s[2].x);
        let max_x = s[0].x.max(s[1].x).max(s[2].x);
        let min_y = s[0].y.min(s[1].y).min(s[2].y);
        let max_y = s[0].y.max(s[1].y).max(s[2].y);
        let (w, h) = (k.width as i64, k.height as i64);
        let u0 = ((min_x - 0.5).ceil() as i64).max(0);
        let u1 = ((max_x - 0.5).floor() as i64).min(w - 1);
        let v0 = ((min_y - 0.5).ceil() as i64).max(0);
        let v1 = ((max_y - 0.5).floor() as i64).min(h - 1);
        if u0 > u1 || v0 > v1 {
            return;
        }

        // Fronto-parallel triangles keep their exact depth.
        let flat_z = (tri[0].z == tri[1].z && tri[1].z == tri[2].z).then_some(tri[0].z);
        let edges = [(1, 2), (2, 0), (0, 1)];
        for v in v0..=v1 {
            for u in u0..=u1 {
                let p = Point2::new(u as f64 + 0.5, v as f64 + 0.5);
                let mut bary = [0.0; 3];
                let mut inside = true;
                for (j, &(a, b)) in edges.iter().enumerate() {
                    let e = canonical_edge(&s[a], &s[b], &p);
                    if e < 0.0 || (e == 0.0 && !is_top_left(&s[a], &s[b])) {
                        inside = false;
                        break;
                    }
                    bary[j] = e;
                }
                if !inside {
                    continue;
                }
                let z = flat_z.unwrap_or_else(|| {
                    area / (bary[0] * inv_z[0] + bary[1] * inv_z[1] + bary[2] * inv_z[2])
                });
                let idx = (v * w + u) as usize;
                if z < self.zbuf[idx] {
                    self.zbuf[idx] = z;
                }
            }
        }
    }

    pub fn finish(self) -> DepthMap {
        let values = self
            .zbuf
            .into_iter()
            .map(|z| if z.is_finite() { z } else { 0.0 })
            .collect();
        DepthMap::from_values(self.k.width, self.k.height, values)
    }
}

/// Twice the signed area of `(a, b, p)`; positive when `p` is on the inner
/// side of a positively oriented triangle.
#[inline]
fn edge(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// [`edge`] evaluated with the endpoints in a fixed order, so the two
/// triangles sharing an edge get bit-identical magnitudes of opposite sign.
#[inline]
fn canonical_edge(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> f64 {
    if (a.x, a.y) <= (b.x, b.y) {
        edge(a, b, p)
    } else {
        -edge(b, a, p)
    }
}

/// Top or left edge of a positively oriented triangle in y-down image space.
#[inline]
fn is_top_left(a: &Point2<f64>, b: &Point2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE_MM`.
fn clip_near(tri: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE_MM;
        let b_in = b.z >= NEAR_PLANE_MM;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE_MM - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE_MM;
            out.push(p);
        }
    }
    out
}

/// Converts Z to Euclidean distance from the camera center along each pixel's ray.
pub fn depth_to_distance(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
) -> Result<DistanceMap, RenderError> {
    if depth.dims() != (intrinsics.width, intrinsics.height) {
        return Err(RenderError::DimensionMismatch {
            map: depth.dims(),
            intrinsics: (intrinsics.width, intrinsics.height),
        });
    }
    let (w, h) = depth.dims();
    let mut out = DistanceMap::empty(w, h);
    for v in 0..h {
        let y = (v as f64 + 0.5 - intrinsics.cy) / intrinsics.fy;
        for u in 0..w {
            let i = depth.index(u, v);
            if let Some(z) = depth.at(i) {
                let x = (u as f64 + 0.5 - intrinsics.cx) / intrinsics.fx;
                out.set(i, z * (x * x + y * y + 1.0).sqrt());
            }
        }
    }
    Ok(out)
}

/// Mask of every valid pixel of a rendering.
pub fn silhouette(depth: &DepthMap) -> VisibilityMask {
    let (w, h) = depth.dims();
    VisibilityMask::from_bits(w, h, (0..depth.len()).map(|i| depth.is_valid(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn mesh(v: &[[f64; 3]], t: &[[u32; 3]]) -> Mesh {
        Mesh::new(
            v.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            t.to_vec(),
        )
        .unwrap()
    }

    /// Square at depth `z` spanning `[-s, s]` in x and y.
    fn square(s: f64, z: f64) -> Mesh {
        mesh(
            &[[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]],
            &[[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn constant_plane_triangle() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let m = mesh(
            &[[-50.0, -50.0, 1000.0], [50.0, -50.0, 1000.0], [0.0, 50.0, 1000.0]],
            &[[0, 1, 2]],
        );
        let d = render_depth(&m, &Pose::identity(), &k).unwrap();
        assert_eq!(d.get(320, 240), Some(1000.0));
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.get(400, 240), None);
    }

    #[test]
    fn shared_edges_fill_each_pixel_once() {
        // The diagonal of the square passes exactly through pixel centers.
        let k = k64();
        let m = square(10.0, 100.0);
        let mut raster = Rasterizer::new(k);
        let cam: Vec<_> = m.vertices().to_vec();
        let mut coverage = vec![0u32; k.pixel_count()];
        for t in m.triangles() {
            let mut single = Rasterizer::new(k);
            single.draw_triangle(&t.map(|i| cam[i as usize]));
            raster.draw_triangle(&t.map(|i| cam[i as usize]));
            for (c, z) in coverage.iter_mut().zip(single.finish().values()) {
                *c += (*z > 0.0) as u32;
            }
        }
        assert!(coverage.iter().all(|&c| c <= 1));
        // Square spans [22, 42) in both axes: 20x20 pixels, no gaps.
        assert_eq!(coverage.iter().sum::<u32>(), 400);
        assert_eq!(raster.finish().valid_count(), 400);
    }

    #[test]
    fn half_pixel_sampling_convention() {
        // Triangle edge at x = 32.5 passes through the centers of column 32.
        let k = k64();
        let z = 100.0;
        let x_edge = (32.5 - k.cx) / k.fx * z;
        let left = mesh(
            &[[x_edge, -10.0, z], [x_edge, 10.0, z], [-10.0, 0.0, z]],
            &[[0, 1, 2]],
        );
        let right = mesh(
            &[[x_edge, -10.0, z], [x_edge, 10.0, z], [10.0, 0.0, z]],
            &[[0, 1, 2]],
        );
        let dl = render_depth(&left, &Pose::identity(), &k).unwrap();
        let dr = render_depth(&right, &Pose::identity(), &k).unwrap();
        // Exactly one of the two triangles owns the column of centers on the edge.
        assert!(dl.get(32, 32).is_some() ^ dr.get(32, 32).is_some());
        assert!(dl.get(31, 32).is_some() && dr.get(31, 32).is_none());
        assert!(dr.get(33, 32).is_some() && dl.get(33, 32).is_none());

        // Shifting by half a pixel moves the edge off the centers.
        let shifted = mesh(
            &[[x_edge + 0.25, -10.0, z], [x_edge + 0.25, 10.0, z], [10.0, 0.0, z]],
            &[[0, 1, 2]],
        );
        let ds = render_depth(&shifted, &Pose::identity(), &k).unwrap();
        assert!(ds.get(32, 32).is_none());
        assert!(ds.get(33, 32).is_some());
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let k = k64();
        let mut m = square(3.0, 500.0);
        let far = square(9.0, 900.0);
        let mut v = m.vertices().to_vec();
        v.extend_from_slice(far.vertices());
        let mut t = m.triangles().to_vec();
        t.extend(far.triangles().iter().map(|t| t.map(|i| i + 4)));
        m = Mesh::new(v, t).unwrap();
        let d = render_depth(&m, &Pose::identity(), &k).unwrap();
        let near_only = render_depth(&square(3.0, 500.0), &Pose::identity(), &k).unwrap();
        let mut doubly = 0;
        for i in 0..d.len() {
            if near_only.is_valid(i) {
                doubly += 1;
                assert_eq!(d.at(i), Some(500.0));
            } else if d.is_valid(i) {
                assert_eq!(d.at(i), Some(900.0));
            }
        }
        assert!(doubly > 0);
    }

    #[test]
    fn translation_along_axis_shifts_depth() {
        let k = k64();
        let m = mesh(&[[-8.0, -8.0, 200.0], [8.0, -8.0, 200.0], [0.0, 8.0, 200.0]], &[[0, 1, 2]]);
        let d0 = render_depth(&m, &Pose::identity(), &k).unwrap();
        let delta = 37.0;
        let d1 = render_depth(&m, &Pose::from_translation(Vector3::new(0.0, 0.0, delta)), &k)
            .unwrap();
        let mut n = 0;
        for i in 0..d0.len() {
            if let (Some(a), Some(b)) = (d0.at(i), d1.at(i)) {
                assert!((b - a - delta).abs() < 1e-6);
                n += 1;
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn near_plane_clipping_keeps_front_part() {
        let k = k64();
        // Floor-like quad receding from z=1 to z=200 below the optical axis.
        let m = mesh(
            &[[-50.0, 5.0, 1.0], [50.0, 5.0, 1.0], [50.0, 5.0, 200.0], [-50.0, 5.0, 200.0]],
            &[[0, 1, 2], [0, 2, 3]],
        );
        let d = render_depth(&m, &Pose::identity(), &k).unwrap();
        assert!(d.valid_count() > 0);
        assert!(d.values().iter().filter(|&&z| z > 0.0).all(|&z| z >= NEAR_PLANE_MM - 1e-9));

        let behind = square(5.0, -100.0);
        assert_eq!(
            render_depth(&behind, &Pose::identity(), &k),
            Err(RenderError::MeshEntirelyBehindCamera)
        );
    }

    #[test]
    fn deterministic_renders() {
        let k = k64();
        let m = square(10.0, 150.0);
        let p = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), 0.7)
            .compose(&Pose::identity());
        let p = Pose::from_translation(Vector3::new(0.0, 0.0, 20.0)).compose(&p);
        assert_eq!(render_depth(&m, &p, &k).unwrap(), render_depth(&m, &p, &k).unwrap());
    }

    #[test]
    fn distance_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 2.5, 2.5, 5, 5).unwrap();
        let mut d = DepthMap::empty(5, 5);
        d.set(d.index(2, 2), 1000.0);
        let s = depth_to_distance(&d, &k).unwrap();
        assert_eq!(s.get(2, 2), Some(1000.0));
        assert_eq!(s.get(0, 0), None);

        // (u + 0.5 − cx)/fx = 0.6 and (v + 0.5 − cy)/fy = 0.8.
        let k = CameraIntrinsics::new(10.0, 10.0, 0.5, 0.5, 9, 9).unwrap();
        let mut d = DepthMap::empty(9, 9);
        d.set(d.index(6, 8), 1000.0);
        let s = depth_to_distance(&d, &k).unwrap();
        assert!((s.get(6, 8).unwrap() - 1000.0 * 2f64.sqrt()).abs() < 1e-9);

        let wrong = CameraIntrinsics::new(10.0, 10.0, 0.5, 0.5, 8, 9).unwrap();
        assert!(depth_to_distance(&d, &wrong).is_err());
    }

    #[test]
    fn silhouette_examples() {
        assert_eq!(silhouette(&DepthMap::empty(4, 3)).count(), 0);
        let mut d = DepthMap::empty(4, 3);
        d.set(5, 12.0);
        let s = silhouette(&d);
        assert_eq!(s.count(), 1);
        assert!(s.at(5));
    }
}
