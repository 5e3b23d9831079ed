//! Camera viewpoints sampled on a sphere around the object.
//!
//! Candidates come from a recursively subdivided icosahedron (one vertex at
//! the north pole), are filtered by azimuth/elevation, then greedily thinned
//! in (elevation, azimuth) order so kept views are at least the requested
//! angle apart. Camera roll is zero: the image "up" direction is the world
//! Z axis projected into the image plane.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{GeometryError, Pose};

const MAX_LEVEL: u32 = 6;
const ANGLE_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSphereSpec {
    pub radius: f64,
    /// Inclusive azimuth range in degrees, measured from +X towards +Y.
    pub azimuth_range: (f64, f64),
    /// Inclusive elevation range in degrees, +90 is the north pole.
    pub elevation_range: (f64, f64),
    pub min_angular_step: f64,
}

/// A sampled camera: `pose` maps world (object) coordinates to the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSample {
    pub pose: Pose,
    pub direction: Vector3<f64>,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

fn icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    // Pole-aligned icosahedron: two poles and two staggered rings of five.
    let ring_z = 1.0 / 5f64.sqrt();
    let ring_r = 2.0 / 5f64.sqrt();
    let mut v = vec![Vector3::new(0.0, 0.0, 1.0)];
    for k in 0..5 {
        let a = (k as f64) * 72f64.to_radians();
        v.push(Vector3::new(ring_r * a.cos(), ring_r * a.sin(), ring_z));
    }
    for k in 0..5 {
        let a = (k as f64 * 72.0 + 36.0).to_radians();
        v.push(Vector3::new(ring_r * a.cos(), ring_r * a.sin(), -ring_z));
    }
    v.push(Vector3::new(0.0, 0.0, -1.0));

    let mut f = Vec::new();
    for k in 0..5 {
        let (u0, u1) = (1 + k, 1 + (k + 1) % 5);
        let (l0, l1) = (6 + k, 6 + (k + 1) % 5);
        f.push([0, u0, u1]);
        f.push([u0, l0, u1]);
        f.push([u1, l0, l1]);
        f.push([11, l1, l0]);
    }
    (v, f)
}

fn subdivide(v: &mut Vec<Vector3<f64>>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            v.push((v[a] + v[b]).normalize());
            v.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = midpoint(a, b, v);
        let bc = midpoint(b, c, v);
        let ca = midpoint(c, a, v);
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    out
}

fn max_edge_angle_deg(v: &[Vector3<f64>], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .map(|(a, b)| angle_deg(&v[a], &v[b]))
        .fold(0.0, f64::max)
}

fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate for nearly parallel and antipodal vectors.
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

fn in_range(value: f64, (lo, hi): (f64, f64)) -> bool {
    value >= lo - ANGLE_EPS_DEG && value <= hi + ANGLE_EPS_DEG
}

fn azimuth_in_range(az: f64, range: (f64, f64)) -> bool {
    [az, az - 360.0, az + 360.0].iter().any(|&a| in_range(a, range))
}

fn spherical(d: &Vector3<f64>) -> (f64, f64) {
    let elevation = d.z.clamp(-1.0, 1.0).asin().to_degrees();
    let mut azimuth = d.y.atan2(d.x).to_degrees();
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    (azimuth, elevation)
}

/// World-to-camera pose of a camera at `eye` looking at the origin.
pub fn look_at_origin(eye: &Vector3<f64>) -> Pose {
    let forward = (-eye).normalize();
    let mut up = Vector3::z();
    if forward.cross(&up).norm() < 1e-9 {
        up = Vector3::y();
    }
    let x = forward.cross(&up).normalize();
    let y = forward.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), forward.transpose()]);
    Pose::new(rotation, -(rotation * eye)).expect("look-at basis is orthonormal")
}

/// Samples camera poses on a sphere of `radius` around the origin.
pub fn sample_view_sphere(spec: &ViewSphereSpec) -> Result<Vec<ViewSample>, GeometryError> {
    let ViewSphereSpec {
        radius,
        azimuth_range,
        elevation_range,
        min_angular_step: step,
    } = *spec;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(GeometryError::EmptyRange(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(GeometryError::EmptyRange(format!(
            "angular step must be positive, got {step}"
        )));
    }
    for (name, (lo, hi)) in [("azimuth", azimuth_range), ("elevation", elevation_range)] {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(GeometryError::EmptyRange(format!("{name} range [{lo}, {hi}]")));
        }
    }
    if elevation_range.0 > 90.0 + ANGLE_EPS_DEG || elevation_range.1 < -90.0 - ANGLE_EPS_DEG {
        return Err(GeometryError::EmptyRange(format!(
            "elevation range [{}, {}] misses [-90, 90]",
            elevation_range.0, elevation_range.1
        )));
    }

    let (mut verts, mut faces) = icosahedron();
    let mut level = 0;
    while level < MAX_LEVEL && max_edge_angle_deg(&verts, &faces) > step / 2.0 {
        faces = subdivide(&mut verts, &faces);
        level += 1;
    }

    let mut candidates: Vec<(f64, f64, Vector3<f64>)> = verts
        .iter()
        .filter_map(|d| {
            let (az, el) = spherical(d);
            let at_pole = el.abs() > 90.0 - ANGLE_EPS_DEG;
            let keep = in_range(el, elevation_range)
                && (at_pole || azimuth_in_range(az, azimuth_range));
            keep.then_some((el, az, *d))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut kept: Vec<(f64, f64, Vector3<f64>)> = Vec::new();
    let mut grid = NeighborGrid::new(step);
    for c in candidates {
        if grid.any_within(&c.2, step) {
            continue;
        }
        grid.insert(c.2);
        kept.push(c);
    }
    if kept.is_empty() {
        return Err(GeometryError::EmptyRange(
            "no viewpoint falls inside the azimuth/elevation ranges".into(),
        ));
    }

    Ok(kept
        .into_iter()
        .map(|(el, az, d)| ViewSample {
            pose: look_at_origin(&(d * radius)),
            direction: d,
            azimuth_deg: az,
            elevation_deg: el,
        })
        .collect())
}

/// Unit-sphere points bucketed on a cubic grid sized to the chord of `step`.
struct NeighborGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<Vector3<f64>>>,
}

impl NeighborGrid {
    fn new(step_deg: f64) -> Self {
        let chord = 2.0 * (step_deg.min(180.0).to_radians() / 2.0).sin();
        Self {
            cell: chord.max(1e-6),
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &Vector3<f64>) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, p: Vector3<f64>) {
        self.cells.entry(self.key(&p)).or_default().push(p);
    }

    /// True when some stored point is strictly closer than `step_deg`.
    fn any_within(&self, p: &Vector3<f64>, step_deg: f64) -> bool {
        let limit = step_deg - ANGLE_EPS_DEG;
        let (kx, ky, kz) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(pts) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        if pts.iter().any(|q| angle_deg(p, q) < limit) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(step: f64) -> ViewSphereSpec {
        ViewSphereSpec {
            radius: 400.0,
            azimuth_range: (0.0, 360.0),
            elevation_range: (-90.0, 90.0),
            min_angular_step: step,
        }
    }

    fn nn_angles(views: &[ViewSample]) -> Vec<f64> {
        views
            .iter()
            .enumerate()
            .map(|(i, a)| {
                views
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| angle_deg(&a.direction, &b.direction))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn icosahedron_is_regular() {
        let (v, f) = icosahedron();
        assert_eq!(v.len(), 12);
        assert_eq!(f.len(), 20);
        for &[a, b, c] in &f {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                assert!((angle_deg(&v[p], &v[q]) - 63.434948822922).abs() < 1e-6);
            }
            // Outward winding.
            let n = (v[b] - v[a]).cross(&(v[c] - v[a]));
            assert!(n.dot(&(v[a] + v[b] + v[c])) > 0.0);
        }
    }

    #[test]
    fn coarse_step_gives_at_least_two_views_at_radius() {
        let views = sample_view_sphere(&full(180.0)).unwrap();
        assert!(views.len() >= 2);
        for v in &views {
            assert!((v.pose.inverse().translation().norm() - 400.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_elevation_gives_top_down_view() {
        let spec = ViewSphereSpec {
            elevation_range: (90.0, 90.0),
            ..full(15.0)
        };
        let views = sample_view_sphere(&spec).unwrap();
        assert_eq!(views.len(), 1);
        let pose = views[0].pose;
        let eye = pose.inverse().translation().clone_owned();
        assert!((eye - Vector3::new(0.0, 0.0, 400.0)).norm() < 1e-9);
        // The origin lands on the optical axis.
        let o = pose.transform_point(&Vector3::zeros());
        assert!(o.x.abs() < 1e-9 && o.y.abs() < 1e-9 && (o.z - 400.0).abs() < 1e-9);
    }

    #[test]
    fn full_sphere_nearest_neighbor_gaps() {
        let step = 10.0;
        let views = sample_view_sphere(&full(step)).unwrap();
        assert!(views.len() > 100);
        for gap in nn_angles(&views) {
            assert!(gap <= 2.0 * step, "gap {gap}");
            assert!(gap >= step - 1e-6, "gap {gap}");
        }
        for v in &views {
            assert!((v.pose.inverse().translation().norm() - 400.0).abs() < 1e-6);
            let o = v.pose.transform_point(&Vector3::zeros());
            assert!(o.x.abs() < 1e-9 && o.y.abs() < 1e-9);
        }
    }

    #[test]
    fn ordering_and_ranges() {
        let spec = ViewSphereSpec {
            azimuth_range: (-45.0, 45.0),
            elevation_range: (0.0, 60.0),
            ..full(12.0)
        };
        let views = sample_view_sphere(&spec).unwrap();
        assert!(!views.is_empty());
        for w in views.windows(2) {
            let a = (w[0].elevation_deg, w[0].azimuth_deg);
            let b = (w[1].elevation_deg, w[1].azimuth_deg);
            assert!(a <= b);
        }
        for v in &views {
            assert!(v.elevation_deg >= -1e-9 && v.elevation_deg <= 60.0 + 1e-9);
            assert!(v.azimuth_deg <= 45.0 + 1e-9 || v.azimuth_deg >= 315.0 - 1e-9);
        }
        assert_eq!(views, sample_view_sphere(&spec).unwrap());
    }

    #[test]
    fn camera_roll_is_zero() {
        let spec = ViewSphereSpec {
            elevation_range: (20.0, 40.0),
            ..full(15.0)
        };
        for v in sample_view_sphere(&spec).unwrap() {
            // Camera x axis stays horizontal; image-down has negative world Z.
            let r = v.pose.rotation();
            assert!(r[(0, 2)].abs() < 1e-12);
            assert!(r[(1, 2)] < 0.0);
        }
    }

    #[test]
    fn invalid_inputs() {
        let bad = [
            ViewSphereSpec { radius: 0.0, ..full(10.0) },
            ViewSphereSpec { min_angular_step: 0.0, ..full(10.0) },
            ViewSphereSpec { azimuth_range: (10.0, 5.0), ..full(10.0) },
            ViewSphereSpec { elevation_range: (91.0, 95.0), ..full(10.0) },
        ];
        for spec in bad {
            assert!(matches!(
                sample_view_sphere(&spec),
                Err(GeometryError::EmptyRange(_))
            ));
        }
    }
}
