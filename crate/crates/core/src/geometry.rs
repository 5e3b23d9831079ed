//! Rigid-body math, the pinhole camera model and triangle meshes.
//!
//! Lengths are millimeters throughout. Readers convert on load.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-element tolerance on `RᵀR − I` for a rotation to be accepted as-is.
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Rotations within this tolerance are repaired by polar decomposition.
pub const REPAIR_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {max_dev:.3e})")]
    NotOrthonormal { max_dev: f64 },
    #[error("rotation has determinant {det:.6}, expected +1")]
    Reflection { det: f64 },
    #[error("non-finite value in pose")]
    NonFinite,
    #[error("point has non-positive depth z = {z}")]
    NonPositiveDepth { z: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("mesh needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("triangle {tri} references vertex {index} but mesh has {n} vertices")]
    IndexOutOfRange { tri: usize, index: u32, n: usize },
    #[error("triangle {tri} is degenerate (repeated vertex index)")]
    DegenerateTriangle { tri: usize },
    #[error("empty range: {0}")]
    EmptyRange(String),
}

/// Rigid transform from the model frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Outcome of validating a raw rotation/translation pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckedPose {
    pub pose: Pose,
    /// The rotation was slightly off and got re-orthonormalized.
    pub repaired: bool,
}

fn max_orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates the rotation, repairing near-orthonormal input.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::check(rotation, translation).map(|c| c.pose)
    }

    /// Like [`Pose::new`] but reports whether the rotation had to be repaired.
    pub fn check(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<CheckedPose, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(GeometryError::Reflection { det });
        }
        let max_dev = max_orthonormal_deviation(&rotation);
        if max_dev <= ORTHONORMAL_TOL {
            return Ok(CheckedPose {
                pose: Self { rotation, translation },
                repaired: false,
            });
        }
        if max_dev > REPAIR_TOL {
            return Err(GeometryError::NotOrthonormal { max_dev });
        }
        // Polar decomposition: closest rotation is U·Vᵀ.
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let repaired = u * v_t;
        if repaired.determinant() <= 0.0 {
            return Err(GeometryError::Reflection { det });
        }
        Ok(CheckedPose {
            pose: Self {
                rotation: repaired,
                translation,
            },
            repaired: true,
        })
    }

    /// Builds a pose from a row-major rotation and a translation.
    pub fn from_row_major(r: &[f64; 9], t: &[f64; 3]) -> Result<CheckedPose, GeometryError> {
        Self::check(Matrix3::from_row_slice(r), Vector3::new(t[0], t[1], t[2]))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis`, no translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        let rotation = *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix();
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Pinhole intrinsics. Pixel `(u, v)` covers the continuous image point
/// `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point is not finite".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be at least 1x1 (got {}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point to continuous image coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Point2<f64>, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth { z: p.z });
        }
        Ok(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Inverse of [`project`](Self::project) for a point at depth `z`.
    pub fn backproject(&self, uv: &Point2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new(
            (uv.x - self.cx) / self.fx * z,
            (uv.y - self.cy) / self.fy * z,
            z,
        )
    }

    /// Continuous coordinates of the center of pixel `(u, v)`.
    #[inline]
    pub fn pixel_center(u: u32, v: u32) -> Point2<f64> {
        Point2::new(u as f64 + 0.5, v as f64 + 0.5)
    }
}

/// Triangle mesh in the model frame.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    diameter: OnceLock<f64>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles
    }
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        for (tri, t) in triangles.iter().enumerate() {
            if let Some(&index) = t.iter().find(|&&i| i as usize >= n) {
                return Err(GeometryError::IndexOutOfRange { tri, index, n });
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(GeometryError::DegenerateTriangle { tri });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            diameter: OnceLock::new(),
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Uniformly scaled copy, used for unit conversion on load.
    pub fn scaled(&self, factor: f64) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v * factor).collect(),
            triangles: self.triangles.clone(),
            diameter: OnceLock::new(),
        }
    }

    /// Cached [`mesh_diameter`].
    pub fn diameter(&self) -> Result<f64, GeometryError> {
        if let Some(d) = self.diameter.get() {
            return Ok(*d);
        }
        let d = mesh_diameter(&self.vertices)?;
        Ok(*self.diameter.get_or_init(|| d))
    }
}

/// Largest distance between any two vertices.
///
/// Exact. A vertex is only scanned against the rest when the bounding-sphere
/// bound `|x − c| + R` could still beat the best distance found so far.
pub fn mesh_diameter(vertices: &[Vector3<f64>]) -> Result<f64, GeometryError> {
    let n = vertices.len();
    if n < 2 {
        return Err(GeometryError::TooFewVertices(n));
    }
    let (lo, hi) = vertices.iter().fold(
        (vertices[0], vertices[0]),
        |(lo, hi), v| (lo.inf(v), hi.sup(v)),
    );
    let center = (lo + hi) * 0.5;
    let radius = vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0_f64, f64::max);

    // Seed with the pair found from the vertex farthest from the center.
    let mut order: Vec<usize> = (0..n).collect();
    let dist_c: Vec<f64> = vertices.iter().map(|v| (v - center).norm()).collect();
    order.sort_by(|&a, &b| dist_c[b].total_cmp(&dist_c[a]).then(a.cmp(&b)));

    let farthest_from = |i: usize| -> f64 {
        let p = vertices[i];
        vertices
            .iter()
            .map(|q| (p - q).norm_squared())
            .fold(0.0_f64, f64::max)
    };

    let mut best_sq = farthest_from(order[0]);
    const CHUNK: usize = 256;
    for chunk in order.chunks(CHUNK) {
        let bound = dist_c[chunk[0]] + radius;
        if bound * bound <= best_sq {
            break;
        }
        let chunk_best = chunk
            .par_iter()
            .filter(|&&i| {
                let b = dist_c[i] + radius;
                b * b > best_sq
            })
            .map(|&i| farthest_from(i))
            .reduce(|| 0.0, f64::max);
        best_sq = best_sq.max(chunk_best);
    }
    Ok(best_sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn cube(edge: f64) -> Vec<Vector3<f64>> {
        let h = edge / 2.0;
        let mut v = Vec::new();
        for x in [-h, h] {
            for y in [-h, h] {
                for z in [-h, h] {
                    v.push(Vector3::new(x, y, z));
                }
            }
        }
        v
    }

    fn brute_diameter(v: &[Vector3<f64>]) -> f64 {
        let mut best = 0.0_f64;
        for a in v {
            for b in v {
                best = best.max((a - b).norm());
            }
        }
        best
    }

    #[test]
    fn transform_point_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);
        let t = Pose::from_translation(Vector3::new(10.0, 0.0, 0.0));
        assert_eq!(t.transform_point(&p), Vector3::new(11.0, 2.0, 3.0));
        let rz = Pose::from_axis_angle(Vector3::z(), FRAC_PI_2);
        let q = rz.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(q, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn project_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        assert_eq!(
            k.project(&Vector3::new(0.0, 0.0, 1000.0)).unwrap(),
            Point2::new(320.0, 240.0)
        );
        assert_eq!(
            k.project(&Vector3::new(100.0, 0.0, 1000.0)).unwrap(),
            Point2::new(370.0, 240.0)
        );
        assert!(matches!(
            k.project(&Vector3::new(0.0, 0.0, -5.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
        assert!(k.project(&Vector3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(500.0, -1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 1.0, 1.0, 0, 4).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 1.0, 1.0, 1, 1).is_ok());
    }

    #[test]
    fn diameter_examples() {
        let d = mesh_diameter(&cube(2.0)).unwrap();
        assert_abs_diff_eq!(d, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        let two = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 7.0, 0.0)];
        assert_eq!(mesh_diameter(&two).unwrap(), 7.0);
        assert_eq!(
            mesh_diameter(&[Vector3::zeros()]),
            Err(GeometryError::TooFewVertices(1))
        );
    }

    #[test]
    fn diameter_matches_brute_force_on_random_clouds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [50, 51, 700] {
            let v: Vec<_> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-100.0..100.0),
                        rng.gen_range(-30.0..30.0),
                        rng.gen_range(-5.0..50.0),
                    )
                })
                .collect();
            assert_eq!(mesh_diameter(&v).unwrap(), brute_diameter(&v));
        }
    }

    #[test]
    fn mesh_rejects_bad_triangles() {
        let v = cube(1.0);
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 8]]),
            Err(GeometryError::IndexOutOfRange { tri: 0, index: 8, .. })
        ));
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 2], [3, 3, 4]]),
            Err(GeometryError::DegenerateTriangle { tri: 1 })
        ));
        let m = Mesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert_abs_diff_eq!(m.diameter().unwrap(), 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pose_validation() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 5e-5;
        let c = Pose::check(r, Vector3::zeros()).unwrap();
        assert!(c.repaired);
        assert!(max_orthonormal_deviation(c.pose.rotation()) < 1e-12);

        r[(0, 1)] = 1e-2;
        assert!(matches!(
            Pose::check(r, Vector3::zeros()),
            Err(GeometryError::NotOrthonormal { .. })
        ));
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Pose::check(flip, Vector3::zeros()),
            Err(GeometryError::Reflection { .. })
        ));
        let mut nan = Matrix3::identity();
        nan[(2, 2)] = f64::NAN;
        assert_eq!(
            Pose::check(nan, Vector3::zeros()),
            Err(GeometryError::NonFinite)
        );
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.2f64..3.2,
            prop::array::uniform3(-500.0f64..500.0),
        )
            .prop_filter("axis non-zero", |(a, _, _)| {
                Vector3::new(a[0], a[1], a[2]).norm() > 1e-3
            })
            .prop_map(|(a, angle, t)| {
                let r = Pose::from_axis_angle(Vector3::new(a[0], a[1], a[2]), angle);
                Pose::from_translation(Vector3::new(t[0], t[1], t[2])).compose(&r)
            })
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(
            a in arb_pose(), b in arb_pose(),
            x in prop::array::uniform3(-200.0f64..200.0),
        ) {
            let x = Vector3::new(x[0], x[1], x[2]);
            let lhs = a.compose(&b).transform_point(&x);
            let rhs = a.transform_point(&b.transform_point(&x));
            prop_assert!((lhs - rhs).norm() < 1e-6);
        }

        #[test]
        fn pose_times_inverse_is_identity(a in arb_pose()) {
            let id = a.compose(&a.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
            prop_assert!(Pose::check(*a.rotation(), *a.translation()).is_ok());
        }

        #[test]
        fn diameter_invariant_under_rigid_motion(
            a in arb_pose(),
            pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..40),
        ) {
            let v: Vec<_> = pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            let moved: Vec<_> = v.iter().map(|p| a.transform_point(p)).collect();
            let d0 = mesh_diameter(&v).unwrap();
            let d1 = mesh_diameter(&moved).unwrap();
            prop_assert!((d0 - d1).abs() <= 1e-6 * d0.max(1e-9));
        }

        #[test]
        fn project_backproject_roundtrip(
            u in 0.0f64..640.0, v in 0.0f64..480.0, z in 1.0f64..5000.0,
        ) {
            let k = CameraIntrinsics::new(572.4, 573.6, 325.3, 242.0, 640, 480).unwrap();
            let p = k.backproject(&Point2::new(u, v), z);
            let uv = k.project(&p).unwrap();
            prop_assert!((uv.x - u).abs() < 1e-6 && (uv.y - v).abs() < 1e-6);
        }
    }
}
