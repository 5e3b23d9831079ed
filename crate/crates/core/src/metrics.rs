//! Pose-error functions and correctness criteria.

use std::collections::HashMap;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mesh, Pose};
use crate::maps::DistanceMap;
use crate::visibility::VisibilityMask;

pub const DEFAULT_TAU_MM: f64 = 20.0;
pub const DEFAULT_THETA: f64 = 0.3;
/// Correctness bound for ADD/ADI as a fraction of the object diameter.
pub const AD_DIAMETER_FRACTION: f64 = 0.1;
/// Vertex count above which ADI switches from brute force to a spatial grid.
pub const ADI_GRID_THRESHOLD: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("union of visibility masks is empty")]
    EmptyUnion,
    #[error("dimension mismatch between maps and masks")]
    DimensionMismatch,
    #[error("expected a {expected} error, got {got}")]
    KindMismatch { expected: &'static str, got: ErrorKind },
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("invalid VSD config: {0}")]
    InvalidConfig(String),
    #[error("diameter must be positive, got {0}")]
    InvalidDiameter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsdConfig {
    /// Misalignment tolerance τ in millimeters.
    pub tau: f64,
    /// Correctness threshold θ.
    pub theta: f64,
}

impl Default for VsdConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU_MM,
            theta: DEFAULT_THETA,
        }
    }
}

impl VsdConfig {
    pub fn new(tau: f64, theta: f64) -> Result<Self, MetricError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(MetricError::InvalidConfig(format!(
                "tau must be > 0 mm, got {tau}"
            )));
        }
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(MetricError::InvalidConfig(format!(
                "theta must be in (0, 1], got {theta}"
            )));
        }
        Ok(Self { tau, theta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorKind {
    Vsd,
    Add,
    Adi,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Vsd => "VSD",
            ErrorKind::Add => "ADD",
            ErrorKind::Adi => "ADI",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub kind: ErrorKind,
    /// Unitless in `[0, 1]` for VSD, millimeters for ADD/ADI.
    pub value: f64,
}

/// Pixel counts behind one VSD evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VsdCounts {
    /// `|V̂ ∪ V̄|`.
    pub union: usize,
    /// Pixels with zero cost.
    pub matched: usize,
}

impl VsdCounts {
    pub fn error(&self) -> Result<f64, MetricError> {
        if self.union == 0 {
            return Err(MetricError::EmptyUnion);
        }
        Ok((self.union - self.matched) as f64 / self.union as f64)
    }
}

/// Visible surface discrepancy.
///
/// Averages a 0/1 cost over the union of both visibility masks: a pixel
/// costs nothing when it is in both masks and the two distances differ by
/// less than `tau`.
pub fn e_vsd(
    est_dist: &DistanceMap,
    gt_dist: &DistanceMap,
    est_mask: &VisibilityMask,
    gt_mask: &VisibilityMask,
    tau: f64,
) -> Result<PoseError, MetricError> {
    let counts = vsd_counts(est_dist, gt_dist, est_mask, gt_mask, tau)?;
    Ok(PoseError {
        kind: ErrorKind::Vsd,
        value: counts.error()?,
    })
}

pub fn vsd_counts(
    est_dist: &DistanceMap,
    gt_dist: &DistanceMap,
    est_mask: &VisibilityMask,
    gt_mask: &VisibilityMask,
    tau: f64,
) -> Result<VsdCounts, MetricError> {
    let dims = est_dist.dims();
    if gt_dist.dims() != dims || est_mask.dims() != dims || gt_mask.dims() != dims {
        return Err(MetricError::DimensionMismatch);
    }
    let mut union = 0;
    let mut matched = 0;
    for (i, (&e, &g)) in est_mask.bits().iter().zip(gt_mask.bits()).enumerate() {
        if !(e || g) {
            continue;
        }
        union += 1;
        if e && g {
            if let (Some(a), Some(b)) = (est_dist.at(i), gt_dist.at(i)) {
                if (a - b).abs() < tau {
                    matched += 1;
                }
            }
        }
    }
    Ok(VsdCounts { union, matched })
}

/// Distance differences `|Ŝ(p) − S̄(p)|` over the mask intersection, sorted
/// ascending, plus the union size. Lets VSD be re-evaluated for any τ.
#[derive(Debug, Clone, PartialEq)]
pub struct VsdProfile {
    pub union: usize,
    pub diffs: Vec<f64>,
}

impl VsdProfile {
    pub fn new(
        est_dist: &DistanceMap,
        gt_dist: &DistanceMap,
        est_mask: &VisibilityMask,
        gt_mask: &VisibilityMask,
    ) -> Result<Self, MetricError> {
        let dims = est_dist.dims();
        if gt_dist.dims() != dims || est_mask.dims() != dims || gt_mask.dims() != dims {
            return Err(MetricError::DimensionMismatch);
        }
        let mut union = 0;
        let mut diffs = Vec::new();
        for (i, (&e, &g)) in est_mask.bits().iter().zip(gt_mask.bits()).enumerate() {
            if !(e || g) {
                continue;
            }
            union += 1;
            if e && g {
                if let (Some(a), Some(b)) = (est_dist.at(i), gt_dist.at(i)) {
                    diffs.push((a - b).abs());
                }
            }
        }
        diffs.sort_by(f64::total_cmp);
        Ok(Self { union, diffs })
    }

    pub fn counts(&self, tau: f64) -> VsdCounts {
        VsdCounts {
            union: self.union,
            matched: self.diffs.partition_point(|&d| d < tau),
        }
    }

    pub fn error(&self, tau: f64) -> Result<f64, MetricError> {
        self.counts(tau).error()
    }
}

/// Mean distance between corresponding vertices under the two poses.
pub fn e_add(mesh: &Mesh, gt: &Pose, est: &Pose) -> Result<PoseError, MetricError> {
    let v = mesh.vertices();
    if v.is_empty() {
        return Err(MetricError::EmptyMesh);
    }
    let sum: f64 = v
        .iter()
        .map(|x| (gt.transform_point(x) - est.transform_point(x)).norm())
        .sum();
    Ok(PoseError {
        kind: ErrorKind::Add,
        value: sum / v.len() as f64,
    })
}

/// Mean distance from each ground-truth vertex to the closest estimated vertex.
pub fn e_adi(mesh: &Mesh, gt: &Pose, est: &Pose) -> Result<PoseError, MetricError> {
    let v = mesh.vertices();
    if v.is_empty() {
        return Err(MetricError::EmptyMesh);
    }
    let gt_pts: Vec<_> = v.iter().map(|x| gt.transform_point(x)).collect();
    let est_pts: Vec<_> = v.iter().map(|x| est.transform_point(x)).collect();
    let sum: f64 = if v.len() > ADI_GRID_THRESHOLD {
        let grid = PointGrid::new(&est_pts);
        gt_pts.iter().map(|p| grid.nearest_distance(p)).sum()
    } else {
        gt_pts
            .iter()
            .map(|p| brute_nearest_distance(&est_pts, p))
            .sum()
    };
    Ok(PoseError {
        kind: ErrorKind::Adi,
        value: sum / v.len() as f64,
    })
}

fn brute_nearest_distance(points: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
    points
        .iter()
        .map(|p| (p - q).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Uniform hash grid for exact nearest-neighbor distance queries.
struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    origin: Vector3<f64>,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vector3<f64>]) -> Self {
        let (lo, hi) = points
            .iter()
            .fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let extent = hi - lo;
        // Roughly two points per cell whether the set fills a volume, lies on
        // a surface or along a curve; the largest estimate wins.
        let n = points.len() as f64;
        let by_volume = (2.0 * extent.x * extent.y * extent.z / n).cbrt();
        let area = 2.0 * (extent.x * extent.y + extent.y * extent.z + extent.z * extent.x);
        let by_area = (2.0 * area / n).sqrt();
        let by_length = 2.0 * extent.max() / n;
        let cell = by_volume.max(by_area).max(by_length).max(1e-9);
        let dims = [0, 1, 2].map(|a| (extent[a] / cell).floor() as i64 + 1);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
            cells.entry(key).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            origin: lo,
            dims,
            cells,
        }
    }

    fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        let rel = q - self.origin;
        let c = [0, 1, 2].map(|a| (rel[a] / self.cell).floor() as i64);
        // Chebyshev ring distance from the query cell to the nearest and
        // farthest grid cells.
        let gap = |a: usize| (-c[a]).max(c[a] - (self.dims[a] - 1)).max(0);
        let reach = |a: usize| c[a].abs().max((c[a] - (self.dims[a] - 1)).abs());
        let first = (0..3).map(gap).max().unwrap_or(0);
        let last = (0..3).map(reach).max().unwrap_or(0);

        let mut best_sq = f64::INFINITY;
        for ring in first..=last {
            // Any point in ring r is at least (r − 1)·cell away from q.
            let lower = (ring - 1).max(0) as f64 * self.cell;
            if lower * lower > best_sq {
                break;
            }
            let lo = |a: usize| (c[a] - ring).max(0);
            let hi = |a: usize| (c[a] + ring).min(self.dims[a] - 1);
            for x in lo(0)..=hi(0) {
                for y in lo(1)..=hi(1) {
                    let on_shell = (x - c[0]).abs() == ring || (y - c[1]).abs() == ring;
                    let mut scan = |z: i64| {
                        if let Some(ids) = self.cells.get(&[x, y, z]) {
                            for &i in ids {
                                let d = (self.points[i as usize] - q).norm_squared();
                                if d < best_sq {
                                    best_sq = d;
                                }
                            }
                        }
                    };
                    if on_shell {
                        (lo(2)..=hi(2)).for_each(&mut scan);
                    } else {
                        for z in [c[2] - ring, c[2] + ring] {
                            if (0..self.dims[2]).contains(&z) {
                                scan(z);
                            }
                        }
                    }
                }
            }
        }
        best_sq.sqrt()
    }
}

/// `e_VSD < θ`.
pub fn correct_vsd(err: &PoseError, theta: f64) -> Result<bool, MetricError> {
    if err.kind != ErrorKind::Vsd {
        return Err(MetricError::KindMismatch {
            expected: "VSD",
            got: err.kind,
        });
    }
    Ok(err.value < theta)
}

/// `e ≤ 0.1 · diameter` for ADD or ADI.
pub fn correct_ad(err: &PoseError, diameter: f64) -> Result<bool, MetricError> {
    if err.kind == ErrorKind::Vsd {
        return Err(MetricError::KindMismatch {
            expected: "ADD or ADI",
            got: err.kind,
        });
    }
    if !(diameter.is_finite() && diameter > 0.0) {
        return Err(MetricError::InvalidDiameter(diameter));
    }
    Ok(err.value <= AD_DIAMETER_FRACTION * diameter)
}

/// Point set of `n` samples drawn uniformly over the mesh surface, for
/// ADD/ADI on meshes with very uneven vertex density. The result has no
/// triangles. Deterministic for a given `seed`.
pub fn resample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Mesh, MetricError> {
    use rand::{Rng, SeedableRng};
    let v = mesh.vertices();
    let areas: Vec<f64> = mesh
        .triangles()
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| v[i as usize]);
            (b - a).cross(&(c - a)).norm() / 2.0
        })
        .collect();
    let total: f64 = areas.iter().sum();
    if n == 0 || !(total > 0.0) {
        return Err(MetricError::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..total);
            let i = cumulative.partition_point(|&c| c <= x).min(areas.len() - 1);
            let [a, b, c] = mesh.triangles()[i].map(|j| v[j as usize]);
            let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
            if r1 + r2 > 1.0 {
                (r1, r2) = (1.0 - r1, 1.0 - r2);
            }
            a + (b - a) * r1 + (c - a) * r2
        })
        .collect();
    Ok(Mesh::new(points, Vec::new()).expect("no triangles to validate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Map;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn resampled_points_lie_on_the_surface() {
        let m = crate::fixturegen::shapes::cuboid(10.0, 20.0, 40.0);
        let s = resample_surface(&m, 5000, 1).unwrap();
        assert_eq!(s.vertices().len(), 5000);
        assert!(s.triangles().is_empty());
        let on_face = |p: &Vector3<f64>| {
            [(p.x, 5.0), (p.y, 10.0), (p.z, 20.0)].iter().any(|(c, h)| (c.abs() - h).abs() < 1e-9)
                && p.x.abs() <= 5.0 + 1e-9
                && p.y.abs() <= 10.0 + 1e-9
                && p.z.abs() <= 20.0 + 1e-9
        };
        assert!(s.vertices().iter().all(on_face));
        // Area-proportional: the two 20×40 faces hold 1600 of 2800 mm².
        let share = s.vertices().iter().filter(|p| (p.x.abs() - 5.0).abs() < 1e-9).count() as f64 / 5000.0;
        assert!((share - 1600.0 / 2800.0).abs() < 0.03, "{share}");
        assert_eq!(resample_surface(&m, 5000, 1).unwrap(), s);
    }

    fn cube_mesh() -> Mesh {
        let mut v = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    v.push(Vector3::new(x, y, z));
                }
            }
        }
        Mesh::new(v, vec![[0, 1, 2]]).unwrap()
    }

    fn vsd(v: f64) -> PoseError {
        PoseError { kind: ErrorKind::Vsd, value: v }
    }

    fn ad(kind: ErrorKind, v: f64) -> PoseError {
        PoseError { kind, value: v }
    }

    #[test]
    fn vsd_identical_and_disjoint() {
        let d = Map::from_values(2, 2, vec![500.0, 510.0, 0.0, 0.0]);
        let m = VisibilityMask::from_bits(2, 2, vec![true, true, false, false]);
        assert_eq!(e_vsd(&d, &d, &m, &m, 20.0).unwrap().value, 0.0);

        let e = Map::from_values(2, 2, vec![0.0, 0.0, 500.0, 510.0]);
        let me = VisibilityMask::from_bits(2, 2, vec![false, false, true, true]);
        assert_eq!(e_vsd(&e, &d, &me, &m, 20.0).unwrap().value, 1.0);

        let empty = VisibilityMask::empty(2, 2);
        assert_eq!(
            e_vsd(&d, &d, &empty, &empty, 20.0),
            Err(MetricError::EmptyUnion)
        );
        assert_eq!(
            e_vsd(&d, &d, &VisibilityMask::empty(1, 4), &m, 20.0),
            Err(MetricError::DimensionMismatch)
        );
    }

    #[test]
    fn vsd_tau_is_strict() {
        let a = Map::from_values(1, 1, vec![500.0]);
        let b = Map::from_values(1, 1, vec![520.0]);
        let m = VisibilityMask::from_bits(1, 1, vec![true]);
        assert_eq!(e_vsd(&a, &b, &m, &m, 20.0).unwrap().value, 1.0);
        assert_eq!(e_vsd(&a, &b, &m, &m, 20.000001).unwrap().value, 0.0);
    }

    #[test]
    fn add_examples() {
        let m = cube_mesh();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 500.0));
        assert_eq!(e_add(&m, &gt, &gt).unwrap().value, 0.0);
        let est = gt.compose(&Pose::from_translation(Vector3::new(3.0, 4.0, 0.0)));
        assert_eq!(e_add(&m, &gt, &est).unwrap().value, 5.0);

        let est = gt.compose(&Pose::from_axis_angle(Vector3::z(), FRAC_PI_2));
        let brute: f64 = m
            .vertices()
            .iter()
            .map(|x| {
                let a = gt.rotation() * x + gt.translation();
                let b = est.rotation() * x + est.translation();
                ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 8.0;
        let add = e_add(&m, &gt, &est).unwrap().value;
        assert!((add - brute).abs() < 1e-12);
        // Every vertex moves by √2 · √2 = 2 on a 90° turn about Z.
        assert!((add - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adi_examples() {
        let m = cube_mesh();
        let gt = Pose::from_translation(Vector3::new(10.0, 0.0, 500.0));
        assert_eq!(e_adi(&m, &gt, &gt).unwrap().value, 0.0);
        let est = gt.compose(&Pose::from_axis_angle(Vector3::x(), FRAC_PI_2));
        assert!(e_adi(&m, &gt, &est).unwrap().value < 1e-12);
        assert!(e_add(&m, &gt, &est).unwrap().value > 1.0);
    }

    fn sphere_points(n: usize) -> Vec<Vector3<f64>> {
        // Fibonacci sphere, radius 50.
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let a = golden * i as f64;
                Vector3::new(r * a.cos(), y, r * a.sin()) * 50.0
            })
            .collect()
    }

    #[test]
    fn adi_on_sphere_bounded_by_vertex_spacing() {
        let pts = sphere_points(1000);
        let m = Mesh::new(pts.clone(), vec![]).unwrap();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 800.0));
        let est = gt.compose(&Pose::from_axis_angle(Vector3::new(0.3, -1.0, 0.4), 1.234));
        let max_spacing = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                pts.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let adi = e_adi(&m, &gt, &est).unwrap().value;
        assert!(adi <= max_spacing, "{adi} > {max_spacing}");
        assert!(adi > 0.0);
    }

    #[test]
    fn adi_grid_agrees_with_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for (n, spread) in [(2500, [60.0, 40.0, 10.0]), (4000, [100.0, 100.0, 0.0])] {
            let pts: Vec<_> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..=1.0) * spread[0],
                        rng.gen_range(-1.0..=1.0) * spread[1],
                        rng.gen_range(-1.0..=1.0) * spread[2],
                    )
                })
                .collect();
            let m = Mesh::new(pts.clone(), vec![]).unwrap();
            let gt = Pose::from_translation(Vector3::new(5.0, -3.0, 700.0));
            let est = Pose::from_translation(Vector3::new(7.0, 1.0, 690.0))
                .compose(&Pose::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 0.4));
            let grid = e_adi(&m, &gt, &est).unwrap().value;
            let gt_pts: Vec<_> = pts.iter().map(|x| gt.transform_point(x)).collect();
            let est_pts: Vec<_> = pts.iter().map(|x| est.transform_point(x)).collect();
            let brute = gt_pts
                .iter()
                .map(|p| brute_nearest_distance(&est_pts, p))
                .sum::<f64>()
                / n as f64;
            assert!((grid - brute).abs() < 1e-9, "{grid} vs {brute}");
        }
    }

    #[test]
    fn adi_grid_handles_far_queries() {
        let pts: Vec<_> = (0..3000)
            .map(|i| Vector3::new((i % 50) as f64, (i / 50) as f64, 0.0))
            .collect();
        let grid = PointGrid::new(&pts);
        for q in [
            Vector3::new(500.0, -400.0, 300.0),
            Vector3::new(-1e4, 25.0, 0.0),
            Vector3::new(24.3, 30.7, 0.2),
        ] {
            assert!((grid.nearest_distance(&q) - brute_nearest_distance(&pts, &q)).abs() < 1e-9);
        }
    }

    #[test]
    fn criteria() {
        assert!(correct_vsd(&vsd(0.0), 0.3).unwrap());
        assert!(!correct_vsd(&vsd(0.3), 0.3).unwrap());
        assert!(correct_vsd(&vsd(0.04), 0.3).unwrap());
        assert!(matches!(
            correct_vsd(&ad(ErrorKind::Add, 0.0), 0.3),
            Err(MetricError::KindMismatch { .. })
        ));

        assert!(correct_ad(&ad(ErrorKind::Add, 10.0), 100.0).unwrap());
        assert!(!correct_ad(&ad(ErrorKind::Add, 10.001), 100.0).unwrap());
        assert!(matches!(
            correct_ad(&vsd(0.1), 100.0),
            Err(MetricError::KindMismatch { .. })
        ));
        assert!(correct_ad(&ad(ErrorKind::Adi, 1.0), 0.0).is_err());

        // ADI of 4.8 mm passes a 21.7 mm bound while a VSD of 0.44 fails θ = 0.3.
        assert!(correct_ad(&ad(ErrorKind::Adi, 4.8), 217.0).unwrap());
        assert!(!correct_vsd(&vsd(0.44), 0.3).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(VsdConfig::new(20.0, 0.3).is_ok());
        assert!(VsdConfig::new(20.0, 1.0).is_ok());
        assert!(VsdConfig::new(0.0, 0.3).is_err());
        assert!(VsdConfig::new(20.0, 0.0).is_err());
        assert!(VsdConfig::new(20.0, 1.01).is_err());
        assert!(VsdConfig::new(20.0, f64::NAN).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-1.0f64..1.0), -3.0f64..3.0, prop::array::uniform3(-50.0f64..50.0))
            .prop_filter("axis", |(a, _, _)| a.iter().map(|x| x * x).sum::<f64>() > 1e-4)
            .prop_map(|(a, ang, t)| {
                Pose::from_translation(Vector3::new(t[0], t[1], t[2] + 600.0))
                    .compose(&Pose::from_axis_angle(Vector3::new(a[0], a[1], a[2]), ang))
            })
    }

    fn arb_maps() -> impl Strategy<Value = (DistanceMap, DistanceMap, VisibilityMask, VisibilityMask)> {
        let n = 25;
        (
            prop::collection::vec(prop_oneof![Just(0.0), 500.0f64..560.0], n),
            prop::collection::vec(prop_oneof![Just(0.0), 500.0f64..560.0], n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(a, b, ma, mb)| {
                let a = Map::from_values(5, 5, a);
                let b = Map::from_values(5, 5, b);
                let ma = VisibilityMask::from_bits(5, 5, ma.iter().enumerate().map(|(i, &x)| x && a.is_valid(i)).collect());
                let mb = VisibilityMask::from_bits(5, 5, mb.iter().enumerate().map(|(i, &x)| x && b.is_valid(i)).collect());
                (a, b, ma, mb)
            })
            .prop_filter("non-empty union", |(_, _, ma, mb)| ma.count() + mb.count() > 0)
    }

    proptest! {
        #[test]
        fn adi_never_exceeds_add(
            a in arb_pose(), b in arb_pose(),
            pts in prop::collection::vec(prop::array::uniform3(-40.0f64..40.0), 1..60),
        ) {
            let m = Mesh::new(pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(), vec![]).unwrap();
            let add = e_add(&m, &a, &b).unwrap().value;
            let adi = e_adi(&m, &a, &b).unwrap().value;
            prop_assert!(adi <= add + 1e-12);
        }

        #[test]
        fn vsd_symmetric_monotone_and_profile_consistent(
            (a, b, ma, mb) in arb_maps(), tau in 1.0f64..40.0, extra in 0.0f64..40.0,
        ) {
            let ab = e_vsd(&a, &b, &ma, &mb, tau).unwrap().value;
            let ba = e_vsd(&b, &a, &mb, &ma, tau).unwrap().value;
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            let looser = e_vsd(&a, &b, &ma, &mb, tau + extra).unwrap().value;
            prop_assert!(looser <= ab);
            let profile = VsdProfile::new(&a, &b, &ma, &mb).unwrap();
            prop_assert_eq!(profile.error(tau).unwrap(), ab);
        }
    }
}
