//! Visibility masks of rendered models against the observed test image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::DistanceMap;

/// Default occlusion tolerance in millimeters.
pub const DEFAULT_DELTA_MM: f64 = 15.0;
/// Minimum visible fraction of a ground-truth instance to be evaluated.
pub const MIN_VISIBLE_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisibilityError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("full silhouette is empty")]
    EmptySilhouette,
    #[error("occlusion tolerance must be finite and >= 0, got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityConfig {
    /// Occlusion tolerance δ in millimeters.
    pub delta: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA_MM,
        }
    }
}

impl VisibilityConfig {
    pub fn new(delta: f64) -> Result<Self, VisibilityError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(VisibilityError::InvalidDelta(delta));
        }
        Ok(Self { delta })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl VisibilityMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &VisibilityMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

fn check_dims(a: (u32, u32), b: (u32, u32)) -> Result<(), VisibilityError> {
    if a != b {
        return Err(VisibilityError::DimensionMismatch { a, b });
    }
    Ok(())
}

#[inline]
fn visible_at(rendered: &DistanceMap, scene: &DistanceMap, i: usize, delta: f64) -> bool {
    match (rendered.at(i), scene.at(i)) {
        (Some(r), Some(s)) => r - s <= delta,
        _ => false,
    }
}

/// Pixels where the model rendered in the ground-truth pose is visible.
///
/// A pixel is visible when both maps are valid there and the rendered
/// surface lies at most `delta` behind the observed one. Missing scene
/// depth means not visible.
pub fn visib_mask_gt(
    rendered: &DistanceMap,
    scene: &DistanceMap,
    cfg: &VisibilityConfig,
) -> Result<VisibilityMask, VisibilityError> {
    check_dims(rendered.dims(), scene.dims())?;
    let bits = (0..rendered.len())
        .map(|i| visible_at(rendered, scene, i, cfg.delta))
        .collect();
    Ok(VisibilityMask::from_bits(rendered.width(), rendered.height(), bits))
}

/// Pixels where the model rendered in the estimated pose is visible.
///
/// Same rule as [`visib_mask_gt`], extended by every pixel where the
/// estimate renders and the ground-truth instance is visible.
pub fn visib_mask_est(
    rendered_est: &DistanceMap,
    scene: &DistanceMap,
    gt_mask: &VisibilityMask,
    cfg: &VisibilityConfig,
) -> Result<VisibilityMask, VisibilityError> {
    check_dims(rendered_est.dims(), scene.dims())?;
    check_dims(rendered_est.dims(), gt_mask.dims())?;
    let bits = (0..rendered_est.len())
        .map(|i| {
            visible_at(rendered_est, scene, i, cfg.delta)
                || (rendered_est.is_valid(i) && gt_mask.at(i))
        })
        .collect();
    Ok(VisibilityMask::from_bits(
        rendered_est.width(),
        rendered_est.height(),
        bits,
    ))
}

/// `|gt_mask| / |full_silhouette|`.
pub fn visible_fraction(
    gt_mask: &VisibilityMask,
    full_silhouette: &VisibilityMask,
) -> Result<f64, VisibilityError> {
    check_dims(gt_mask.dims(), full_silhouette.dims())?;
    let total = full_silhouette.count();
    if total == 0 {
        return Err(VisibilityError::EmptySilhouette);
    }
    Ok(gt_mask.count() as f64 / total as f64)
}
