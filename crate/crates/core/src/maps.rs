//! Per-pixel depth and distance images.
//!
//! A pixel is valid iff its value is strictly positive; invalid pixels hold
//! `0.0`.

use std::fmt;
use std::marker::PhantomData;

/// Marker for maps storing the Z coordinate of the surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {}

/// Marker for maps storing the distance from the camera center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {}

pub struct Map<K> {
    width: u32,
    height: u32,
    values: Vec<f64>,
    _kind: PhantomData<K>,
}

pub type DepthMap = Map<Depth>;
pub type DistanceMap = Map<Distance>;

impl<K> Clone for Map<K> {
    fn clone(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
            _kind: PhantomData,
        }
    }
}

impl<K> PartialEq for Map<K> {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.values == other.values
    }
}

impl<K> fmt::Debug for Map<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Map")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("valid", &self.valid_count())
            .finish()
    }
}

impl<K> Map<K> {
    /// All-invalid map.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
            _kind: PhantomData,
        }
    }

    /// Wraps row-major values. Non-positive and non-finite entries become invalid.
    pub fn from_values(width: u32, height: u32, mut values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            width as usize * height as usize,
            "map buffer does not match {width}x{height}"
        );
        for v in &mut values {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Self {
            width,
            height,
            values,
            _kind: PhantomData,
        }
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
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    /// Raw row-major values (`0.0` marks invalid pixels).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        self.at(self.index(u, v))
    }

    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        let x = self.values[i];
        (x > 0.0).then_some(x)
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.values[i] > 0.0
    }

    /// Sets pixel `i`; non-positive values mark it invalid.
    #[inline]
    pub fn set(&mut self, i: usize, value: f64) {
        self.values[i] = if value.is_finite() && value > 0.0 { value } else { 0.0 };
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}
