//! Feature vectors, matrices and the image geometry they are computed from.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A dense, finite, non-empty descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T>(Vec<T>);

impl<T: Real> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature vector"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite component at index {pos}"
            )));
        }
        Ok(Self(values))
    }

    /// Caller guarantees the invariants (non-empty, finite).
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        debug_assert!(!values.is_empty());
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl<T> Deref for FeatureVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Rows of equal-dimension vectors keyed by unique string ids, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    ids: Vec<String>,
    rows: Vec<FeatureVector<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(ids: Vec<String>, rows: Vec<FeatureVector<T>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(first) = rows.first() {
            let dim = first.dim();
            for row in &rows {
                row.check_dim(dim)?;
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains(['\t', '\n', '\r']) {
                return Err(Error::invalid(format!("invalid id {id:?}")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate id `{id}`")));
            }
        }
        Ok(Self { ids, rows, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Shared row dimension, 0 for an empty matrix.
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, FeatureVector::dim)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[FeatureVector<T>] {
        &self.rows
    }

    pub fn get(&self, id: &str) -> Option<&FeatureVector<T>> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureVector<T>)> {
        self.ids.iter().map(String::as_str).zip(&self.rows)
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<FeatureVector<T>>) {
        (self.ids, self.rows)
    }
}

/// Axis-aligned pixel rectangle with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub const fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds {
                region: *self,
                width,
                height,
            })
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Rect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!("expected x,y,w,h, got `{s}`")));
        }
        let mut v = [0u32; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::invalid(format!("bad rect component `{part}`")))?;
        }
        Ok(Rect::new(v[0], v[1], v[2], v[3]))
    }
}

/// Grayscale image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateImage(format!("{width}x{height}")));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} intensities for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("intensity outside [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies out a sub-image.
    pub fn crop(&self, r: Rect) -> Result<PixelGrid> {
        r.check_bounds(self.width, self.height)?;
        Self::from_fn(r.w, r.h, |x, y| self.at(r.x + x, r.y + y))
    }
}

/// Splits a representation id of the form `base#suffix` into its base id.
pub fn base_id(id: &str) -> &str {
    id.split_once('#').map_or(id, |(base, _)| base)
}
