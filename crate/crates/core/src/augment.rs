//! Augmentation geometry and test-time pooling.
//!
//! Plans only describe geometry (crop, rotation, mirror); pixels are produced
//! at the extractor boundary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::extract::{region_field, ExtractRequest, ExtractorBinding, ImageSource};
use crate::feature::{FeatureMatrix, FeatureVector, Rect};
use crate::preprocess::l2_normalize;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformPlan {
    /// `None` means the full image.
    pub crop: Option<Rect>,
    /// Counterclockwise about the crop center, in `(-180, 180]`.
    pub rotation_degrees: f64,
    pub mirrored: bool,
}

impl TransformPlan {
    pub const IDENTITY: TransformPlan = TransformPlan {
        crop: None,
        rotation_degrees: 0.0,
        mirrored: false,
    };

    pub fn crop(rect: Rect) -> Self {
        Self {
            crop: Some(rect),
            ..Self::IDENTITY
        }
    }

    pub fn rotation(degrees: f64) -> Self {
        Self {
            rotation_degrees: normalize_angle(degrees),
            ..Self::IDENTITY
        }
    }

    pub fn toggle_mirror(self) -> Self {
        Self {
            mirrored: !self.mirrored,
            ..self
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop.is_none() && self.rotation_degrees == 0.0 && !self.mirrored
    }

    pub fn region(&self, width: u32, height: u32) -> Rect {
        self.crop.unwrap_or(Rect::full(width, height))
    }

    /// Protocol region field, `x,y,w,h;rot=<deg>;mir=<0|1>`.
    pub fn protocol_field(&self, width: u32, height: u32) -> String {
        region_field(self.region(width, height), self.rotation_degrees, self.mirrored)
    }

    pub fn request<'a>(&self, key: impl Into<String>, image: &'a ImageSource) -> ExtractRequest<'a> {
        ExtractRequest {
            key: key.into(),
            image,
            region: self.region(image.width, image.height),
            rotation_degrees: self.rotation_degrees,
            mirrored: self.mirrored,
            square_mode: false,
        }
    }
}

/// Maps an angle in degrees into `(-180, 180]`.
pub fn normalize_angle(degrees: f64) -> f64 {
    let mut a = degrees % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Sum,
    Max,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::invalid(format!("unknown pooling `{s}`"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Sum => "sum",
            Pooling::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotation_angles: [f64; 2],
    pub crop_area_fraction: f64,
    pub pooling: Pooling,
    pub bbox_enlarge_factor: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_angles: [20.0, -20.0],
            crop_area_fraction: 4.0 / 9.0,
            pooling: Pooling::Sum,
            bbox_enlarge_factor: 1.5,
        }
    }
}

/// Four corner crops (top-left, top-right, bottom-left, bottom-right) and a centered one,
/// each scaled by `sqrt(fraction)` per axis.
pub fn crop_rects(width: u32, height: u32, fraction: f64) -> Result<[Rect; 5]> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("crop fraction {fraction} outside (0, 1]")));
    }
    let s = fraction.sqrt();
    let w = (s * width as f64).round() as u32;
    let h = (s * height as f64).round() as u32;
    if w == 0 || h == 0 {
        return Err(Error::DegenerateImage(format!(
            "{width}x{height} image gives an empty crop at fraction {fraction}"
        )));
    }
    let (dx, dy) = (width - w, height - h);
    Ok([
        Rect::new(0, 0, w, h),
        Rect::new(dx, 0, w, h),
        Rect::new(0, dy, w, h),
        Rect::new(dx, dy, w, h),
        Rect::new(dx / 2, dy / 2, w, h),
    ])
}

/// The 16 training/test representations: original, five crops and two rotations,
/// followed by the mirrored copies of those eight in the same order.
pub fn augmentation_plans(width: u32, height: u32, cfg: &AugmentConfig) -> Result<Vec<TransformPlan>> {
    let crops = crop_rects(width, height, cfg.crop_area_fraction)?;
    let mut plans = Vec::with_capacity(16);
    plans.push(TransformPlan::IDENTITY);
    plans.extend(crops.iter().map(|&r| TransformPlan::crop(r)));
    plans.extend(cfg.rotation_angles.iter().map(|&a| TransformPlan::rotation(a)));
    let mirrored: Vec<_> = plans.iter().map(|p| p.toggle_mirror()).collect();
    plans.extend(mirrored);
    Ok(plans)
}

/// Positive-set augmentation: the image and its mirror.
pub fn positive_mirror_plans() -> [TransformPlan; 2] {
    [TransformPlan::IDENTITY, TransformPlan::IDENTITY.toggle_mirror()]
}

/// 2x2 tiling in top-left, top-right, bottom-left, bottom-right order.
/// Left and top tiles take the extra pixel on odd sizes.
pub fn quadrants(width: u32, height: u32) -> Result<[Rect; 4]> {
    if width < 2 || height < 2 {
        return Err(Error::DegenerateImage(format!("{width}x{height} cannot be split 2x2")));
    }
    let (lw, th) = (width.div_ceil(2), height.div_ceil(2));
    let (rw, bh) = (width - lw, height - th);
    Ok([
        Rect::new(0, 0, lw, th),
        Rect::new(lw, 0, rw, th),
        Rect::new(0, th, lw, bh),
        Rect::new(lw, th, rw, bh),
    ])
}

/// Negative-set expansion: identity, mirror, four quadrants, four mirrored quadrants.
pub fn negative_expansion_plans(width: u32, height: u32) -> Result<Vec<TransformPlan>> {
    let quads = quadrants(width, height)?;
    let mut plans = Vec::with_capacity(10);
    plans.extend(positive_mirror_plans());
    plans.extend(quads.iter().map(|&q| TransformPlan::crop(q)));
    plans.extend(quads.iter().map(|&q| TransformPlan::crop(q).toggle_mirror()));
    Ok(plans)
}

/// Scales a box about its center, then clips to the image, shifting the center as little as possible.
pub fn enlarge_bbox(rect: Rect, factor: f64, width: u32, height: u32) -> Result<Rect> {
    rect.check_bounds(width, height)?;
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("enlargement factor {factor} must be >= 1")));
    }
    let axis = |start: u32, len: u32, extent: u32| -> (u32, u32) {
        // rounded down so the area never exceeds factor^2 times the input
        let size = ((len as f64 * factor + 1e-9).floor() as u32).clamp(len, extent);
        let center = start as f64 + len as f64 / 2.0;
        let pos = (center - size as f64 / 2.0).round().clamp(0.0, (extent - size) as f64) as u32;
        (pos, size)
    };
    let (x, w) = axis(rect.x, rect.w, width);
    let (y, h) = axis(rect.y, rect.h, height);
    Ok(Rect::new(x, y, w, h))
}

pub fn pool_responses<T: Real>(scores: &[T], mode: Pooling) -> Result<T> {
    let (&first, rest) = scores.split_first().ok_or(Error::EmptyInput("responses to pool"))?;
    Ok(match mode {
        Pooling::Sum => rest.iter().fold(first, |acc, &s| acc + s),
        Pooling::Max => rest.iter().fold(first, |acc, &s| acc.max(s)),
    })
}

#[derive(Debug, Clone)]
pub struct AugmentSource<L> {
    pub image: ImageSource,
    pub label: L,
}

/// Augmented rows in (source, plan) order, keyed `<source id>#<plan index>`.
#[derive(Debug, Clone)]
pub struct AugmentedSet<T, L> {
    pub ids: Vec<String>,
    pub rows: Vec<FeatureVector<T>>,
    pub labels: Vec<L>,
}

impl<T: Real, L> AugmentedSet<T, L> {
    pub fn into_matrix(self) -> Result<(FeatureMatrix<T>, Vec<L>)> {
        Ok((FeatureMatrix::new(self.ids, self.rows)?, self.labels))
    }
}

/// Extracts every plan of every source; each row inherits its source label and is L2-normalized.
pub fn augment_training_set<T: Real, L: Clone>(
    binding: &ExtractorBinding<T>,
    sources: &[AugmentSource<L>],
    plans_for: impl Fn(&ImageSource) -> Result<Vec<TransformPlan>>,
) -> Result<AugmentedSet<T, L>> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut plans_per_source = Vec::with_capacity(sources.len());
    for s in sources {
        let plans = plans_for(&s.image)?;
        for k in 0..plans.len() {
            ids.push(format!("{}#{k}", s.image.id));
            labels.push(s.label.clone());
        }
        plans_per_source.push(plans);
    }
    let requests: Vec<ExtractRequest<'_>> = sources
        .iter()
        .zip(&plans_per_source)
        .flat_map(|(s, plans)| {
            plans
                .iter()
                .enumerate()
                .map(move |(k, p)| p.request(format!("{}#{k}", s.image.id), &s.image))
        })
        .collect();
    let rows = binding
        .extract_batch(&requests)?
        .iter()
        .map(l2_normalize)
        .collect();
    Ok(AugmentedSet { ids, rows, labels })
}
