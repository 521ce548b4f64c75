//! The extractor boundary: where regions of images become feature vectors.
//!
//! Three bindings are provided. `FileBacked` looks vectors up by representation
//! id in a precomputed matrix, `ToyPixel` mean-pools a `g x g` grid over a
//! grayscale image, and `ExternalProcess` speaks a line protocol with a child
//! process over stdin/stdout.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{base_id, FeatureMatrix, FeatureVector, PixelGrid, Rect};
use crate::scalar::Real;

/// An image as seen by an extractor: an id, its size, and whatever backing it has.
#[derive(Debug, Clone)]
pub struct ImageSource {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub path: Option<PathBuf>,
    pub pixels: Option<Arc<PixelGrid>>,
}

impl ImageSource {
    pub fn from_pixels(id: impl Into<String>, pixels: PixelGrid) -> Self {
        Self {
            id: id.into(),
            width: pixels.width(),
            height: pixels.height(),
            path: None,
            pixels: Some(Arc::new(pixels)),
        }
    }

    pub fn from_path(id: impl Into<String>, path: impl Into<PathBuf>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            path: Some(path.into()),
            pixels: None,
        }
    }

    /// Geometry only; for bindings that resolve vectors by key.
    pub fn keyed(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            path: None,
            pixels: None,
        }
    }
}

/// One region of one image to describe.
#[derive(Debug, Clone)]
pub struct ExtractRequest<'a> {
    /// Representation id; the lookup key for `FileBacked` and the protocol id for `ExternalProcess`.
    pub key: String,
    pub image: &'a ImageSource,
    pub region: Rect,
    pub rotation_degrees: f64,
    pub mirrored: bool,
    pub square_mode: bool,
}

impl<'a> ExtractRequest<'a> {
    pub fn region(key: impl Into<String>, image: &'a ImageSource, region: Rect) -> Self {
        Self {
            key: key.into(),
            image,
            region,
            rotation_degrees: 0.0,
            mirrored: false,
            square_mode: false,
        }
    }

    pub fn whole(key: impl Into<String>, image: &'a ImageSource) -> Self {
        Self::region(key, image, Rect::full(image.width, image.height))
    }

    /// Region after bounds checking and optional squaring.
    pub fn effective_region(&self) -> Result<Rect> {
        self.region.check_bounds(self.image.width, self.image.height)?;
        Ok(if self.square_mode {
            smallest_square(self.region, self.image.width, self.image.height)
        } else {
            self.region
        })
    }
}

#[derive(Debug, Clone)]
pub enum ExtractorBinding<T> {
    FileBacked(FeatureMatrix<T>),
    ToyPixel { grid: u32 },
    ExternalProcess { command: String },
}

impl<T: Real> ExtractorBinding<T> {
    pub fn toy(grid: u32) -> Result<Self> {
        if grid == 0 {
            return Err(Error::invalid("toy extractor grid must be >= 1"));
        }
        Ok(Self::ToyPixel { grid })
    }

    pub fn file_backed(matrix: FeatureMatrix<T>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::EmptyInput("file-backed extractor needs features"));
        }
        Ok(Self::FileBacked(matrix))
    }

    pub fn extract(&self, request: &ExtractRequest<'_>) -> Result<FeatureVector<T>> {
        let mut out = self.extract_batch(std::slice::from_ref(request))?;
        Ok(out.pop().expect("one reply per request"))
    }

    /// Extracts every request, returning vectors in request order.
    pub fn extract_batch(&self, requests: &[ExtractRequest<'_>]) -> Result<Vec<FeatureVector<T>>> {
        let regions = requests
            .iter()
            .map(ExtractRequest::effective_region)
            .collect::<Result<Vec<_>>>()?;
        match self {
            Self::FileBacked(matrix) => requests
                .iter()
                .map(|r| {
                    matrix
                        .get(&r.key)
                        .or_else(|| matrix.get(base_id(&r.key)))
                        .cloned()
                        .ok_or_else(|| Error::UnknownId(r.key.clone()))
                })
                .collect(),
            Self::ToyPixel { grid } => requests
                .par_iter()
                .zip(regions.par_iter())
                .map(|(r, &region)| {
                    let pixels = r.image.pixels.as_deref().ok_or_else(|| {
                        Error::ExtractorFailure(format!("image `{}` has no pixel data", r.image.id))
                    })?;
                    toy_features(pixels, region, r.rotation_degrees, r.mirrored, *grid)
                })
                .collect(),
            Self::ExternalProcess { command } => {
                let protocol = requests
                    .iter()
                    .zip(&regions)
                    .map(|(r, &region)| {
                        let path = r.image.path.clone().ok_or_else(|| {
                            Error::ExtractorFailure(format!("image `{}` has no path", r.image.id))
                        })?;
                        Ok(ProtocolRequest {
                            id: r.key.clone(),
                            image_path: path,
                            region: region_field(region, r.rotation_degrees, r.mirrored),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(external_protocol_roundtrip::<T>(command, &protocol)?
                    .into_parts()
                    .1)
            }
        }
    }
}

/// Smallest square containing `region`, shifted to stay inside the image.
///
/// A side that exceeds the image extent on one axis is clipped to that extent,
/// so the result is only non-square when the image is too small for the square.
pub fn smallest_square(region: Rect, width: u32, height: u32) -> Rect {
    let side = region.w.max(region.h);
    let place = |start: u32, len: u32, extent: u32| -> (u32, u32) {
        let size = side.min(extent);
        let ideal = start as i64 - (size as i64 - len as i64) / 2;
        let pos = ideal.clamp(0, (extent - size) as i64) as u32;
        (pos, size)
    };
    let (x, w) = place(region.x, region.w, width);
    let (y, h) = place(region.y, region.h, height);
    Rect::new(x, y, w, h)
}

/// Protocol region field: `x,y,w,h`, with `;rot=<deg>;mir=<0|1>` when the plan is not the identity.
pub fn region_field(region: Rect, rotation_degrees: f64, mirrored: bool) -> String {
    if rotation_degrees == 0.0 && !mirrored {
        region.to_string()
    } else {
        format!("{region};rot={rotation_degrees};mir={}", u8::from(mirrored))
    }
}

/// Mean intensity over each cell of a `grid x grid` tiling of the (rotated, mirrored) region.
fn toy_features<T: Real>(
    image: &PixelGrid,
    region: Rect,
    rotation_degrees: f64,
    mirrored: bool,
    grid: u32,
) -> Result<FeatureVector<T>> {
    region.check_bounds(image.width(), image.height())?;
    let (w, h) = (region.w, region.h);
    let (sin, cos) = rotation_degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    // nearest-neighbour sample of the transformed region, edges replicated
    let sample = |u: u32, v: u32| -> f64 {
        let u = if mirrored { w - 1 - u } else { u };
        let (dx, dy) = (u as f64 - cx, v as f64 - cy);
        // image y points down, so a counterclockwise turn maps through the transpose
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        let sx = sx.round().clamp(0.0, (w - 1) as f64) as u32;
        let sy = sy.round().clamp(0.0, (h - 1) as f64) as u32;
        image.at(region.x + sx, region.y + sy)
    };
    let span = |i: u32, len: u32| -> (u32, u32) {
        let start = (i as u64 * len as u64 / grid as u64) as u32;
        let end = (((i + 1) as u64 * len as u64 / grid as u64) as u32).max(start + 1);
        (start, end)
    };
    let mut out = Vec::with_capacity((grid * grid) as usize);
    for gy in 0..grid {
        let (y0, y1) = span(gy, h);
        for gx in 0..grid {
            let (x0, x1) = span(gx, w);
            let mut acc = 0.0;
            for v in y0..y1 {
                for u in x0..x1 {
                    acc += sample(u, v);
                }
            }
            let mean = acc / ((y1 - y0) as f64 * (x1 - x0) as f64);
            out.push(T::of(mean.clamp(0.0, 1.0)));
        }
    }
    Ok(FeatureVector::from_vec_unchecked(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRequest {
    pub id: String,
    pub image_path: PathBuf,
    /// `x,y,w,h` optionally followed by plan fields.
    pub region: String,
}

/// Runs one protocol session: every request is written, then stdin is closed.
///
/// The child is started through `sh -c`. Replies may arrive in any order but
/// must cover each request id exactly once with vectors of one dimension.
pub fn external_protocol_roundtrip<T: Real>(
    command: &str,
    requests: &[ProtocolRequest],
) -> Result<FeatureMatrix<T>> {
    let mut slots: HashMap<&str, usize> = HashMap::with_capacity(requests.len());
    for (i, r) in requests.iter().enumerate() {
        if r.id.is_empty() || r.id.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("invalid request id {:?}", r.id)));
        }
        if slots.insert(r.id.as_str(), i).is_some() {
            return Err(Error::invalid(format!("duplicate request id `{}`", r.id)));
        }
    }
    let mut payload = String::new();
    for r in requests {
        payload.push_str(&format!("{}\t{}\t{}\n", r.id, path_field(&r.image_path)?, r.region));
    }

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::ExtractorFailure(format!("cannot start `{command}`: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || {
        // a child that exits early closes the pipe; the reply check reports it
        let _ = stdin.write_all(payload.as_bytes());
    });
    let stdout = child.stdout.take().expect("piped stdout");
    let mut replies: Vec<Option<Vec<T>>> = vec![None; requests.len()];
    let mut violation = None;
    for line in BufReader::new(stdout).lines() {
        let line = line.map_err(|e| Error::ExtractorFailure(e.to_string()))?;
        if line.trim().is_empty() || violation.is_some() {
            continue;
        }
        if let Err(e) = accept_reply(&line, &slots, &mut replies) {
            violation = Some(e);
        }
    }
    let _ = writer.join();
    let status = child
        .wait()
        .map_err(|e| Error::ExtractorFailure(e.to_string()))?;
    if let Some(e) = violation {
        return Err(e);
    }
    if !status.success() {
        return Err(Error::ExtractorFailure(format!("`{command}` exited with {status}")));
    }

    let mut rows = Vec::with_capacity(requests.len());
    let mut dim = None;
    for (r, reply) in requests.iter().zip(replies) {
        let values =
            reply.ok_or_else(|| Error::ProtocolViolation(format!("no reply for id `{}`", r.id)))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::ProtocolViolation(format!(
                    "reply for `{}` has dimension {}, expected {d}",
                    r.id,
                    values.len()
                )))
            }
            _ => {}
        }
        rows.push(FeatureVector::from_vec_unchecked(values));
    }
    FeatureMatrix::new(requests.iter().map(|r| r.id.clone()).collect(), rows)
}

fn accept_reply<T: Real>(
    line: &str,
    slots: &HashMap<&str, usize>,
    replies: &mut [Option<Vec<T>>],
) -> Result<()> {
    let (id, body) = line
        .split_once('\t')
        .ok_or_else(|| Error::ProtocolViolation(format!("malformed reply `{line}`")))?;
    let &slot = slots
        .get(id)
        .ok_or_else(|| Error::ProtocolViolation(format!("reply for unknown id `{id}`")))?;
    if replies[slot].is_some() {
        return Err(Error::ProtocolViolation(format!("duplicate reply for `{id}`")));
    }
    let values = body
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ExtractorFailure(format!("bad value `{t}` in reply for `{id}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    replies[slot] = Some(values);
    Ok(())
}

fn path_field(path: &Path) -> Result<&str> {
    path.to_str()
        .filter(|s| !s.contains(['\t', '\n']))
        .ok_or_else(|| Error::invalid(format!("path {} is not protocol-safe", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: u32, h: u32, v: f64) -> ImageSource {
        ImageSource::from_pixels("u", PixelGrid::from_fn(w, h, |_, _| v).unwrap())
    }

    #[test]
    fn toy_uniform_image() {
        let img = uniform(8, 6, 0.5);
        let b = ExtractorBinding::<f64>::toy(2).unwrap();
        let v = b.extract(&ExtractRequest::whole("u", &img)).unwrap();
        assert_eq!(v.as_slice(), &[0.5; 4]);
    }

    #[test]
    fn toy_single_cell_is_region_mean() {
        let img = ImageSource::from_pixels(
            "g",
            PixelGrid::from_fn(4, 4, |x, y| (x + y) as f64 / 6.0).unwrap(),
        );
        let b = ExtractorBinding::<f64>::toy(1).unwrap();
        let r = Rect::new(1, 0, 2, 3);
        let v = b.extract(&ExtractRequest::region("k", &img, r)).unwrap();
        let expected: f64 = (0..3).flat_map(|y| (1..3).map(move |x| (x + y) as f64 / 6.0)).sum::<f64>() / 6.0;
        assert!((v[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn toy_mirror_flips_columns() {
        let img = ImageSource::from_pixels("g", PixelGrid::from_fn(4, 2, |x, _| x as f64 / 3.0).unwrap());
        let b = ExtractorBinding::<f64>::toy(2).unwrap();
        let plain = b.extract(&ExtractRequest::whole("k", &img)).unwrap();
        let mut req = ExtractRequest::whole("k", &img);
        req.mirrored = true;
        let flipped = b.extract(&req).unwrap();
        assert_eq!(plain[0], flipped[1]);
        assert_eq!(plain[1], flipped[0]);
    }

    #[test]
    fn toy_half_turn_reverses_quadrants() {
        let img = ImageSource::from_pixels(
            "g",
            PixelGrid::from_fn(4, 4, |x, y| (x / 2 + 2 * (y / 2)) as f64 / 3.0).unwrap(),
        );
        let b = ExtractorBinding::<f64>::toy(2).unwrap();
        let mut req = ExtractRequest::whole("k", &img);
        req.rotation_degrees = 180.0;
        let v = b.extract(&req).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn out_of_bounds_region() {
        let img = uniform(10, 10, 0.1);
        let b = ExtractorBinding::<f64>::toy(2).unwrap();
        let err = b.extract(&ExtractRequest::region("k", &img, Rect::new(5, 5, 6, 2)));
        assert!(matches!(err, Err(Error::RegionOutOfBounds { .. })));
    }

    #[test]
    fn square_of_tall_region() {
        let sq = smallest_square(Rect::new(40, 30, 10, 20), 100, 100);
        assert_eq!(sq, Rect::new(35, 30, 20, 20));
        assert!(sq.contains(&Rect::new(40, 30, 10, 20)));
    }

    #[test]
    fn square_shifts_at_border_and_clips_to_short_side() {
        assert_eq!(smallest_square(Rect::new(0, 0, 10, 4), 50, 50), Rect::new(0, 0, 10, 10));
        assert_eq!(smallest_square(Rect::new(40, 45, 10, 5), 50, 50), Rect::new(40, 40, 10, 10));
        assert_eq!(smallest_square(Rect::new(10, 0, 30, 5), 50, 8), Rect::new(10, 0, 30, 8));
    }

    #[test]
    fn file_backed_lookup_and_miss() {
        let m = FeatureMatrix::new(
            vec!["a#0".into()],
            vec![FeatureVector::new(vec![1.0f64, 2.0]).unwrap()],
        )
        .unwrap();
        let b = ExtractorBinding::file_backed(m).unwrap();
        let img = ImageSource::keyed("a", 10, 10);
        let v1 = b.extract(&ExtractRequest::whole("a#0", &img)).unwrap();
        let v2 = b.extract(&ExtractRequest::whole("a#0", &img)).unwrap();
        assert_eq!(v1, v2);
        assert!(matches!(
            b.extract(&ExtractRequest::whole("a#1", &img)),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn region_field_format() {
        assert_eq!(region_field(Rect::new(1, 2, 3, 4), 0.0, false), "1,2,3,4");
        assert_eq!(region_field(Rect::new(1, 2, 3, 4), -20.0, true), "1,2,3,4;rot=-20;mir=1");
    }
}
