//! Instance retrieval by multi-level spatial search.
//!
//! Every image is covered by `i x i` overlapping equal-size patches at each
//! level `i = 1..=h`. Reference patches are described, pushed through the
//! retrieval feature chain and stored. A query patch's distance to a reference
//! image is its minimum L2 distance over all of that image's patches; the
//! image-to-image distance is the mean over query patches.
//!
//! Processed vectors are stored at `f32` precision (the container precision),
//! and query vectors are rounded the same way, so persisted and in-memory
//! indexes rank identically.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result, Warning};
use crate::extract::{ExtractRequest, ExtractorBinding, ImageSource};
use crate::feature::{FeatureMatrix, FeatureVector, Rect};
use crate::io::{decode_block, encode_block, write_atomic, Cursor};
use crate::preprocess::{retrieval_pipeline_fit, retrieval_pipeline_trace, PcaWhitenModel, PipelineConfig};
use crate::scalar::{l2_distance, Real};

pub const OTIDX_MAGIC: &[u8] = b"OTIDX1\n";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialSearchConfig {
    pub h_r: u32,
    pub h_q: u32,
    pub pipeline: PipelineConfig,
    /// Describe the smallest square around each patch instead of the patch itself.
    pub square_mode: bool,
}

impl Default for SpatialSearchConfig {
    fn default() -> Self {
        Self {
            h_r: 4,
            h_q: 3,
            pipeline: PipelineConfig::default(),
            square_mode: true,
        }
    }
}

impl SpatialSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_r == 0 || self.h_q == 0 {
            return Err(Error::invalid("h_r and h_q must be >= 1"));
        }
        self.pipeline.validate()
    }
}

/// The `level^2` patches of one level, row-major.
///
/// Patch side per axis is `round(2 L / (level + 1))`; positions are evenly
/// spaced from `0` to `L - side`.
pub fn patch_grid(width: u32, height: u32, level: u32) -> Result<Vec<Rect>> {
    if level == 0 {
        return Err(Error::invalid("patch level must be >= 1"));
    }
    let axis = |len: u32| -> Result<Vec<(u32, u32)>> {
        let side = (2.0 * len as f64 / (level + 1) as f64).round() as u32;
        if side == 0 {
            return Err(Error::DegenerateImage(format!(
                "axis of {len} pixels has no level-{level} patches"
            )));
        }
        let slack = (len - side) as f64;
        Ok((0..level)
            .map(|j| {
                let pos = if level == 1 {
                    0
                } else {
                    (j as f64 * slack / (level - 1) as f64).round() as u32
                };
                (pos, side)
            })
            .collect())
    };
    let xs = axis(width)?;
    let ys = axis(height)?;
    Ok(ys
        .iter()
        .flat_map(|&(y, h)| xs.iter().map(move |&(x, w)| Rect::new(x, y, w, h)))
        .collect())
}

/// Patches of levels `1..=levels` concatenated, with their (level, index-in-level) tags.
pub fn multi_level_patches(width: u32, height: u32, levels: u32) -> Result<Vec<(u32, usize, Rect)>> {
    let mut out = Vec::new();
    for level in 1..=levels {
        out.extend(
            patch_grid(width, height, level)?
                .into_iter()
                .enumerate()
                .map(|(i, r)| (level, i, r)),
        );
    }
    Ok(out)
}

/// Representation id of a patch: `<image id>#L<level>P<index>`.
pub fn patch_key(image_id: &str, level: u32, index: usize) -> String {
    format!("{image_id}#L{level}P{index}")
}

pub fn patch_count(levels: u32) -> usize {
    (1..=levels as usize).map(|i| i * i).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<T> {
    pub id: String,
    pub rects: Vec<Rect>,
    pub vectors: Vec<FeatureVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex<T> {
    config: SpatialSearchConfig,
    model: PcaWhitenModel<T>,
    entries: Vec<IndexEntry<T>>,
}

/// Diagnostics from index construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub warnings: Vec<Warning>,
    /// Largest `| |v| - 1 |` over stored vectors just before the power step.
    pub max_pre_power_norm_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult<T> {
    /// `(reference id, distance)`, distance non-decreasing.
    pub hits: Vec<(String, T)>,
}

impl<T> RankedResult<T> {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|(id, _)| id.as_str()).collect()
    }
}

fn patch_requests<'a>(image: &'a ImageSource, levels: u32, square_mode: bool) -> Result<Vec<ExtractRequest<'a>>> {
    Ok(multi_level_patches(image.width, image.height, levels)?
        .into_iter()
        .map(|(level, i, rect)| ExtractRequest {
            square_mode,
            ..ExtractRequest::region(patch_key(&image.id, level, i), image, rect)
        })
        .collect())
}

/// Extracts every reference patch, fits the feature chain on all of them and stores processed vectors.
pub fn build_index<T: Real>(
    references: &[ImageSource],
    cfg: &SpatialSearchConfig,
    binding: &ExtractorBinding<T>,
) -> Result<(RetrievalIndex<T>, BuildReport)> {
    cfg.validate()?;
    if references.len() < 2 {
        return Err(Error::invalid("an index needs at least two reference images"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = references.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::invalid(format!("duplicate reference id `{}`", dup.id)));
    }
    let per_image = references
        .iter()
        .map(|r| patch_requests(r, cfg.h_r, cfg.square_mode))
        .collect::<Result<Vec<_>>>()?;
    let requests: Vec<ExtractRequest<'_>> = per_image.iter().flatten().cloned().collect();
    let raw = binding.extract_batch(&requests)?;
    let pool = FeatureMatrix::new(requests.iter().map(|r| r.key.clone()).collect(), raw)?;
    let fitted = retrieval_pipeline_fit(&pool, &cfg.pipeline)?;
    let model = fitted.model;

    let traces = pool
        .rows()
        .par_iter()
        .map(|v| retrieval_pipeline_trace(&model, &cfg.pipeline, v))
        .collect::<Result<Vec<_>>>()?;
    let max_pre_power_norm_error = traces
        .iter()
        .map(|t| (t.renormalized.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut processed = traces.into_iter().map(|t| quantize(t.output));
    let entries = references
        .iter()
        .zip(&per_image)
        .map(|(r, reqs)| IndexEntry {
            id: r.id.clone(),
            rects: reqs.iter().map(|q| q.region).collect(),
            vectors: processed.by_ref().take(reqs.len()).collect(),
        })
        .collect();
    Ok((
        RetrievalIndex {
            config: *cfg,
            model,
            entries,
        },
        BuildReport {
            warnings: fitted.warnings,
            max_pre_power_norm_error,
        },
    ))
}

fn quantize<T: Real>(v: FeatureVector<T>) -> FeatureVector<T> {
    FeatureVector::from_vec_unchecked(v.into_vec().into_iter().map(T::quantize_f32).collect())
}

/// Minimum L2 distance from a processed query patch to any patch of `entry`.
pub fn patch_to_ref_distance<T: Real>(query_patch: &[T], entry: &IndexEntry<T>) -> Result<T> {
    let mut best: Option<T> = None;
    for v in &entry.vectors {
        v.check_dim(query_patch.len())?;
        let d = l2_distance(query_patch, v);
        if best.is_none_or(|b| d < b) {
            best = Some(d);
        }
    }
    best.ok_or(Error::EmptyInput("reference entry has no patches"))
}

/// Mean over query patches of [`patch_to_ref_distance`].
pub fn query_distance<T: Real>(query_patches: &[FeatureVector<T>], entry: &IndexEntry<T>) -> Result<T> {
    if query_patches.is_empty() {
        return Err(Error::EmptyInput("query patches"));
    }
    let mut total = T::zero();
    for q in query_patches {
        total += patch_to_ref_distance(q, entry)?;
    }
    Ok(total / T::of(query_patches.len() as f64))
}

impl<T: Real> RetrievalIndex<T> {
    pub fn config(&self) -> &SpatialSearchConfig {
        &self.config
    }

    pub fn model(&self) -> &PcaWhitenModel<T> {
        &self.model
    }

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    /// Processed query patch vectors for levels `1..=h_q`.
    pub fn query_vectors(
        &self,
        query: &ImageSource,
        h_q: u32,
        binding: &ExtractorBinding<T>,
    ) -> Result<Vec<FeatureVector<T>>> {
        if h_q == 0 {
            return Err(Error::invalid("h_q must be >= 1"));
        }
        let requests = patch_requests(query, h_q, self.config.square_mode)?;
        binding
            .extract_batch(&requests)?
            .iter()
            .map(|v| self.process(v))
            .collect()
    }

    /// Runs a raw descriptor through the fitted feature chain at storage precision.
    pub fn process(&self, raw: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        retrieval_pipeline_trace(&self.model, &self.config.pipeline, raw).map(|t| quantize(t.output))
    }

    /// Ranks references by ascending distance to already-processed query patches; ties by id.
    pub fn rank(&self, query_patches: &[FeatureVector<T>], top_k: usize) -> Result<RankedResult<T>> {
        if top_k == 0 {
            return Err(Error::invalid("top_k must be >= 1"));
        }
        let mut hits = self
            .entries
            .par_iter()
            .map(|e| Ok((e.id.clone(), query_distance(query_patches, e)?)))
            .collect::<Result<Vec<_>>>()?;
        hits.sort_by(|a, b| match a.1.partial_cmp(&b.1) {
            Some(Ordering::Equal) | None => a.0.cmp(&b.0),
            Some(o) => o,
        });
        hits.truncate(top_k);
        Ok(RankedResult { hits })
    }

    pub fn search(
        &self,
        query: &ImageSource,
        h_q: u32,
        top_k: usize,
        binding: &ExtractorBinding<T>,
    ) -> Result<RankedResult<T>> {
        let q = self.query_vectors(query, h_q, binding)?;
        self.rank(&q, top_k)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = OTIDX_MAGIC.to_vec();
        let c = &self.config;
        out.extend_from_slice(&c.h_r.to_le_bytes());
        out.extend_from_slice(&c.h_q.to_le_bytes());
        out.extend_from_slice(&(c.pipeline.pca_dim as u64).to_le_bytes());
        out.extend_from_slice(&c.pipeline.power.to_bits().to_le_bytes());
        out.extend_from_slice(&c.pipeline.epsilon.to_bits().to_le_bytes());
        out.push(u8::from(c.square_mode));
        let model = self.model.to_text();
        out.extend_from_slice(&(model.len() as u64).to_le_bytes());
        out.extend_from_slice(model.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
            out.extend_from_slice(e.id.as_bytes());
            out.extend_from_slice(&(e.rects.len() as u32).to_le_bytes());
            for r in &e.rects {
                for v in [r.x, r.y, r.w, r.h] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            encode_block(&e.vectors, &mut out)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(OTIDX_MAGIC)
            .ok_or_else(|| Error::malformed("OTIDX1: bad magic"))?;
        let mut cur = Cursor::new(rest);
        let h_r = cur.u32()?;
        let h_q = cur.u32()?;
        let pca_dim = usize::try_from(cur.u64()?).map_err(|_| Error::malformed("OTIDX1: bad pca_dim"))?;
        let power = cur.f64()?;
        let epsilon = cur.f64()?;
        let square_mode = match cur.u8()? {
            0 => false,
            1 => true,
            _ => return Err(Error::malformed("OTIDX1: bad square flag")),
        };
        let config = SpatialSearchConfig {
            h_r,
            h_q,
            pipeline: PipelineConfig {
                pca_dim,
                power,
                epsilon,
            },
            square_mode,
        };
        config.validate().map_err(|e| Error::malformed(format!("OTIDX1: {e}")))?;
        let model_len = usize::try_from(cur.u64()?).map_err(|_| Error::malformed("OTIDX1: bad model length"))?;
        let model_text = std::str::from_utf8(cur.take(model_len)?)
            .map_err(|_| Error::malformed("OTIDX1: model is not UTF-8"))?;
        let model = PcaWhitenModel::from_text(model_text)?;
        let n = cur.u32()? as usize;
        let expected_patches = patch_count(h_r);
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id_len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| Error::malformed("OTIDX1: id is not UTF-8"))?
                .to_string();
            let n_rects = cur.u32()? as usize;
            if n_rects != expected_patches {
                return Err(Error::malformed(format!(
                    "OTIDX1: entry `{id}` has {n_rects} patches, expected {expected_patches}"
                )));
            }
            let rects = (0..n_rects)
                .map(|_| Ok(Rect::new(cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?)))
                .collect::<Result<Vec<_>>>()?;
            let vectors = decode_block::<T>(&mut cur)?;
            if vectors.len() != n_rects || vectors.iter().any(|v| v.dim() != model.k()) {
                return Err(Error::malformed(format!("OTIDX1: entry `{id}` has inconsistent vectors")));
            }
            entries.push(IndexEntry { id, rects, vectors });
        }
        if !cur.remaining().is_empty() {
            return Err(Error::malformed("OTIDX1: trailing bytes"));
        }
        if entries.len() < 2 {
            return Err(Error::malformed("OTIDX1: fewer than two references"));
        }
        Ok(Self {
            config,
            model,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::PixelGrid;

    #[test]
    fn level_one_is_full_image() {
        assert_eq!(patch_grid(37, 21, 1).unwrap(), vec![Rect::full(37, 21)]);
    }

    #[test]
    fn levels_two_and_three_on_300() {
        let l2 = patch_grid(300, 300, 2).unwrap();
        assert_eq!(
            l2,
            vec![
                Rect::new(0, 0, 200, 200),
                Rect::new(100, 0, 200, 200),
                Rect::new(0, 100, 200, 200),
                Rect::new(100, 100, 200, 200),
            ]
        );
        let l3 = patch_grid(300, 300, 3).unwrap();
        assert_eq!(l3.len(), 9);
        assert!(l3.iter().all(|r| r.w == 150 && r.h == 150));
        let xs: Vec<u32> = l3[..3].iter().map(|r| r.x).collect();
        assert_eq!(xs, [0, 75, 150]);
    }

    #[test]
    fn patch_counts() {
        assert_eq!(patch_count(4), 30);
        assert_eq!(patch_count(3), 14);
        assert_eq!(multi_level_patches(64, 48, 4).unwrap().len(), 30);
        assert!(matches!(patch_grid(1, 1, 4), Err(Error::DegenerateImage(_))));
    }

    fn entry(vectors: Vec<Vec<f64>>) -> IndexEntry<f64> {
        IndexEntry {
            id: "e".into(),
            rects: vec![Rect::full(1, 1); vectors.len()],
            vectors: vectors.into_iter().map(|v| FeatureVector::new(v).unwrap()).collect(),
        }
    }

    #[test]
    fn patch_distance_cases() {
        let e = entry(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(patch_to_ref_distance(&[3.0, 4.0], &e).unwrap(), 0.0);
        assert_eq!(patch_to_ref_distance(&[3.0, 5.0], &e).unwrap(), 1.0);
        let single = entry(vec![vec![1.0, 1.0]]);
        assert_eq!(patch_to_ref_distance(&[4.0, 5.0], &single).unwrap(), 5.0);
        assert!(matches!(patch_to_ref_distance(&[1.0], &e), Err(Error::DimMismatch { .. })));
        let q = vec![FeatureVector::new(vec![3.0, 5.0]).unwrap()];
        assert_eq!(query_distance(&q, &e).unwrap(), 1.0);
        assert!(matches!(query_distance(&[], &e), Err(Error::EmptyInput(_))));
    }

    fn corpus() -> Vec<ImageSource> {
        (0..3)
            .map(|k| {
                ImageSource::from_pixels(
                    format!("img{k}"),
                    PixelGrid::from_fn(24, 24, |x, y| {
                        (0.5 + 0.45 * ((x as f64 * (0.2 + 0.1 * k as f64)) + y as f64 * 0.3 * k as f64).sin()).clamp(0.0, 1.0)
                    })
                    .unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn identical_query_ranks_first_at_zero() {
        let refs = corpus();
        let binding = ExtractorBinding::<f64>::toy(3).unwrap();
        let cfg = SpatialSearchConfig {
            h_q: 4,
            ..SpatialSearchConfig::default()
        };
        let (index, report) = build_index(&refs, &cfg, &binding).unwrap();
        assert_eq!(index.entries().len(), 3);
        assert!(index.entries().iter().all(|e| e.vectors.len() == 30));
        assert!(report.max_pre_power_norm_error < 1e-12);
        for r in &refs {
            let res = index.search(r, 4, 10, &binding).unwrap();
            assert_eq!(res.hits[0].0, r.id);
            assert_eq!(res.hits[0].1, 0.0);
            assert_eq!(res.hits.len(), 3);
        }
        let top1 = index.search(&refs[1], 3, 1, &binding).unwrap();
        assert_eq!(top1.hits.len(), 1);
    }

    #[test]
    fn index_bytes_round_trip() {
        let refs = corpus();
        let binding = ExtractorBinding::<f64>::toy(2).unwrap();
        let (index, _) = build_index(&refs, &SpatialSearchConfig::default(), &binding).unwrap();
        let bytes = index.to_bytes().unwrap();
        let back = RetrievalIndex::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(RetrievalIndex::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'x';
        assert!(RetrievalIndex::<f64>::from_bytes(&bad).is_err());
    }

    #[test]
    fn needs_two_references() {
        let refs = corpus();
        let binding = ExtractorBinding::<f64>::toy(2).unwrap();
        assert!(build_index(&refs[..1], &SpatialSearchConfig::default(), &binding).is_err());
    }
}
