//! Image lists, extractor specs and sample loading shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ots_core::augment::{augment_training_set, augmentation_plans, AugmentConfig, AugmentSource, TransformPlan};
use ots_core::extract::{ExtractorBinding, ImageSource};
use ots_core::io::{decode_binary, load_features, load_pgm, parse_tsv, pgm_size, FVEC_MAGIC};
use ots_core::preprocess::l2_normalize;
use ots_core::FeatureMatrix;

use crate::args::SampleInput;

/// One line of an image list.
#[derive(Debug, Clone)]
pub struct ListEntry {
    pub id: String,
    pub path: PathBuf,
    pub size: Option<(u32, u32)>,
}

/// Parses `id<TAB>path[<TAB>width<TAB>height]`; relative paths resolve against the list's directory.
pub fn read_image_list(path: &Path) -> Result<Vec<ListEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || anyhow!("{}: line {}: expected id<TAB>path[<TAB>width<TAB>height]", path.display(), n + 1);
        let size = match fields.len() {
            2 => None,
            4 => {
                let w: u32 = fields[2].trim().parse().map_err(|_| bad())?;
                let h: u32 = fields[3].trim().parse().map_err(|_| bad())?;
                if w == 0 || h == 0 {
                    return Err(bad());
                }
                Some((w, h))
            }
            _ => return Err(bad()),
        };
        if fields[0].is_empty() || fields[0].contains('#') || fields[1].is_empty() {
            return Err(bad());
        }
        let p = Path::new(fields[1]);
        out.push(ListEntry {
            id: fields[0].to_string(),
            path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            size,
        });
    }
    if out.is_empty() {
        bail!("{}: image list is empty", path.display());
    }
    Ok(out)
}

/// Reads a feature file whose format is detected from its first bytes.
pub fn load_features_sniffed(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let m = if bytes.starts_with(FVEC_MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| anyhow!("{}: not UTF-8 text", path.display()))?;
        parse_tsv(&text)
    };
    m.with_context(|| path.display().to_string())
}

pub fn parse_extractor(spec: &str) -> Result<ExtractorBinding<f64>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("extractor `{spec}` must be toy:<grid>, external:<command> or file:<path>"))?;
    Ok(match kind {
        "toy" => {
            let g: u32 = rest.parse().map_err(|_| anyhow!("toy extractor grid `{rest}` is not a positive integer"))?;
            ExtractorBinding::toy(g)?
        }
        "external" if !rest.trim().is_empty() => ExtractorBinding::ExternalProcess { command: rest.to_string() },
        "file" => ExtractorBinding::file_backed(load_features_sniffed(Path::new(rest))?)?,
        _ => bail!("extractor `{spec}` must be toy:<grid>, external:<command> or file:<path>"),
    })
}

/// Image sources backed the way `binding` needs them.
pub fn image_sources(entries: &[ListEntry], binding: &ExtractorBinding<f64>) -> Result<Vec<ImageSource>> {
    entries
        .iter()
        .map(|e| {
            let ctx = || e.path.display().to_string();
            match binding {
                ExtractorBinding::ToyPixel { .. } => {
                    let grid = load_pgm(&e.path).with_context(ctx)?;
                    if let Some((w, h)) = e.size {
                        if (w, h) != (grid.width(), grid.height()) {
                            bail!("{}: listed as {w}x{h} but is {}x{}", e.path.display(), grid.width(), grid.height());
                        }
                    }
                    Ok(ImageSource {
                        id: e.id.clone(),
                        width: grid.width(),
                        height: grid.height(),
                        path: Some(e.path.clone()),
                        pixels: Some(Arc::new(grid)),
                    })
                }
                _ => {
                    let (w, h) = match e.size {
                        Some(s) => s,
                        None => pgm_size(&e.path).with_context(ctx)?,
                    };
                    Ok(ImageSource::from_path(e.id.clone(), e.path.clone(), w, h))
                }
            }
        })
        .collect()
}

/// Loads sample rows from a feature file, or extracts them from an image list.
pub fn load_samples(input: &SampleInput) -> Result<FeatureMatrix> {
    if let Some(path) = &input.features {
        let m: FeatureMatrix = load_features(path, input.format.into()).with_context(|| path.display().to_string())?;
        if !input.normalize {
            return Ok(m);
        }
        let (ids, rows) = m.into_parts();
        return Ok(FeatureMatrix::new(ids, rows.iter().map(l2_normalize).collect())?);
    }
    let list = input.images.as_ref().expect("clap enforces --features or --images");
    let spec = input.extractor.as_ref().expect("clap enforces --extractor with --images");
    let binding = parse_extractor(spec)?;
    let sources: Vec<AugmentSource<()>> = image_sources(&read_image_list(list)?, &binding)?
        .into_iter()
        .map(|image| AugmentSource { image, label: () })
        .collect();
    let cfg = AugmentConfig::default();
    let augment = input.augment;
    let set = augment_training_set(&binding, &sources, |img| {
        if augment {
            augmentation_plans(img.width, img.height, &cfg)
        } else {
            Ok(vec![TransformPlan::IDENTITY])
        }
    })?;
    Ok(set.into_matrix()?.0)
}
