use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ots_core::augment::{
    augmentation_plans, negative_expansion_plans, pool_responses, positive_mirror_plans, AugmentConfig, Pooling,
};
use ots_core::io::{load_features, save_features, write_atomic, LabelTable};
use ots_core::metrics::{
    average_precision, confusion, mean_ap, mean_diag_accuracy, recall_at_k, recall_at_k_excluding_query,
    EvaluationReport,
};
use ots_core::preprocess::{retrieval_pipeline_apply, retrieval_pipeline_fit, PipelineConfig};
use ots_core::presets::preset_c;
use ots_core::retrieval::{build_index, SpatialSearchConfig};
use ots_core::svm::{train_one_vs_all, train_one_vs_one, SolverConfig, Strategy, SubproblemKey};
use ots_core::{base_id, Error, FeatureMatrix, MulticlassModel, PcaWhitenModel, RetrievalIndex, Warning};

use crate::args::{
    EvaluateArgs, IndexArgs, PipelineArgs, PlanKind, PlansArgs, PredictArgs, PreprocessApplyArgs, PreprocessFitArgs,
    QueryArgs, TrainArgs,
};
use crate::inputs::{image_sources, load_samples, parse_extractor, read_image_list};

fn warn(w: &Warning) {
    eprintln!("ots: warning: {w}");
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn load_labels(path: &Path) -> Result<LabelTable> {
    LabelTable::load(path).with_context(|| path.display().to_string())
}

pub fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let c = match (a.c, a.preset) {
        (Some(c), _) => c,
        (None, Some(p)) => preset_c(p.key()).ok_or_else(|| anyhow!("unknown preset"))?,
        (None, None) => SolverConfig::default().c,
    };
    let cfg = SolverConfig {
        c,
        tol: a.tol,
        max_epochs: a.max_epochs,
        bias: !a.no_bias,
        seed,
    };
    cfg.validate()?;
    let samples = load_samples(&a.input)?;
    let labels = load_labels(&a.labels)?;
    let strategy: Strategy = a.strategy.into();
    let fitted = match strategy {
        Strategy::OneVsAll => train_one_vs_all(&samples, &labels, &cfg)?,
        Strategy::OneVsOne => train_one_vs_one(&samples, &labels, &cfg)?,
    };
    fitted.warnings.iter().for_each(warn);
    let model = fitted.model;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;

    if let Some(path) = &a.report {
        let sources: BTreeSet<&str> = samples.ids().iter().map(|id| base_id(id)).collect();
        let mut r = String::new();
        writeln!(r, "strategy\t{}", strategy.as_str())?;
        writeln!(r, "C\t{c}")?;
        writeln!(r, "rows\t{}", samples.len())?;
        writeln!(r, "sources\t{}", sources.len())?;
        writeln!(r, "dim\t{}", samples.dim())?;
        for m in model.models() {
            let name = match m.key {
                SubproblemKey::Class(i) => model.classes()[i].clone(),
                SubproblemKey::Pair(i, j) => format!("{} vs {}", model.classes()[i], model.classes()[j]),
            };
            writeln!(r, "objective\t{name}\t{}", m.model.objective_value())?;
        }
        for w in &fitted.warnings {
            writeln!(r, "warning\t{w}")?;
        }
        write_text(path, &r)?;
    }
    Ok(())
}

/// Row indices grouped by sample id (the part before `#`), in order of first appearance.
fn group_by_sample(m: &FeatureMatrix) -> Vec<(&str, Vec<usize>)> {
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, id) in m.ids().iter().enumerate() {
        let key = base_id(id);
        let g = *slot.entry(key).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    groups
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = MulticlassModel::load(&a.model).with_context(|| a.model.display().to_string())?;
    let samples = load_samples(&a.input)?;
    if samples.dim() != model.input_dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            found: samples.dim(),
        }
        .into());
    }
    let pooling: Pooling = a.pooling.into();
    let mut out = String::from("id\tprediction");
    if model.strategy() == Strategy::OneVsAll {
        for m in model.models() {
            if let SubproblemKey::Class(c) = m.key {
                write!(out, "\t{}", model.classes()[c])?;
            }
        }
    }
    out.push('\n');
    for (id, rows) in group_by_sample(&samples) {
        let per_row = rows
            .iter()
            .map(|&i| model.decisions(&samples.rows()[i]))
            .collect::<ots_core::Result<Vec<_>>>()?;
        let pooled = (0..model.models().len())
            .map(|j| pool_responses(&per_row.iter().map(|d| d[j]).collect::<Vec<_>>(), pooling))
            .collect::<ots_core::Result<Vec<_>>>()?;
        let label = &model.classes()[model.predict_from_decisions(&pooled)?];
        write!(out, "{id}\t{label}")?;
        if model.strategy() == Strategy::OneVsAll {
            for s in &pooled {
                write!(out, "\t{s}")?;
            }
        }
        out.push('\n');
    }
    write_text(&a.out, &out)
}

struct PredictionTable {
    classes: Vec<String>,
    rows: Vec<(String, String, Vec<f64>)>,
}

/// Reads `predict` output; a headerless `id<TAB>label` file is accepted too.
fn read_predictions(path: &Path) -> Result<PredictionTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let mut classes = Vec::new();
    if let Some(first) = lines.peek() {
        let fields: Vec<&str> = first.split('\t').collect();
        if fields.len() >= 2 && fields[0] == "id" && fields[1] == "prediction" {
            classes = fields[2..].iter().map(|s| s.to_string()).collect();
            lines.next();
        }
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 + classes.len() {
            bail!("{}: row {}: expected {} columns", path.display(), n + 1, 2 + classes.len());
        }
        if !seen.insert(fields[0]) {
            bail!("{}: duplicate id `{}`", path.display(), fields[0]);
        }
        let scores = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| anyhow!("{}: bad score `{s}`", path.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((fields[0].to_string(), fields[1].to_string(), scores));
    }
    if rows.is_empty() {
        bail!("{}: no predictions", path.display());
    }
    Ok(PredictionTable { classes, rows })
}

fn truth_of<'a>(truth: &'a LabelTable, id: &str) -> Result<&'a [String]> {
    truth
        .labels(id)
        .ok_or_else(|| Error::UnknownId(format!("`{id}` has predictions but no ground-truth label")).into())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = load_labels(&a.labels)?;
    let mut report = EvaluationReport::default();
    match a.metric.as_str() {
        "ap" => {
            let table = read_predictions(&a.predictions)?;
            if table.classes.is_empty() {
                bail!("AP needs per-class score columns (one-vs-all predictions)");
            }
            let mut aps = Vec::new();
            for (j, class) in table.classes.iter().enumerate() {
                let scores: Vec<f64> = table.rows.iter().map(|r| r.2[j]).collect();
                let labels = table
                    .rows
                    .iter()
                    .map(|r| Ok(truth_of(&truth, &r.0)?.contains(class)))
                    .collect::<Result<Vec<_>>>()?;
                match average_precision(&scores, &labels, a.ap_mode.into()) {
                    Ok(ap) => {
                        report.push(class.clone(), ap);
                        aps.push(ap);
                    }
                    Err(Error::NoPositives) => eprintln!("ots: warning: class `{class}` has no positives; skipped"),
                    Err(e) => return Err(e.into()),
                }
            }
            report.push("mAP", mean_ap(&aps)?);
        }
        "accuracy" => {
            let table = read_predictions(&a.predictions)?;
            let truth_labels = table
                .rows
                .iter()
                .map(|r| Ok(truth.single(&r.0)?.to_string()))
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<&str> = table.rows.iter().map(|r| r.1.as_str()).collect();
            let classes: Vec<String> = truth_labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let m = confusion(&preds, &truth_labels.iter().map(String::as_str).collect::<Vec<_>>(), &classes)?;
            for (c, row) in m.counts().iter().enumerate() {
                let total: u64 = row.iter().sum();
                report.push(classes[c].clone(), row[c] as f64 / total as f64);
            }
            report.push("accuracy", mean_diag_accuracy(&m)?);
        }
        metric => {
            let k: usize = metric
                .strip_prefix("recall@")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(|| anyhow!("unknown metric `{metric}` (expected ap, accuracy or recall@<k>)"))?;
            let rankings = read_rankings(&a.predictions)?;
            let mut mean = 0.0;
            for (n, (query, ranking)) in rankings.iter().enumerate() {
                let relevant: HashSet<String> = truth_of(&truth, query)?.iter().cloned().collect();
                let self_match = ranking.iter().any(|r| r == query) && relevant.contains(query);
                let r = if self_match && !a.keep_self {
                    recall_at_k_excluding_query(query, ranking, &relevant, k)?
                } else {
                    recall_at_k(ranking, &relevant, k)?
                };
                mean += (r - mean) / (n + 1) as f64;
            }
            report.push("queries", rankings.len() as f64);
            report.push(format!("recall@{k}"), mean);
        }
    }
    write_text(&a.out, &report.to_tsv())
}

/// `query<TAB>rank<TAB>ref<TAB>distance` lines grouped by query, each sorted by rank.
fn read_rankings(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: Vec<(String, Vec<(usize, String)>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let rank = (f.len() == 4).then(|| f[1].parse::<usize>().ok()).flatten();
        let Some(rank) = rank else {
            bail!("{}: line {}: expected query<TAB>rank<TAB>ref<TAB>distance", path.display(), n + 1);
        };
        let g = *slot.entry(f[0].to_string()).or_insert_with(|| {
            out.push((f[0].to_string(), Vec::new()));
            out.len() - 1
        });
        out[g].1.push((rank, f[2].to_string()));
    }
    if out.is_empty() {
        bail!("{}: no rankings", path.display());
    }
    Ok(out
        .into_iter()
        .map(|(q, mut hits)| {
            hits.sort();
            (q, hits.into_iter().map(|h| h.1).collect())
        })
        .collect())
}

fn pipeline_config(p: &PipelineArgs) -> PipelineConfig {
    PipelineConfig {
        pca_dim: p.pca_dim,
        power: p.power,
        epsilon: p.epsilon,
    }
}

pub fn index(a: IndexArgs) -> Result<()> {
    let binding = parse_extractor(&a.extractor)?;
    let refs = image_sources(&read_image_list(&a.refs)?, &binding)?;
    let cfg = SpatialSearchConfig {
        h_r: a.h_r,
        h_q: a.h_q,
        pipeline: pipeline_config(&a.pipeline),
        square_mode: !a.no_square,
    };
    let (index, built) = build_index(&refs, &cfg, &binding)?;
    built.warnings.iter().for_each(warn);
    index.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.report {
        let mut r = String::new();
        writeln!(r, "references\t{}", index.entries().len())?;
        writeln!(r, "patches_per_reference\t{}", index.entries()[0].vectors.len())?;
        writeln!(r, "h_r\t{}", cfg.h_r)?;
        writeln!(r, "h_q\t{}", cfg.h_q)?;
        writeln!(r, "pca_dim\t{}", index.model().k())?;
        writeln!(r, "max_pre_power_norm_error\t{}", built.max_pre_power_norm_error)?;
        for w in &built.warnings {
            writeln!(r, "warning\t{w}")?;
        }
        write_text(path, &r)?;
    }
    Ok(())
}

pub fn query(a: QueryArgs) -> Result<()> {
    let index = RetrievalIndex::load(&a.index).with_context(|| a.index.display().to_string())?;
    let binding = parse_extractor(&a.extractor)?;
    let queries = image_sources(&read_image_list(&a.queries)?, &binding)?;
    let h_q = a.h_q.unwrap_or(index.config().h_q);
    let mut out = String::new();
    for q in &queries {
        let ranked = index.search(q, h_q, a.top_k, &binding)?;
        for (rank, (id, d)) in ranked.hits.iter().enumerate() {
            writeln!(out, "{}\t{}\t{id}\t{d}", q.id, rank + 1)?;
        }
    }
    write_text(&a.out, &out)
}

pub fn preprocess_fit(a: PreprocessFitArgs) -> Result<()> {
    let m: FeatureMatrix = load_features(&a.features, a.format.into()).with_context(|| a.features.display().to_string())?;
    let fitted = retrieval_pipeline_fit(&m, &pipeline_config(&a.pipeline))?;
    fitted.warnings.iter().for_each(warn);
    fitted.model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))
}

pub fn preprocess_apply(a: PreprocessApplyArgs) -> Result<()> {
    let model = PcaWhitenModel::load(&a.model).with_context(|| a.model.display().to_string())?;
    let cfg = PipelineConfig {
        power: a.power,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let m: FeatureMatrix = load_features(&a.features, a.format.into()).with_context(|| a.features.display().to_string())?;
    let (ids, rows) = m.into_parts();
    let rows = rows
        .iter()
        .map(|v| retrieval_pipeline_apply(&model, &cfg, v))
        .collect::<ots_core::Result<Vec<_>>>()?;
    let out = FeatureMatrix::new(ids, rows)?;
    save_features(&out, &a.out, a.out_format.unwrap_or(a.format).into())
        .with_context(|| format!("writing {}", a.out.display()))
}

pub fn plans(a: PlansArgs) -> Result<()> {
    if a.rotations.len() != 2 {
        bail!("--rotations takes exactly two angles, got {}", a.rotations.len());
    }
    let plans = match a.kind {
        PlanKind::Augment => {
            let cfg = AugmentConfig {
                rotation_angles: [a.rotations[0], a.rotations[1]],
                crop_area_fraction: a.crop_fraction,
                ..AugmentConfig::default()
            };
            augmentation_plans(a.width, a.height, &cfg)?
        }
        PlanKind::Mirror => positive_mirror_plans().to_vec(),
        PlanKind::Negatives => negative_expansion_plans(a.width, a.height)?,
    };
    let mut out = String::from("index\tx\ty\tw\th\trotation\tmirrored\n");
    for (i, p) in plans.iter().enumerate() {
        let r = p.region(a.width, a.height);
        writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.x,
            r.y,
            r.w,
            r.h,
            p.rotation_degrees,
            u8::from(p.mirrored)
        )?;
    }
    match &a.out {
        Some(path) => write_text(path, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}
