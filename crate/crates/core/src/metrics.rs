//! Precision/recall, average precision, confusion-matrix accuracy and recall@k.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// One point per positive hit, in descending-score order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// Mean precision at the rank of each positive.
    #[default]
    AllPoints,
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

impl FromStr for ApMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_points" | "all-points" => Ok(ApMode::AllPoints),
            "eleven_point" | "eleven-point" | "11pt" => Ok(ApMode::ElevenPoint),
            _ => Err(Error::invalid(format!("unknown AP mode `{s}`"))),
        }
    }
}

/// Indices sorted by descending score; equal scores keep input order.
pub fn rank_order<T: Real>(scores: &[T]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite"));
    Ok(order)
}

pub fn pr_curve<T: Real>(scores: &[T], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut points = Vec::with_capacity(positives);
    for (rank, &i) in rank_order(scores)?.iter().enumerate() {
        if labels[i] {
            hits += 1;
            points.push(PrPoint {
                recall: hits as f64 / positives as f64,
                precision: hits as f64 / (rank + 1) as f64,
            });
        }
    }
    Ok(PrCurve { points })
}

pub fn average_precision<T: Real>(scores: &[T], labels: &[bool], mode: ApMode) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    Ok(match mode {
        ApMode::AllPoints => {
            curve.points.iter().map(|p| p.precision).sum::<f64>() / curve.points.len() as f64
        }
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let r = t as f64 / 10.0;
                    curve
                        .points
                        .iter()
                        .filter(|p| p.recall >= r)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

pub fn mean_ap(per_class_ap: &[f64]) -> Result<f64> {
    if per_class_ap.is_empty() {
        return Err(Error::EmptyInput("per-class AP values"));
    }
    if per_class_ap.iter().any(|ap| !(0.0..=1.0).contains(ap)) {
        return Err(Error::invalid("AP values must lie in [0, 1]"));
    }
    // running mean: exact on constant input
    Ok(per_class_ap
        .iter()
        .enumerate()
        .fold(0.0, |mean, (i, &ap)| mean + (ap - mean) / (i + 1) as f64))
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion<S: AsRef<str>>(preds: &[S], truth: &[S], classes: &[String]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth labels",
            preds.len(),
            truth.len()
        )));
    }
    let index = |label: &str| {
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    };
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (p, t) in preds.iter().zip(truth) {
        counts[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

/// Per-class recall averaged over classes (unweighted mean of the row-normalized diagonal).
pub fn mean_diag_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    if m.classes.is_empty() {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let mut acc = 0.0;
    for (c, row) in m.counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(Error::EmptyClassRow(m.classes[c].clone()));
        }
        acc += row[c] as f64 / total as f64;
    }
    Ok(acc / m.classes.len() as f64)
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<String>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

/// Removes `query_id` from both the ranking and the relevant set before [`recall_at_k`].
pub fn recall_at_k_excluding_query<S: AsRef<str>>(
    query_id: &str,
    ranking: &[S],
    relevant: &HashSet<String>,
    k: usize,
) -> Result<f64> {
    let ranking: Vec<&str> = ranking.iter().map(AsRef::as_ref).filter(|&id| id != query_id).collect();
    let mut relevant = relevant.clone();
    relevant.remove(query_id);
    recall_at_k(&ranking, &relevant, k)
}

/// `name<TAB>value` rows: per-class APs followed by summary rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<(String, f64)>,
}

impl EvaluationReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.rows.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.rows {
            let _ = writeln!(out, "{name}\t{value}");
        }
        out
    }
}
