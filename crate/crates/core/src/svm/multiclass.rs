use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{solve, BinaryModel, SolverConfig};
use crate::error::{Error, Result, Warning};
use crate::feature::{base_id, FeatureMatrix};
use crate::io::LabelTable;
use crate::preprocess::Fitted;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    OneVsAll,
    OneVsOne,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OneVsAll => "ova",
            Strategy::OneVsOne => "ovo",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ova" => Ok(Strategy::OneVsAll),
            "ovo" => Ok(Strategy::OneVsOne),
            _ => Err(Error::invalid(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Which subproblem a binary model solves, by class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SubproblemKey {
    /// One class against the rest.
    Class(usize),
    /// First index is the positive side; always `first < second`.
    Pair(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubModel<T> {
    pub key: SubproblemKey,
    pub model: BinaryModel<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel<T> {
    pub(super) strategy: Strategy,
    pub(super) classes: Vec<String>,
    pub(super) bias: bool,
    pub(super) models: Vec<SubModel<T>>,
}

impl<T: Real> MulticlassModel<T> {
    pub fn new(strategy: Strategy, classes: Vec<String>, bias: bool, models: Vec<SubModel<T>>) -> Result<Self> {
        let k = classes.len();
        if k < 2 {
            return Err(Error::invalid("a multiclass model needs at least two classes"));
        }
        if classes.iter().collect::<BTreeSet<_>>().len() != k {
            return Err(Error::invalid("duplicate class names"));
        }
        let dim = models.first().map(|m| m.model.input_dim());
        for m in &models {
            if m.model.bias() != bias {
                return Err(Error::invalid("bias setting differs between sub-models"));
            }
            if Some(m.model.input_dim()) != dim {
                return Err(Error::invalid("sub-model dimensions differ"));
            }
            let ok = match (strategy, m.key) {
                (Strategy::OneVsAll, SubproblemKey::Class(c)) => c < k,
                (Strategy::OneVsOne, SubproblemKey::Pair(a, b)) => a < b && b < k,
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(format!("sub-model key {:?} invalid for {k} classes", m.key)));
            }
        }
        let mut keys: Vec<_> = models.iter().map(|m| m.key).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != models.len() {
            return Err(Error::invalid("duplicate sub-model keys"));
        }
        if strategy == Strategy::OneVsOne && models.len() != k * (k - 1) / 2 {
            return Err(Error::invalid(format!(
                "one-vs-one model with {k} classes needs {} pair models, found {}",
                k * (k - 1) / 2,
                models.len()
            )));
        }
        if models.is_empty() {
            return Err(Error::invalid("no sub-models"));
        }
        Ok(Self {
            strategy,
            classes,
            bias,
            models,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn bias(&self) -> bool {
        self.bias
    }

    pub fn models(&self) -> &[SubModel<T>] {
        &self.models
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].model.input_dim()
    }

    /// One decision value per sub-model, in model order.
    pub fn decisions(&self, x: &[T]) -> Result<Vec<T>> {
        self.models.iter().map(|m| m.model.decision(x)).collect()
    }

    /// Class index chosen from per-sub-model decision values (possibly pooled).
    ///
    /// One-vs-all takes the highest score, earliest class on ties; one-vs-one votes.
    pub fn predict_from_decisions(&self, decisions: &[T]) -> Result<usize> {
        if decisions.len() != self.models.len() {
            return Err(Error::DimMismatch {
                expected: self.models.len(),
                found: decisions.len(),
            });
        }
        match self.strategy {
            Strategy::OneVsAll => {
                let mut best: Option<(usize, T)> = None;
                for (m, &s) in self.models.iter().zip(decisions) {
                    let SubproblemKey::Class(c) = m.key else { unreachable!() };
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((c, s));
                    }
                }
                Ok(best.expect("non-empty").0)
            }
            Strategy::OneVsOne => {
                let pairs: Vec<((usize, usize), T)> = self
                    .models
                    .iter()
                    .zip(decisions)
                    .map(|(m, &s)| match m.key {
                        SubproblemKey::Pair(a, b) => ((a, b), s),
                        SubproblemKey::Class(_) => unreachable!(),
                    })
                    .collect();
                Ok(ovo_vote(self.classes.len(), &pairs))
            }
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<&str> {
        let d = self.decisions(x)?;
        Ok(&self.classes[self.predict_from_decisions(&d)?])
    }

    /// Per-class decision values for one-vs-all models; classes without a model are absent.
    pub fn class_scores(&self, x: &[T]) -> Result<Vec<(&str, T)>> {
        if self.strategy != Strategy::OneVsAll {
            return Err(Error::invalid("class scores need a one-vs-all model"));
        }
        self.models
            .iter()
            .map(|m| {
                let SubproblemKey::Class(c) = m.key else { unreachable!() };
                Ok((self.classes[c].as_str(), m.model.decision(x)?))
            })
            .collect()
    }
}

/// Majority vote over pair decisions.
///
/// A positive decision is a vote for the pair's first class, anything else for
/// the second. Ties go to the class with the larger sum of `|decision|` over the
/// votes it won, then to the lower class index.
pub fn ovo_vote<T: Real>(k: usize, pairs: &[((usize, usize), T)]) -> usize {
    let mut votes = vec![0usize; k];
    let mut margins = vec![T::zero(); k];
    for &((a, b), d) in pairs {
        let winner = if d > T::zero() { a } else { b };
        votes[winner] += 1;
        margins[winner] += d.abs();
    }
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margins[c] > margins[best]) {
            best = c;
        }
    }
    best
}

pub fn predict_ovo<'m, T: Real>(model: &'m MulticlassModel<T>, x: &[T]) -> Result<&'m str> {
    if model.strategy != Strategy::OneVsOne {
        return Err(Error::invalid("predict_ovo needs a one-vs-one model"));
    }
    model.predict(x)
}

fn labels_for<'a>(labels: &'a LabelTable, id: &str) -> Result<&'a [String]> {
    labels
        .labels(id)
        .or_else(|| labels.labels(base_id(id)))
        .ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// Trains one classifier per class: samples carrying the class are positive, all others negative.
///
/// Labels are looked up by row id, falling back to the part before `#`.
/// Classes present on every sample (or none) are skipped with a warning.
pub fn train_one_vs_all<T: Real>(
    features: &FeatureMatrix<T>,
    labels: &LabelTable,
    cfg: &SolverConfig,
) -> Result<Fitted<MulticlassModel<T>>> {
    cfg.validate()?;
    let row_labels = features
        .ids()
        .iter()
        .map(|id| labels_for(labels, id))
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<String> = row_labels
        .iter()
        .flat_map(|ls| ls.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::SingleClassData);
    }
    let xs: Vec<&[T]> = features.rows().iter().map(|r| r.as_slice()).collect();
    let results: Vec<Result<Option<BinaryModel<T>>>> = classes
        .par_iter()
        .map(|class| {
            let ys: Vec<T> = row_labels
                .iter()
                .map(|ls| if ls.contains(class) { T::one() } else { -T::one() })
                .collect();
            match solve(&xs, &ys, cfg) {
                Ok(s) => Ok(Some(s.model)),
                Err(Error::SingleClassData) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r? {
            Some(model) => models.push(SubModel {
                key: SubproblemKey::Class(c),
                model,
            }),
            None => warnings.push(Warning::SubproblemSkipped {
                name: classes[c].clone(),
            }),
        }
    }
    if models.is_empty() {
        return Err(Error::SingleClassData);
    }
    Ok(Fitted {
        model: MulticlassModel::new(Strategy::OneVsAll, classes, cfg.bias, models)?,
        warnings,
    })
}

/// Trains one classifier per unordered class pair on that pair's samples only.
///
/// Classes are sorted by name; the lower-indexed class is the positive side.
pub fn train_one_vs_one<T: Real>(
    features: &FeatureMatrix<T>,
    labels: &LabelTable,
    cfg: &SolverConfig,
) -> Result<Fitted<MulticlassModel<T>>> {
    cfg.validate()?;
    let row_labels = features
        .ids()
        .iter()
        .map(|id| match labels_for(labels, id)? {
            [one] => Ok(one.as_str()),
            _ => Err(Error::invalid(format!("id `{id}` needs exactly one label"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<String> = row_labels
        .iter()
        .map(|l| l.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = classes.len();
    if k < 2 {
        return Err(Error::SingleClassData);
    }
    let class_of: Vec<usize> = row_labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l)).expect("collected above"))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let models = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (xs, ys): (Vec<&[T]>, Vec<T>) = features
                .rows()
                .iter()
                .zip(&class_of)
                .filter(|(_, &c)| c == a || c == b)
                .map(|(x, &c)| (x.as_slice(), if c == a { T::one() } else { -T::one() }))
                .unzip();
            solve(&xs, &ys, cfg).map(|s| SubModel {
                key: SubproblemKey::Pair(a, b),
                model: s.model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Fitted {
        model: MulticlassModel::new(Strategy::OneVsOne, classes, cfg.bias, models)?,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureVector;

    fn blobs() -> (FeatureMatrix<f64>, LabelTable) {
        let centers = [("a", [4.0, 0.0]), ("b", [0.0, 4.0]), ("c", [-4.0, -4.0]), ("d", [4.0, 4.0])];
        let offsets = [[0.3, 0.1], [-0.2, 0.3], [0.1, -0.3]];
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut labels = LabelTable::default();
        for (name, c) in centers {
            for (j, o) in offsets.iter().enumerate() {
                let id = format!("{name}{j}");
                labels.insert(&id, name);
                ids.push(id);
                rows.push(FeatureVector::new(vec![c[0] + o[0], c[1] + o[1]]).unwrap());
            }
        }
        (FeatureMatrix::new(ids, rows).unwrap(), labels)
    }

    #[test]
    fn ovo_pair_count_and_accuracy() {
        let (x, l) = blobs();
        let m = train_one_vs_one(&x, &l, &SolverConfig::with_c(1.0)).unwrap().model;
        assert_eq!(m.models().len(), 6);
        for (id, row) in x.iter() {
            assert_eq!(predict_ovo(&m, row).unwrap(), &id[..1]);
        }
    }

    #[test]
    fn ova_one_model_per_class_and_multilabel_positives() {
        let (x, mut l) = blobs();
        l.insert("a0", "b");
        let fit = train_one_vs_all(&x, &l, &SolverConfig::with_c(1.0)).unwrap();
        assert_eq!(fit.model.models().len(), 4);
        let scores = fit.model.class_scores(x.get("a1").unwrap()).unwrap();
        assert_eq!(scores[0].0, "a");
        assert!(scores[0].1 > 0.0);
    }

    #[test]
    fn ova_skips_class_on_every_sample() {
        let (x, mut l) = blobs();
        for id in x.ids() {
            l.insert(id, "everything");
        }
        let fit = train_one_vs_all(&x, &l, &SolverConfig::with_c(1.0)).unwrap();
        assert_eq!(fit.model.models().len(), 4);
        assert_eq!(
            fit.warnings,
            vec![Warning::SubproblemSkipped {
                name: "everything".into()
            }]
        );
    }

    #[test]
    fn vote_counting_and_tie_breaks() {
        // b beats a and c
        let pairs = [((0, 1), -1.0), ((0, 2), 1.0), ((1, 2), 2.0)];
        assert_eq!(ovo_vote(3, &pairs), 1);
        // cyclic tie: a>b, b>c, c>a; margins decide
        let cyc = [((0, 1), 0.5), ((0, 2), -3.0), ((1, 2), 1.0)];
        assert_eq!(ovo_vote(3, &cyc), 2);
        // full tie falls back to class order
        let flat = [((0, 1), 1.0), ((0, 2), -1.0), ((1, 2), 1.0)];
        assert_eq!(ovo_vote(3, &flat), 0);
    }

    #[test]
    fn unlabeled_row_is_an_error() {
        let (x, _) = blobs();
        let l = LabelTable::parse("a0\ta\n").unwrap();
        assert!(matches!(
            train_one_vs_one(&x, &l, &SolverConfig::default()),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn model_validation() {
        let bm = BinaryModel::new(vec![1.0, 0.0], false, 1.0, 0.0).unwrap();
        let sub = |a, b| SubModel {
            key: SubproblemKey::Pair(a, b),
            model: bm.clone(),
        };
        let classes = vec!["x".to_string(), "y".into(), "z".into()];
        assert!(MulticlassModel::new(Strategy::OneVsOne, classes.clone(), false, vec![sub(0, 1)]).is_err());
        assert!(MulticlassModel::new(
            Strategy::OneVsOne,
            classes,
            false,
            vec![sub(0, 1), sub(0, 2), sub(1, 2)]
        )
        .is_ok());
    }
}
