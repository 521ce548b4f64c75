//! `OTSVM1` text model files.
//!
//! ```text
//! OTSVM1
//! <ova|ovo> <K> <bias 0|1>
//! <class name>            (K lines)
//! <key>\t<C>\t<objective>\t<w_1>\t...\t<w_m>   (one line per sub-model)
//! END <sub-model count>
//! ```
//!
//! One-vs-all keys are class names, one-vs-one keys are `i,j` class indices.

use std::fmt::Write as _;
use std::path::Path;

use super::{BinaryModel, MulticlassModel, Strategy, SubModel, SubproblemKey};
use crate::error::{Error, Result};
use crate::io::{parse_real, write_atomic};
use crate::scalar::Real;

pub const OTSVM_MAGIC: &str = "OTSVM1";

impl<T: Real> MulticlassModel<T> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{OTSVM_MAGIC}");
        let _ = writeln!(
            out,
            "{} {} {}",
            self.strategy.as_str(),
            self.classes.len(),
            u8::from(self.bias)
        );
        for c in &self.classes {
            let _ = writeln!(out, "{c}");
        }
        for m in &self.models {
            match m.key {
                SubproblemKey::Class(c) => out.push_str(&self.classes[c]),
                SubproblemKey::Pair(a, b) => {
                    let _ = write!(out, "{a},{b}");
                }
            }
            let _ = write!(out, "\t{}\t{}", m.model.c(), m.model.objective_value());
            for w in m.model.weights() {
                let _ = write!(out, "\t{w}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "END {}", self.models.len());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::malformed(format!("OTSVM1: truncated before {what}")))
        };
        if next("header")? != OTSVM_MAGIC {
            return Err(Error::malformed("OTSVM1: bad or unsupported header"));
        }
        let fields: Vec<&str> = next("model line")?.split_whitespace().collect();
        let [strategy, k, bias] = fields[..] else {
            return Err(Error::malformed("OTSVM1: expected `strategy K bias`"));
        };
        let strategy: Strategy = strategy.parse().map_err(|_| Error::malformed("OTSVM1: bad strategy"))?;
        let k: usize = k.parse().map_err(|_| Error::malformed("OTSVM1: bad class count"))?;
        let bias = match bias {
            "0" => false,
            "1" => true,
            _ => return Err(Error::malformed("OTSVM1: bad bias flag")),
        };
        let classes = (0..k)
            .map(|_| next("class names").map(str::to_string))
            .collect::<Result<Vec<_>>>()?;

        let mut models = Vec::new();
        loop {
            let line = next("END trailer")?;
            if let Some(count) = line.strip_prefix("END ") {
                let count: usize = count.parse().map_err(|_| Error::malformed("OTSVM1: bad trailer"))?;
                if count != models.len() {
                    return Err(Error::malformed(format!(
                        "OTSVM1: trailer announces {count} models, found {}",
                        models.len()
                    )));
                }
                break;
            }
            let mut parts = line.split('\t');
            let key_field = parts.next().unwrap_or_default();
            let key = match strategy {
                Strategy::OneVsAll => SubproblemKey::Class(
                    classes
                        .iter()
                        .position(|c| c == key_field)
                        .ok_or_else(|| Error::malformed(format!("OTSVM1: unknown class `{key_field}`")))?,
                ),
                Strategy::OneVsOne => {
                    let (a, b) = key_field
                        .split_once(',')
                        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                        .ok_or_else(|| Error::malformed(format!("OTSVM1: bad pair key `{key_field}`")))?;
                    SubproblemKey::Pair(a, b)
                }
            };
            let numbers = parts.map(parse_real::<T>).collect::<Result<Vec<_>>>()?;
            if numbers.len() < 3 {
                return Err(Error::malformed("OTSVM1: sub-model line too short"));
            }
            let model = BinaryModel::new(numbers[2..].to_vec(), bias, numbers[0], numbers[1])
                .map_err(|e| Error::malformed(format!("OTSVM1: {e}")))?;
            models.push(SubModel { key, model });
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::malformed("OTSVM1: trailing data after END"));
        }
        MulticlassModel::new(strategy, classes, bias, models).map_err(|e| Error::malformed(format!("OTSVM1: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MulticlassModel<f64> {
        let bm = |w: Vec<f64>| BinaryModel::new(w, true, 0.2, 1.5).unwrap();
        MulticlassModel::new(
            Strategy::OneVsOne,
            vec!["cat".into(), "dog".into(), "emu".into()],
            true,
            vec![
                SubModel { key: SubproblemKey::Pair(0, 1), model: bm(vec![0.1, -0.2, 0.3]) },
                SubModel { key: SubproblemKey::Pair(0, 2), model: bm(vec![1.0 / 3.0, 2.0, 1e-17]) },
                SubModel { key: SubproblemKey::Pair(1, 2), model: bm(vec![-5.5, 0.0, 7.0]) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_layout() {
        let text = model().to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "OTSVM1");
        assert_eq!(lines[1], "ovo 3 1");
        assert_eq!(&lines[2..5], ["cat", "dog", "emu"]);
        assert!(lines[5].starts_with("0,1\t0.2\t1.5\t0.1\t-0.2\t0.3"));
        assert_eq!(lines[8], "END 3");
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        assert_eq!(MulticlassModel::<f64>::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn truncation_and_version_mismatch() {
        let text = model().to_text();
        for cut in [3, 6, 8] {
            let partial: String = text.lines().take(cut).map(|l| format!("{l}\n")).collect();
            assert!(matches!(
                MulticlassModel::<f64>::from_text(&partial),
                Err(Error::MalformedFile(_))
            ));
        }
        // a line cut mid-way changes the weight count of one sub-model
        let cut_line = text.replacen("\t0.3\n", "\n", 1);
        assert!(MulticlassModel::<f64>::from_text(&cut_line).is_err());
        assert!(matches!(
            MulticlassModel::<f64>::from_text(&text.replace("OTSVM1", "OTSVM2")),
            Err(Error::MalformedFile(_))
        ));
    }
}
