//! Vector normalization and the retrieval feature chain:
//! L2 normalize, PCA projection, whitening, L2 renormalize, signed power.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result, Warning};
use crate::feature::{FeatureMatrix, FeatureVector};
use crate::io::{parse_real, write_atomic};
use crate::scalar::{dot, norm_sq, Real};

pub const PCAW_MAGIC: &str = "PCAW1";

/// A fitted model together with the non-fatal conditions met while fitting.
#[derive(Debug, Clone)]
pub struct Fitted<M> {
    pub model: M,
    pub warnings: Vec<Warning>,
}

/// Unit-length copy of `v`; the zero vector is returned unchanged.
pub fn l2_normalize<T: Real>(v: &FeatureVector<T>) -> FeatureVector<T> {
    let norm = norm_sq(v).sqrt();
    if norm > T::zero() {
        FeatureVector::from_vec_unchecked(v.iter().map(|&x| x / norm).collect())
    } else {
        v.clone()
    }
}

/// Component-wise `sign(v) * |v|^p`.
pub fn signed_power<T: Real>(v: &FeatureVector<T>, p: f64) -> FeatureVector<T> {
    let p = T::of(p);
    FeatureVector::from_vec_unchecked(
        v.iter()
            .map(|&x| {
                if x == T::zero() {
                    x
                } else {
                    x.signum() * x.abs().powf(p)
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaWhitenModel<T> {
    mean: Vec<T>,
    components: Vec<Vec<T>>,
    eigenvalues: Vec<T>,
    epsilon: T,
}

impl<T: Real> PcaWhitenModel<T> {
    pub fn new(mean: Vec<T>, components: Vec<Vec<T>>, eigenvalues: Vec<T>, epsilon: T) -> Result<Self> {
        let d = mean.len();
        if d == 0 || components.is_empty() {
            return Err(Error::invalid("model needs a mean and at least one component"));
        }
        if components.len() != eigenvalues.len() || components.len() > d {
            return Err(Error::invalid(format!(
                "{} components, {} eigenvalues for input dimension {d}",
                components.len(),
                eigenvalues.len()
            )));
        }
        if let Some(c) = components.iter().find(|c| c.len() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                found: c.len(),
            });
        }
        let all_finite = mean
            .iter()
            .chain(components.iter().flatten())
            .chain(&eigenvalues)
            .all(|v| v.is_finite());
        if !all_finite || !epsilon.is_finite() || epsilon <= T::zero() {
            return Err(Error::invalid("non-finite model value or non-positive epsilon"));
        }
        if eigenvalues.iter().any(|&e| e < T::zero()) || eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("eigenvalues must be non-negative and non-increasing"));
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
            epsilon,
        })
    }

    /// Output dimension.
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<T>] {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Centers, projects onto the components and scales each coordinate by `1/sqrt(eigenvalue + epsilon)`.
    pub fn whiten(&self, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        v.check_dim(self.input_dim())?;
        let centered: Vec<T> = v.iter().zip(&self.mean).map(|(&x, &m)| x - m).collect();
        let out = self
            .components
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, &ev)| dot(&centered, c) / (ev + self.epsilon).sqrt())
            .collect();
        Ok(FeatureVector::from_vec_unchecked(out))
    }

    /// `PCAW1` text: header, `k d_in epsilon`, mean row, component rows, eigenvalue row.
    pub fn to_text(&self) -> String {
        let row = |values: &[T]| {
            values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("\t")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{PCAW_MAGIC}");
        let _ = writeln!(out, "{} {} {}", self.k(), self.input_dim(), self.epsilon);
        let _ = writeln!(out, "{}", row(&self.mean));
        for c in &self.components {
            let _ = writeln!(out, "{}", row(c));
        }
        let _ = writeln!(out, "{}", row(&self.eigenvalues));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::malformed(format!("PCAW1: missing {what}")))
        };
        if next("header")?.trim() != PCAW_MAGIC {
            return Err(Error::malformed("PCAW1: bad header"));
        }
        let dims: Vec<&str> = next("dimensions")?.split_whitespace().collect();
        if dims.len() != 3 {
            return Err(Error::malformed("PCAW1: expected `k d_in epsilon`"));
        }
        let k: usize = dims[0].parse().map_err(|_| Error::malformed("PCAW1: bad k"))?;
        let d: usize = dims[1].parse().map_err(|_| Error::malformed("PCAW1: bad d_in"))?;
        let epsilon = parse_real::<T>(dims[2])?;
        let parse_row = |line: &str, len: usize| -> Result<Vec<T>> {
            let row = line
                .split('\t')
                .map(parse_real::<T>)
                .collect::<Result<Vec<_>>>()?;
            if row.len() != len {
                return Err(Error::malformed(format!(
                    "PCAW1: row has {} values, expected {len}",
                    row.len()
                )));
            }
            Ok(row)
        };
        let mean = parse_row(next("mean")?, d)?;
        let components = (0..k)
            .map(|_| parse_row(next("component")?, d))
            .collect::<Result<Vec<_>>>()?;
        let eigenvalues = parse_row(next("eigenvalues")?, k)?;
        Self::new(mean, components, eigenvalues, epsilon).map_err(|e| Error::malformed(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Fits mean, top-`k` covariance eigenvectors (population `1/n` convention) and eigenvalues.
///
/// Statistics are accumulated in `f64` regardless of `T`. When `n < d` the
/// eigenproblem is solved on the `n x n` Gram matrix instead of the covariance.
/// Components are sign-normalized so their largest-magnitude entry is positive.
/// If fewer than `k` eigenvalues exceed `epsilon`, `k` is reduced with a
/// [`Warning::RankDeficient`].
pub fn pca_fit<T: Real>(x: &FeatureMatrix<T>, k: usize, epsilon: f64) -> Result<Fitted<PcaWhitenModel<T>>> {
    let (n, d) = (x.len(), x.dim());
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={} for n = {n}, d = {d}",
            (n - 1).min(d)
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be positive"));
    }

    let mut mean = vec![0.0f64; d];
    for row in x.rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::<f64>::from_fn(n, d, |i, j| x.rows()[i][j].as_f64() - mean[j]);

    let (values, vectors) = if d <= n {
        let cov = centered.transpose() * &centered / n as f64;
        top_eigen(cov, k)
    } else {
        let gram = &centered * centered.transpose() / n as f64;
        let (values, left) = top_eigen(gram, k);
        let vectors = values
            .iter()
            .zip(&left)
            .map(|(&ev, u)| {
                let u = nalgebra::DVector::from_column_slice(u);
                let v = centered.transpose() * u / (n as f64 * ev.max(f64::MIN_POSITIVE)).sqrt();
                v.as_slice().to_vec()
            })
            .collect::<Vec<_>>();
        (values, orthonormalize(vectors))
    };

    let kept = values.iter().take_while(|&&ev| ev > epsilon).count();
    if kept == 0 {
        return Err(Error::invalid("data has no variance above epsilon"));
    }
    let mut warnings = Vec::new();
    if kept < k {
        warnings.push(Warning::RankDeficient { requested: k, kept });
    }
    let components = vectors
        .into_iter()
        .take(kept)
        .map(|mut c| {
            let lead = c
                .iter()
                .copied()
                .fold((0.0f64, 0.0f64), |(best, val), v| {
                    if v.abs() > best {
                        (v.abs(), v)
                    } else {
                        (best, val)
                    }
                })
                .1;
            if lead < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c.into_iter().map(T::of).collect()
        })
        .collect();
    let model = PcaWhitenModel::new(
        mean.into_iter().map(T::of).collect(),
        components,
        values[..kept].iter().map(|&v| T::of(v.max(0.0))).collect(),
        T::of(epsilon),
    )?;
    Ok(Fitted { model, warnings })
}

/// Largest `k` eigenpairs of a symmetric matrix, eigenvalues non-increasing.
fn top_eigen(m: DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable sort on index keeps ties deterministic
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .unzip()
}

/// Two passes of modified Gram-Schmidt.
fn orthonormalize(mut vs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for _ in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let p: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, &y)| *x -= p * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
    vs
}

pub fn pca_whiten_apply<T: Real>(model: &PcaWhitenModel<T>, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
    model.whiten(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub pca_dim: usize,
    pub power: f64,
    pub epsilon: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pca_dim: 500,
            power: 2.0,
            epsilon: 1e-10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pca_dim == 0 {
            return Err(Error::invalid("pca_dim must be >= 1"));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::invalid("power must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Fits PCA + whitening on the L2-normalized rows of `x`.
///
/// `pca_dim` is clamped to `min(n - 1, d)` with a [`Warning::PcaClamped`].
pub fn retrieval_pipeline_fit<T: Real>(x: &FeatureMatrix<T>, cfg: &PipelineConfig) -> Result<Fitted<PcaWhitenModel<T>>> {
    cfg.validate()?;
    if x.len() < 2 {
        return Err(Error::invalid("pipeline fit needs at least two vectors"));
    }
    let limit = (x.len() - 1).min(x.dim());
    let k = cfg.pca_dim.min(limit);
    let normalized = FeatureMatrix::new(x.ids().to_vec(), x.rows().iter().map(l2_normalize).collect())?;
    let mut fitted = pca_fit(&normalized, k, cfg.epsilon)?;
    if k < cfg.pca_dim {
        fitted.warnings.insert(
            0,
            Warning::PcaClamped {
                requested: cfg.pca_dim,
                used: k,
            },
        );
    }
    Ok(fitted)
}

/// Intermediate values of one pass through the retrieval chain.
#[derive(Debug, Clone)]
pub struct PipelineTrace<T> {
    pub whitened: FeatureVector<T>,
    /// Renormalized vector, the input of the power step.
    pub renormalized: FeatureVector<T>,
    pub output: FeatureVector<T>,
}

pub fn retrieval_pipeline_trace<T: Real>(
    model: &PcaWhitenModel<T>,
    cfg: &PipelineConfig,
    v: &FeatureVector<T>,
) -> Result<PipelineTrace<T>> {
    let whitened = model.whiten(&l2_normalize(v))?;
    let renormalized = l2_normalize(&whitened);
    let output = signed_power(&renormalized, cfg.power);
    Ok(PipelineTrace {
        whitened,
        renormalized,
        output,
    })
}

pub fn retrieval_pipeline_apply<T: Real>(
    model: &PcaWhitenModel<T>,
    cfg: &PipelineConfig,
    v: &FeatureVector<T>,
) -> Result<FeatureVector<T>> {
    retrieval_pipeline_trace(model, cfg, v).map(|t| t.output)
}
