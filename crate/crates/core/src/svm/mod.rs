//! Linear SVM on the hinge-loss objective `1/2 |w|^2 + C * sum_i max(1 - y_i w.x_i, 0)`.
//!
//! The binary solver is dual coordinate descent with a maintained primal
//! weight vector. A bias is modelled as an extra constant-1 feature, so it is
//! regularized like every other weight.

mod multiclass;
mod persist;

pub use multiclass::{
    ovo_vote, predict_ovo, train_one_vs_all, train_one_vs_one, MulticlassModel, Strategy, SubModel,
    SubproblemKey,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::FeatureVector;
use crate::scalar::{axpy, dot, norm_sq, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value<T: Real>(self) -> T {
        match self {
            Sign::Positive => T::one(),
            Sign::Negative => -T::one(),
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    samples: Vec<(FeatureVector<T>, Sign)>,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(samples: Vec<(FeatureVector<T>, Sign)>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyInput("training set"))?;
        let dim = first.0.dim();
        for (x, _) in &samples {
            x.check_dim(dim)?;
        }
        Ok(Self { samples })
    }

    pub fn dim(&self) -> usize {
        self.samples[0].0.dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(FeatureVector<T>, Sign)] {
        &self.samples
    }

    fn columns(&self) -> (Vec<&[T]>, Vec<T>) {
        self.samples
            .iter()
            .map(|(x, y)| (x.as_slice(), y.value::<T>()))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub c: f64,
    /// Relative duality-gap threshold.
    pub tol: f64,
    pub max_epochs: usize,
    pub bias: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-8,
            max_epochs: 10_000,
            bias: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_c(c: f64) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel<T> {
    /// Weights; the last entry is the bias weight when `bias` is set.
    w: Vec<T>,
    bias: bool,
    c: T,
    objective: T,
}

impl<T: Real> BinaryModel<T> {
    pub fn new(w: Vec<T>, bias: bool, c: T, objective: T) -> Result<Self> {
        if w.len() <= usize::from(bias) {
            return Err(Error::invalid("weight vector too short"));
        }
        if w.iter().any(|v| !v.is_finite()) || !objective.is_finite() || !(c > T::zero()) {
            return Err(Error::invalid("non-finite weights or objective, or non-positive C"));
        }
        Ok(Self { w, bias, c, objective })
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn bias(&self) -> bool {
        self.bias
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn objective_value(&self) -> T {
        self.objective
    }

    /// Dimension of the inputs accepted by [`decision`](Self::decision).
    pub fn input_dim(&self) -> usize {
        self.w.len() - usize::from(self.bias)
    }

    /// `w.x`, plus the bias weight when enabled.
    pub fn decision(&self, x: &[T]) -> Result<T> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: x.len(),
            });
        }
        Ok(raw_decision(&self.w, self.bias, x))
    }
}

#[inline]
fn raw_decision<T: Real>(w: &[T], bias: bool, x: &[T]) -> T {
    let d = dot(&w[..x.len()], x);
    if bias {
        d + w[x.len()]
    } else {
        d
    }
}

/// Primal objective of `w` on `train`, including the bias weight if `w` carries one.
pub fn objective<T: Real>(w: &[T], train: &TrainingSet<T>, c: T) -> Result<T> {
    let d = train.dim();
    let bias = match w.len() {
        l if l == d => false,
        l if l == d + 1 => true,
        l => return Err(Error::DimMismatch { expected: d, found: l }),
    };
    let (xs, ys) = train.columns();
    Ok(primal(w, bias, &xs, &ys, c))
}

fn primal<T: Real>(w: &[T], bias: bool, xs: &[&[T]], ys: &[T], c: T) -> T {
    let loss: T = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| (T::one() - y * raw_decision(w, bias, x)).max(T::zero()))
        .sum();
    T::of(0.5) * norm_sq(w) + c * loss
}

/// Outcome of one binary solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub model: BinaryModel<T>,
    pub epochs: usize,
    pub converged: bool,
    pub duality_gap: T,
}

pub fn train_binary<T: Real>(train: &TrainingSet<T>, cfg: &SolverConfig) -> Result<Solution<T>> {
    let (xs, ys) = train.columns();
    solve(&xs, &ys, cfg)
}

/// Dual coordinate descent over `0 <= alpha_i <= C`.
///
/// Coordinates are visited in an order reshuffled every epoch from `cfg.seed`.
/// Stops once `primal - dual <= tol * (1 + |primal|)`, which bounds the
/// distance of the primal objective to the optimum by the same quantity.
pub(crate) fn solve<T: Real>(xs: &[&[T]], ys: &[T], cfg: &SolverConfig) -> Result<Solution<T>> {
    cfg.validate()?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let d = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::DimMismatch { expected: d, found: x.len() });
    }
    let has_pos = ys.iter().any(|&y| y > T::zero());
    let has_neg = ys.iter().any(|&y| y < T::zero());
    if !(has_pos && has_neg) {
        return Err(Error::SingleClassData);
    }

    let c = T::of(cfg.c);
    let tol = T::of(cfg.tol);
    let bias_sq = if cfg.bias { T::one() } else { T::zero() };
    let mut w = vec![T::zero(); d + usize::from(cfg.bias)];
    let mut alpha = vec![T::zero(); n];
    let diag: Vec<T> = xs.iter().map(|x| norm_sq(x) + bias_sq).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut epochs = 0;
    let mut converged = false;
    let mut gap = T::infinity();
    let mut primal_value = T::infinity();
    while epochs < cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = (xs[i], ys[i]);
            let g = y * raw_decision(&w, cfg.bias, x) - T::one();
            let a = alpha[i];
            let next = if diag[i] > T::zero() {
                (a - g / diag[i]).max(T::zero()).min(c)
            } else {
                // zero row: the dual is linear in alpha_i with slope 1
                c
            };
            if next != a {
                alpha[i] = next;
                let step = (next - a) * y;
                axpy(step, x, &mut w[..d]);
                if cfg.bias {
                    w[d] += step;
                }
            }
        }
        epochs += 1;

        primal_value = primal(&w, cfg.bias, xs, ys, c);
        let dual = alpha.iter().copied().sum::<T>() - T::of(0.5) * norm_sq(&w);
        gap = primal_value - dual;
        if gap <= tol * (T::one() + primal_value.abs()) {
            converged = true;
            break;
        }
    }
    let model = BinaryModel::new(w, cfg.bias, c, primal_value)
        .map_err(|e| Error::Invariant(format!("solver produced an invalid model: {e}")))?;
    Ok(Solution {
        model,
        epochs,
        converged,
        duality_gap: gap,
    })
}

pub fn decision<T: Real>(model: &BinaryModel<T>, x: &FeatureVector<T>) -> Result<T> {
    model.decision(x)
}
