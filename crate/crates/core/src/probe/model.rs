use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use super::solver::{prox_grad, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;
use crate::store::ActivationKind;
use crate::Scalar;

const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-scoring fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationStats<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Scalar> StandardizationStats<T> {
    /// Population mean and standard deviation per column, std floored at 1e-8.
    pub fn fit(x: &Matrix<T>) -> Result<StandardizationStats<T>> {
        if x.rows() == 0 {
            return Err(Error::Argument("cannot standardize an empty matrix".into()));
        }
        let n = T::from_usize(x.rows()).unwrap();
        let d = x.cols();
        let mut means = vec![T::zero(); d];
        for i in 0..x.rows() {
            for (m, &v) in means.iter_mut().zip(x.row(i)) {
                *m = *m + v;
            }
        }
        means.iter_mut().for_each(|m| *m = *m / n);
        let mut vars = vec![T::zero(); d];
        for i in 0..x.rows() {
            for ((s, &v), &m) in vars.iter_mut().zip(x.row(i)).zip(&means) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let floor = T::of(STD_FLOOR);
        let stds = vars.into_iter().map(|s| (s / n).sqrt().max(floor)).collect();
        Ok(StandardizationStats { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, row: &[T], out: &mut [T]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(row).zip(&self.means).zip(&self.stds) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.dim() {
            return Err(Error::Argument(format!(
                "expected {} features, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row = x.row(i);
            self.apply_row(row, out.row_mut(i));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta<T> {
    pub iterations: usize,
    pub final_objective: T,
    pub converged: bool,
}

/// Fitted lasso-logistic classifier on raw (unstandardized) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoLogistic<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub lambda: T,
    pub stats: StandardizationStats<T>,
    pub train_meta: TrainMeta<T>,
}

impl<T: Scalar> LassoLogistic<T> {
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != T::zero()).count()
    }

    pub fn decision(&self, x: &[T]) -> Result<T> {
        if x.len() != self.weights.len() {
            return Err(Error::Argument(format!(
                "probe expects {} features, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        let mut z = vec![T::zero(); x.len()];
        self.stats.apply_row(x, &mut z);
        Ok(dot(&self.weights, &z) + self.bias)
    }

    pub fn predict_proba(&self, x: &[T]) -> Result<T> {
        Ok(sigmoid(self.decision(x)?))
    }

    /// Converts weights and statistics to another precision.
    pub fn cast<U: Scalar>(&self) -> LassoLogistic<U> {
        let c = |v: &T| U::of(v.as_f64());
        LassoLogistic {
            weights: self.weights.iter().map(c).collect(),
            bias: c(&self.bias),
            lambda: c(&self.lambda),
            stats: StandardizationStats {
                means: self.stats.means.iter().map(c).collect(),
                stds: self.stats.stds.iter().map(c).collect(),
            },
            train_meta: TrainMeta {
                iterations: self.train_meta.iterations,
                final_objective: c(&self.train_meta.final_objective),
                converged: self.train_meta.converged,
            },
        }
    }
}

/// Probe trained on one (layer, activation kind) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel<T> {
    pub layer: usize,
    pub kind: ActivationKind,
    #[serde(flatten)]
    pub fit: LassoLogistic<T>,
}

impl<T: Scalar> ProbeModel<T> {
    pub fn file_name(layer: usize, kind: ActivationKind) -> String {
        format!("probe_{layer}_{}.json", kind.name())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::file_name(self.layer, self.kind));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<ProbeModel<T>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ProbeModel<T> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.fit.weights.len() != m.fit.stats.dim() || m.fit.stats.stds.len() != m.fit.stats.dim() {
            return Err(Error::Data(format!(
                "{}: weights and standardization statistics disagree in length",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> ProbeModel<U> {
        ProbeModel {
            layer: self.layer,
            kind: self.kind,
            fit: self.fit.cast(),
        }
    }
}

/// Standardizes `x` on its own statistics and fits the penalized model.
pub fn train_lasso_logistic<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &TrainConfig<T>,
) -> Result<LassoLogistic<T>> {
    fit_with_warm_start(x, y, cfg, None)
}

pub(crate) fn fit_with_warm_start<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &TrainConfig<T>,
    warm: Option<(&[T], T)>,
) -> Result<LassoLogistic<T>> {
    check_training_data(x, y)?;
    let stats = StandardizationStats::fit(x)?;
    let xs = stats.apply(x)?;
    fit_standardized(&xs, y, stats, cfg, warm)
}

pub(crate) fn check_training_data<T: Scalar>(x: &Matrix<T>, y: &[bool]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Argument(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::Training(format!("need at least 2 samples, got {}", x.rows())));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite feature at row {}, column {}",
            i / x.cols().max(1),
            i % x.cols().max(1)
        )));
    }
    Ok(())
}

pub(crate) fn fit_standardized<T: Scalar>(
    xs: &Matrix<T>,
    y: &[bool],
    stats: StandardizationStats<T>,
    cfg: &TrainConfig<T>,
    warm: Option<(&[T], T)>,
) -> Result<LassoLogistic<T>> {
    let out = prox_grad(xs, y, cfg, warm)?;
    Ok(LassoLogistic {
        train_meta: TrainMeta {
            iterations: out.iterations,
            final_objective: out.objective(),
            converged: out.converged,
        },
        weights: out.weights,
        bias: out.bias,
        lambda: cfg.lambda,
        stats,
    })
}

pub fn predict_proba<T: Scalar>(model: &ProbeModel<T>, x: &[T]) -> Result<T> {
    model.fit.predict_proba(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Evaluation {
    pub fn n(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// Accuracy at threshold 0.5 (a probability of exactly 0.5 predicts conflict).
pub fn evaluate<T: Scalar>(fit: &LassoLogistic<T>, x: &Matrix<T>, y: &[bool]) -> Result<Evaluation> {
    if x.rows() == 0 {
        return Err(Error::Argument("empty test set".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Argument(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    let mut e = Evaluation {
        accuracy: 0.0,
        true_pos: 0,
        true_neg: 0,
        false_pos: 0,
        false_neg: 0,
    };
    let half = T::of(0.5);
    for (i, &truth) in y.iter().enumerate() {
        let pred = fit.predict_proba(x.row(i))? >= half;
        match (pred, truth) {
            (true, true) => e.true_pos += 1,
            (false, false) => e.true_neg += 1,
            (true, false) => e.false_pos += 1,
            (false, true) => e.false_neg += 1,
        }
    }
    e.accuracy = (e.true_pos + e.true_neg) as f64 / y.len() as f64;
    Ok(e)
}
