//! Proximal gradient for `(1/n) Σ logistic(yᵢ, w·xᵢ + b) + λ‖w‖₁` with an
//! unpenalized bias.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus};
use crate::Scalar;

/// Proximal operator of `t·|·|`.
pub fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    debug_assert!(t >= T::zero());
    let m = v.abs() - t;
    if m > T::zero() {
        m.copysign(v)
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `1/L` with `L = ‖[X 1]‖_F² / 4n`, an upper bound on the Lipschitz
    /// constant of the averaged logistic gradient.
    Fixed,
    /// Starts from a power-iteration estimate of the Lipschitz constant and
    /// doubles it until the sufficient-decrease condition holds.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar"))]
pub struct TrainConfig<T> {
    pub lambda: T,
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: T,
    pub step_policy: StepPolicy,
    /// Monotone FISTA momentum.
    pub accelerated: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            lambda: T::of(0.01),
            max_iters: 2000,
            tol: T::of(1e-7).max(T::epsilon() * T::of(8.0)),
            step_policy: StepPolicy::Backtracking,
            accelerated: true,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |v: T, strict: bool| v.is_nan() || v < T::zero() || (strict && v == T::zero());
        if bad(self.tol, true) || self.max_iters == 0 || bad(self.lambda, false) {
            return Err(Error::Config(format!(
                "invalid train config: lambda {} tol {} max_iters {}",
                self.lambda, self.tol, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad_w: Vec<T>,
    pub grad_b: T,
}

fn check_shapes<T: Scalar>(x: &Matrix<T>, y: &[bool], d: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Argument("empty design matrix".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Argument(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() != d {
        return Err(Error::Argument(format!(
            "{} columns but {d} weights",
            x.cols()
        )));
    }
    Ok(())
}

fn label<T: Scalar>(y: bool) -> T {
    if y {
        T::one()
    } else {
        T::zero()
    }
}

/// Mean logistic loss `(1/n) Σ [log(1 + e^{zᵢ}) − yᵢ zᵢ]` and its gradient.
pub fn logistic_loss_grad<T: Scalar>(
    w: &[T],
    b: T,
    x: &Matrix<T>,
    y: &[bool],
) -> Result<LossGrad<T>> {
    check_shapes(x, y, w.len())?;
    let mut z = vec![T::zero(); x.rows()];
    let (loss, resid) = loss_and_residual(x, y, w, b, &mut z);
    let n = T::from_usize(x.rows()).expect("row count");
    let mut grad_w = vec![T::zero(); w.len()];
    x.t_mul(&resid, &mut grad_w);
    grad_w.iter_mut().for_each(|g| *g = *g / n);
    let grad_b = resid.iter().copied().sum::<T>() / n;
    Ok(LossGrad { loss, grad_w, grad_b })
}

/// Returns the mean loss and the per-sample residuals `σ(zᵢ) − yᵢ`.
fn loss_and_residual<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    w: &[T],
    b: T,
    z: &mut [T],
) -> (T, Vec<T>) {
    x.affine(w, b, z);
    let n = T::from_usize(x.rows()).expect("row count");
    let mut loss = T::zero();
    let resid = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| {
            loss = loss + softplus(zi) - label::<T>(yi) * zi;
            sigmoid(zi) - label(yi)
        })
        .collect();
    (loss / n, resid)
}

fn smooth_loss<T: Scalar>(x: &Matrix<T>, y: &[bool], w: &[T], b: T, z: &mut [T]) -> T {
    x.affine(w, b, z);
    let s: T = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| softplus(zi) - label::<T>(yi) * zi)
        .sum();
    s / T::from_usize(x.rows()).expect("row count")
}

fn l1<T: Scalar>(w: &[T]) -> T {
    w.iter().map(|v| v.abs()).sum()
}

/// Penalized objective `loss + λ‖w‖₁`.
pub fn objective<T: Scalar>(w: &[T], b: T, x: &Matrix<T>, y: &[bool], lambda: T) -> Result<T> {
    check_shapes(x, y, w.len())?;
    let mut z = vec![T::zero(); x.rows()];
    Ok(smooth_loss(x, y, w, b, &mut z) + lambda * l1(w))
}

/// Smallest λ at which `w = 0` (with the bias at `logit(ȳ)`) is optimal:
/// `‖Xᵀ(ȳ·1 − y)‖_∞ / n`.
pub fn lambda_max<T: Scalar>(x: &Matrix<T>, y: &[bool]) -> Result<T> {
    check_shapes(x, y, x.cols())?;
    let n = T::from_usize(x.rows()).expect("row count");
    let ybar = y.iter().map(|&v| label::<T>(v)).sum::<T>() / n;
    let r: Vec<T> = y.iter().map(|&v| ybar - label::<T>(v)).collect();
    let mut g = vec![T::zero(); x.cols()];
    x.t_mul(&r, &mut g);
    Ok(g.iter().fold(T::zero(), |m, v| m.max(v.abs())) / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each iteration, starting with the initial point.
    pub history: Vec<T>,
}

impl<T: Scalar> SolveOutput<T> {
    pub fn objective(&self) -> T {
        *self.history.last().expect("history holds the start point")
    }
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration.
fn gram_spectral_norm<T: Scalar>(x: &Matrix<T>) -> T {
    let (n, d) = (x.rows(), x.cols());
    let nf = T::from_usize(n).expect("row count");
    let mut v = vec![T::one(); d + 1];
    let mut z = vec![T::zero(); n];
    let mut u = vec![T::zero(); d];
    let mut est = T::zero();
    for _ in 0..60 {
        let norm = dot(&v, &v).sqrt();
        if norm == T::zero() {
            break;
        }
        v.iter_mut().for_each(|a| *a = *a / norm);
        x.affine(&v[..d], v[d], &mut z);
        x.t_mul(&z, &mut u);
        let sum_z: T = z.iter().copied().sum();
        let next: Vec<T> = u.iter().copied().chain(std::iter::once(sum_z)).map(|a| a / nf).collect();
        est = dot(&next, &v);
        v = next;
    }
    est
}

/// Minimizes the penalized objective on a standardized design.
///
/// With [`StepPolicy::Backtracking`] or the fixed step, every accepted
/// iterate has an objective no larger than the previous one; the momentum
/// variant keeps this by falling back to the previous point whenever the
/// proximal step would increase the objective.
pub fn prox_grad<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    cfg: &TrainConfig<T>,
    warm_start: Option<(&[T], T)>,
) -> Result<SolveOutput<T>> {
    cfg.validate()?;
    check_shapes(x, y, x.cols())?;
    let (n, d) = (x.rows(), x.cols());
    let lambda = cfg.lambda;
    let four_n = T::of(4.0) * T::from_usize(n).expect("row count");
    let mut lip = match cfg.step_policy {
        StepPolicy::Fixed => {
            (x.as_slice().iter().map(|&v| v * v).sum::<T>() + T::from_usize(n).unwrap()) / four_n
        }
        StepPolicy::Backtracking => gram_spectral_norm(x) / T::of(4.0),
    };
    lip = lip.max(T::epsilon());

    let (mut w, mut b) = match warm_start {
        Some((w0, b0)) if w0.len() == d => (w0.to_vec(), b0),
        Some(_) => return Err(Error::Argument("warm start has the wrong length".into())),
        None => (vec![T::zero(); d], T::zero()),
    };
    let mut z = vec![T::zero(); n];
    let mut f_x = smooth_loss(x, y, &w, b, &mut z) + lambda * l1(&w);
    let mut history = vec![f_x];

    // Null model is optimal in closed form here.
    let positives = y.iter().filter(|&&v| v).count();
    if n > 0 && positives > 0 && positives < n && lambda >= lambda_max(x, y)? {
        let p = T::from_usize(positives).unwrap() / T::from_usize(n).unwrap();
        let b0 = (p / (T::one() - p)).ln();
        let w0 = vec![T::zero(); d];
        let f0 = smooth_loss(x, y, &w0, b0, &mut z);
        if f0 <= f_x {
            history.push(f0);
            return Ok(SolveOutput {
                weights: w0,
                bias: b0,
                iterations: 1,
                converged: true,
                history,
            });
        }
    }
    let (mut yw, mut yb) = (w.clone(), b);
    let mut t = T::one();
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_w = vec![T::zero(); d];
    let half = T::of(0.5);

    while iterations < cfg.max_iters {
        iterations += 1;
        let (f_y, resid) = loss_and_residual(x, y, &yw, yb, &mut z);
        x.t_mul(&resid, &mut grad_w);
        let nf = T::from_usize(n).unwrap();
        grad_w.iter_mut().for_each(|g| *g = *g / nf);
        let grad_b = resid.iter().copied().sum::<T>() / nf;

        let (cand_w, cand_b, f_cand) = loop {
            let step = T::one() / lip;
            let cw: Vec<T> = yw
                .iter()
                .zip(&grad_w)
                .map(|(&v, &g)| soft_threshold(v - step * g, lambda * step))
                .collect();
            let cb = yb - step * grad_b;
            let f_c = smooth_loss(x, y, &cw, cb, &mut z);
            if cfg.step_policy == StepPolicy::Fixed {
                break (cw, cb, f_c);
            }
            let diff: T = cw
                .iter()
                .zip(&yw)
                .zip(&grad_w)
                .map(|((&c, &v), &g)| (c - v) * g + half * lip * (c - v) * (c - v))
                .sum::<T>()
                + (cb - yb) * grad_b
                + half * lip * (cb - yb) * (cb - yb);
            let slack = T::epsilon() * T::of(16.0) * (T::one() + f_y.abs());
            if f_c <= f_y + diff + slack || lip > T::max_value() / T::of(4.0) {
                break (cw, cb, f_c);
            }
            lip = lip * T::of(2.0);
        };
        let big_f = f_cand + lambda * l1(&cand_w);
        let rel = (f_x - big_f).abs() / f_x.abs().max(T::epsilon());

        if cfg.accelerated {
            let t_next = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) * half;
            let accept = big_f <= f_x;
            let (nw, nb, nf_x) = if accept {
                (cand_w.clone(), cand_b, big_f)
            } else {
                (w.clone(), b, f_x)
            };
            let a = t / t_next;
            let c = (t - T::one()) / t_next;
            yw = nw
                .iter()
                .zip(&cand_w)
                .zip(&w)
                .map(|((&xn, &zc), &xo)| xn + a * (zc - xn) + c * (xn - xo))
                .collect();
            yb = nb + a * (cand_b - nb) + c * (nb - b);
            w = nw;
            b = nb;
            f_x = nf_x;
            t = t_next;
        } else {
            w = cand_w;
            b = cand_b;
            f_x = big_f;
            yw.clone_from(&w);
            yb = b;
        }
        history.push(f_x);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveOutput {
        weights: w,
        bias: b,
        iterations,
        converged,
        history,
    })
}
