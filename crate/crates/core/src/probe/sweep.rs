use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{check_training_data, evaluate, fit_standardized, ProbeModel, StandardizationStats};
use super::solver::{lambda_max, TrainConfig};
use crate::dataset::{balance_classes, split_disjoint_colors, ColorSplit, DatasetManifest, SampleSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::softplus;
use crate::store::{ActivationKind, Dump};
use crate::Scalar;

/// Holdout-within-train choice of λ over `λ_max · 10^-k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSelection {
    /// Grid exponents `k`; 0 is the all-zero (intercept only) model.
    pub exponents: Vec<i32>,
    pub holdout_fraction: f64,
    /// Take the largest λ whose holdout log-loss is within one standard
    /// error of the best, instead of the best itself.
    pub one_std_err: bool,
}

impl Default for LambdaSelection {
    fn default() -> Self {
        LambdaSelection {
            exponents: (0..=5).collect(),
            holdout_fraction: 0.25,
            one_std_err: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaChoice<T> {
    Fixed(T),
    Auto(LambdaSelection),
}

impl<T> Default for LambdaChoice<T> {
    fn default() -> Self {
        LambdaChoice::Auto(LambdaSelection::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar"))]
pub struct SweepConfig<T> {
    pub split: ColorSplit,
    pub lambda: LambdaChoice<T>,
    pub train: TrainConfig<T>,
    pub seed: u64,
    /// Restrict to these layers / kinds; all when unset.
    pub layers: Option<Vec<usize>>,
    pub kinds: Option<Vec<ActivationKind>>,
}

impl<T: Scalar> Default for SweepConfig<T> {
    fn default() -> Self {
        SweepConfig {
            split: ColorSplit::default(),
            lambda: LambdaChoice::default(),
            train: TrainConfig::default(),
            seed: 0,
            layers: None,
            kinds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layer: usize,
    pub kind: ActivationKind,
    pub accuracy: f64,
    pub n_test: usize,
    pub lambda: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn get(&self, layer: usize, kind: ActivationKind) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.layer == layer && c.kind == kind)
    }

    /// Highest accuracy; ties go to the earliest (layer, kind).
    pub fn best(&self) -> Option<&SweepCell> {
        self.cells.iter().fold(None, |best: Option<&SweepCell>, c| match best {
            Some(b) if b.accuracy >= c.accuracy => Some(b),
            _ => Some(c),
        })
    }

    /// CSV with columns `layer,kind,accuracy,n_test`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "kind", "accuracy", "n_test"])?;
        for c in &self.cells {
            w.write_record([
                c.layer.to_string(),
                c.kind.name().to_string(),
                format!("{:.6}", c.accuracy),
                c.n_test.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn stratified_holdout(y: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::stream(seed, &[0x401D]);
    let mut fit = Vec::new();
    let mut hold = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut r);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        hold.extend_from_slice(&idx[..k]);
        fit.extend_from_slice(&idx[k..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    (fit, hold)
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Chooses the factor `10^-k` applied to `λ_max` by fitting on part of the
/// training data and scoring mean log-loss on the rest. The path is solved
/// from the largest λ down with warm starts.
pub fn select_lambda<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    sel: &LambdaSelection,
    cfg: &TrainConfig<T>,
    seed: u64,
) -> Result<T> {
    check_training_data(x, y)?;
    if sel.exponents.is_empty() || !(0.0..1.0).contains(&sel.holdout_fraction) {
        return Err(Error::Config("lambda selection needs exponents and a holdout fraction in (0, 1)".into()));
    }
    let (fit_idx, hold_idx) = stratified_holdout(y, sel.holdout_fraction, seed);
    let (xf, yf) = (x.select_rows(&fit_idx), pick(y, &fit_idx));
    let stats = StandardizationStats::fit(&xf)?;
    let xf = stats.apply(&xf)?;
    let xh = stats.apply(&x.select_rows(&hold_idx))?;
    let yh = pick(y, &hold_idx);
    let lmax = lambda_max(&xf, &yf)?;

    let mut ks = sel.exponents.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut scored: Vec<(i32, f64, f64)> = Vec::new();
    let mut warm: Option<(Vec<T>, T)> = None;
    for &k in &ks {
        let c = TrainConfig {
            lambda: lmax * T::of(10f64.powi(-k)),
            ..cfg.clone()
        };
        let m = fit_standardized(&xf, &yf, stats.clone(), &c, warm.as_ref().map(|(w, b)| (w.as_slice(), *b)))?;
        let losses: Vec<f64> = (0..xh.rows())
            .map(|i| {
                let z = super::matrix::dot(&m.weights, xh.row(i)) + m.bias;
                let yi = if yh[i] { T::one() } else { T::zero() };
                (softplus(z) - yi * z).as_f64()
            })
            .collect();
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        scored.push((k, mean, (var / n).sqrt()));
        warm = Some((m.weights, m.bias));
    }
    let best = scored
        .iter()
        .fold(scored[0], |b, s| if s.1 < b.1 { *s } else { b });
    let bound = if sel.one_std_err { best.1 + best.2 } else { best.1 };
    let chosen = scored
        .iter()
        .find(|s| s.1 <= bound)
        .expect("best satisfies its own bound");
    Ok(T::of(10f64.powi(-chosen.0)))
}

fn design<T: Scalar>(
    dump: &Dump,
    samples: &[&SampleSpec],
    layer: usize,
    kind: ActivationKind,
) -> Result<(Matrix<T>, Vec<bool>)> {
    let d = dump
        .d_model(kind)
        .ok_or_else(|| Error::Data(format!("cell (layer {layer}, {kind}) missing: dump has no {kind} activations")))?;
    let mut data = Vec::with_capacity(samples.len() * d);
    for s in samples {
        let v = dump.activation(&s.sample_id, layer, kind).map_err(|e| {
            Error::Data(format!("cell (layer {layer}, {kind}) sample {}: {e}", s.sample_id))
        })?;
        data.extend(v.iter().map(|&a| T::from_stored(a)));
    }
    let y = samples.iter().map(|s| s.conflict_label).collect();
    Ok((Matrix::new(samples.len(), d, data)?, y))
}

fn train_cell<T: Scalar>(
    dump: &Dump,
    train: &[&SampleSpec],
    test: &[&SampleSpec],
    layer: usize,
    kind: ActivationKind,
    cfg: &SweepConfig<T>,
) -> Result<(SweepCell, ProbeModel<T>)> {
    let (x, y) = design::<T>(dump, train, layer, kind)?;
    check_training_data(&x, &y)?;
    let stats = StandardizationStats::fit(&x)?;
    let xs = stats.apply(&x)?;
    let lambda = match &cfg.lambda {
        LambdaChoice::Fixed(l) => *l,
        LambdaChoice::Auto(sel) => {
            let seed = rng::derive(cfg.seed, &[layer as u64, kind as u64]);
            select_lambda(&x, &y, sel, &cfg.train, seed)? * lambda_max(&xs, &y)?
        }
    };
    let tc = TrainConfig {
        lambda,
        ..cfg.train.clone()
    };
    let fit = fit_standardized(&xs, &y, stats, &tc, None)?;
    let (xt, yt) = design::<T>(dump, test, layer, kind)?;
    let eval = evaluate(&fit, &xt, &yt)?;
    let cell = SweepCell {
        layer,
        kind,
        accuracy: eval.accuracy,
        n_test: eval.n(),
        lambda: lambda.as_f64(),
        nonzero: fit.nonzero(),
    };
    Ok((cell, ProbeModel { layer, kind, fit }))
}

/// Trains and evaluates one probe per (layer, kind) on the color-disjoint,
/// class-balanced split of `manifest`.
pub fn layerwise_sweep<T: Scalar>(
    dump: &Dump,
    manifest: &DatasetManifest,
    cfg: &SweepConfig<T>,
) -> Result<(SweepResult, Vec<ProbeModel<T>>)> {
    cfg.train.validate()?;
    let (train_m, test_m) = split_disjoint_colors(manifest, &cfg.split)?;
    let train_m = balance_classes(&train_m, cfg.seed);
    let test_m = balance_classes(&test_m, cfg.seed ^ 0x7E57);
    for s in train_m.samples.iter().chain(&test_m.samples) {
        if !dump.contains(&s.sample_id) {
            return Err(Error::Data(format!("sample {} is missing from the dump", s.sample_id)));
        }
    }
    if test_m.samples.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let train: Vec<&SampleSpec> = train_m.samples.iter().collect();
    let test: Vec<&SampleSpec> = test_m.samples.iter().collect();

    let layers: Vec<usize> = match &cfg.layers {
        Some(l) => l.clone(),
        None => (0..dump.n_layers()).collect(),
    };
    let kinds: BTreeSet<ActivationKind> = match &cfg.kinds {
        Some(k) => k.iter().copied().collect(),
        None => dump.kinds().collect(),
    };
    let cells: Vec<(usize, ActivationKind)> = layers
        .iter()
        .flat_map(|&l| kinds.iter().map(move |&k| (l, k)))
        .collect();
    for &(l, k) in &cells {
        if l >= dump.n_layers() || dump.d_model(k).is_none() {
            return Err(Error::Data(format!("cell (layer {l}, {k}) is not covered by the dump")));
        }
    }
    let results: Vec<(SweepCell, ProbeModel<T>)> = cells
        .par_iter()
        .map(|&(l, k)| train_cell(dump, &train, &test, l, k, cfg))
        .collect::<Result<_>>()?;
    let (cells, models) = results.into_iter().unzip();
    Ok((SweepResult { cells }, models))
}
