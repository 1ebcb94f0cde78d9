//! Resolution confidence and its relationship to probe conflict strength.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::probe::ProbeModel;
use crate::store::{AlignedModality, Dump};
use crate::Scalar;

/// `p_image − p_text`, or `(p_image − p_text) / (p_image + p_text)` when
/// `renormalize` is set.
pub fn resolution_confidence<T: Scalar>(p_image: T, p_text: T, renormalize: bool) -> Result<T> {
    let unit = |p: T| p >= T::zero() && p <= T::one();
    if !unit(p_image) || !unit(p_text) || p_image + p_text > T::one() + T::of(1e-6) {
        return Err(Error::Argument(format!(
            "answer probabilities ({p_image}, {p_text}) must lie in [0, 1] and sum to at most 1"
        )));
    }
    let diff = p_image - p_text;
    if !renormalize {
        return Ok(diff);
    }
    let total = p_image + p_text;
    Ok(if total > T::zero() { diff / total } else { T::zero() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord<T> {
    pub sample_id: String,
    pub confidence: T,
    pub conflict_strength: T,
    pub aligned_modality: AlignedModality,
}

/// One record per conflict sample of `manifest`, with the strength supplied
/// by `strength(sample_id)`.
pub fn build_records_with<T: Scalar>(
    dump: &Dump,
    manifest: &DatasetManifest,
    renormalize: bool,
    mut strength: impl FnMut(&str) -> Result<T>,
) -> Result<Vec<ResolutionRecord<T>>> {
    manifest
        .samples
        .iter()
        .filter(|s| s.conflict_label)
        .map(|s| {
            let id = s.sample_id.as_str();
            let ans = dump
                .answer(id)
                .map_err(|e| Error::Data(format!("no answer record for sample {id}: {e}")))?;
            let confidence = resolution_confidence(
                T::from_stored(ans.p_image_answer),
                T::from_stored(ans.p_text_answer),
                renormalize,
            )?;
            Ok(ResolutionRecord {
                sample_id: id.to_string(),
                confidence,
                conflict_strength: strength(id)?,
                aligned_modality: ans.aligned_modality,
            })
        })
        .collect()
}

pub fn write_records_csv<T: Scalar, W: Write>(records: &[ResolutionRecord<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Scores every conflict sample with `probe` at the probe's own cell.
pub fn build_resolution_records<T: Scalar>(
    dump: &Dump,
    manifest: &DatasetManifest,
    probe: &ProbeModel<T>,
    renormalize: bool,
) -> Result<Vec<ResolutionRecord<T>>> {
    build_records_with(dump, manifest, renormalize, |id| {
        let act = dump.activation(id, probe.layer, probe.kind).map_err(|e| {
            Error::Data(format!(
                "no activation for sample {id} at (layer {}, {}): {e}",
                probe.layer, probe.kind
            ))
        })?;
        let x: Vec<T> = act.iter().map(|&v| T::from_stored(v)).collect();
        probe.fit.predict_proba(&x)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats<T> {
    pub lo: T,
    pub hi: T,
    pub count: usize,
    pub mean_strength: Option<T>,
    /// Unbiased; `None` below two records.
    pub var_strength: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedRelationship<T> {
    pub bins: Vec<BinStats<T>>,
}

/// Equal-width bin of `c` over [−1, 1]; bins are right-open except the last.
pub fn bin_index<T: Scalar>(c: T, n_bins: usize) -> usize {
    let width = T::of(2.0) / T::from_usize(n_bins).unwrap();
    let edge = |i: usize| -T::one() + width * T::from_usize(i).unwrap();
    let raw = ((c + T::one()) / width).floor().to_isize().unwrap_or(0);
    let mut i = raw.clamp(0, n_bins as isize - 1) as usize;
    if i + 1 < n_bins && c >= edge(i + 1) {
        i += 1;
    } else if i > 0 && c < edge(i) {
        i -= 1;
    }
    i
}

fn mean_var<T: Scalar>(v: &[T]) -> (Option<T>, Option<T>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = T::from_usize(v.len()).unwrap();
    let mean = v.iter().copied().sum::<T>() / n;
    if v.len() < 2 {
        return (Some(mean), None);
    }
    let ss: T = v.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (Some(mean), Some(ss / (n - T::one())))
}

pub fn binned_relationship<T: Scalar>(
    records: &[ResolutionRecord<T>],
    n_bins: usize,
) -> Result<BinnedRelationship<T>> {
    if n_bins < 2 {
        return Err(Error::Argument(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut members: Vec<Vec<T>> = vec![Vec::new(); n_bins];
    for r in records {
        members[bin_index(r.confidence, n_bins)].push(r.conflict_strength);
    }
    let width = T::of(2.0) / T::from_usize(n_bins).unwrap();
    let edge = |i: usize| -T::one() + width * T::from_usize(i).unwrap();
    let bins = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (mean, var) = mean_var(m);
            BinStats {
                lo: edge(i),
                hi: edge(i + 1),
                count: m.len(),
                mean_strength: mean,
                var_strength: var,
            }
        })
        .collect();
    Ok(BinnedRelationship { bins })
}

/// Strength statistics near zero confidence versus at the extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremeVsMiddle<T> {
    pub middle_count: usize,
    pub middle_mean: Option<T>,
    pub middle_var: Option<T>,
    pub extreme_count: usize,
    pub extreme_mean: Option<T>,
    pub extreme_var: Option<T>,
}

impl<T: Scalar> BinnedRelationship<T> {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "count", "mean_strength", "var_strength"])?;
        let opt = |v: Option<T>| v.map(|x| format!("{:.6}", x.as_f64())).unwrap_or_default();
        for b in &self.bins {
            w.write_record([
                format!("{:.3}", b.lo.as_f64()),
                format!("{:.3}", b.hi.as_f64()),
                b.count.to_string(),
                opt(b.mean_strength),
                opt(b.var_strength),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Compares the bin containing confidence 0 with the first and last bins
/// pooled. Pooled statistics are recomputed from the records, not averaged
/// across bins.
pub fn extreme_vs_middle<T: Scalar>(
    records: &[ResolutionRecord<T>],
    n_bins: usize,
) -> Result<ExtremeVsMiddle<T>> {
    if n_bins < 3 {
        return Err(Error::Argument("need at least 3 bins to separate middle from extremes".into()));
    }
    let mid = bin_index(T::zero(), n_bins);
    let mut middle = Vec::new();
    let mut extreme = Vec::new();
    for r in records {
        match bin_index(r.confidence, n_bins) {
            i if i == mid => middle.push(r.conflict_strength),
            i if i == 0 || i == n_bins - 1 => extreme.push(r.conflict_strength),
            _ => {}
        }
    }
    let (middle_mean, middle_var) = mean_var(&middle);
    let (extreme_mean, extreme_var) = mean_var(&extreme);
    Ok(ExtremeVsMiddle {
        middle_count: middle.len(),
        middle_mean,
        middle_var,
        extreme_count: extreme.len(),
        extreme_mean,
        extreme_var,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::Argument(format!(
            "Spearman correlation needs at least 3 paired values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Argument("correlation is undefined when all values tie".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ between |confidence| and conflict strength.
pub fn rank_correlation_abs_confidence<T: Scalar>(records: &[ResolutionRecord<T>]) -> Result<f64> {
    let a: Vec<f64> = records.iter().map(|r| r.confidence.abs().as_f64()).collect();
    let b: Vec<f64> = records.iter().map(|r| r.conflict_strength.as_f64()).collect();
    spearman(&a, &b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentTally {
    pub image: usize,
    pub text: usize,
    pub other: usize,
}

impl AlignmentTally {
    pub fn total(&self) -> usize {
        self.image + self.text + self.other
    }
}

/// Counts the model's aligned modality over the manifest's conflict samples.
pub fn alignment_tally(dump: &Dump, manifest: &DatasetManifest) -> Result<AlignmentTally> {
    let mut t = AlignmentTally::default();
    for s in manifest.samples.iter().filter(|s| s.conflict_label) {
        let a = dump
            .answer(&s.sample_id)
            .map_err(|e| Error::Data(format!("no answer record for sample {}: {e}", s.sample_id)))?;
        match a.aligned_modality {
            AlignedModality::Image => t.image += 1,
            AlignedModality::Text => t.text += 1,
            AlignedModality::Other => t.other += 1,
        }
    }
    Ok(t)
}
