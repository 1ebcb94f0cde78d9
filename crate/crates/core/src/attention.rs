//! Group-based attention differencing per (layer, head).

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::store::{AlignedModality, AttentionWeights, Dump};
use crate::Scalar;

pub const DEFAULT_TOP_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Conflict vs. no-conflict samples.
    Detection,
    /// Image-aligned vs. text-aligned conflict samples.
    Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Text,
    Image,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Text => "text",
            Channel::Image => "image",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub comparison: Comparison,
    pub a: BTreeSet<String>,
    pub b: BTreeSet<String>,
}

impl GroupSpec {
    pub fn new(
        name: impl Into<String>,
        comparison: Comparison,
        a: BTreeSet<String>,
        b: BTreeSet<String>,
    ) -> Result<GroupSpec> {
        let g = GroupSpec {
            name: name.into(),
            comparison,
            a,
            b,
        };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::Argument(format!(
                "group `{}` has an empty side ({} vs {} samples)",
                self.name,
                self.a.len(),
                self.b.len()
            )));
        }
        if let Some(id) = self.a.intersection(&self.b).next() {
            return Err(Error::Argument(format!(
                "group `{}`: sample {id} is on both sides",
                self.name
            )));
        }
        Ok(())
    }

    /// Also checks that resolution groups hold only conflict samples.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        self.check()?;
        for id in self.a.iter().chain(&self.b) {
            let s = manifest.get(id).ok_or_else(|| {
                Error::Data(format!("group `{}`: sample {id} is not in the manifest", self.name))
            })?;
            if self.comparison == Comparison::Resolution && !s.conflict_label {
                return Err(Error::Argument(format!(
                    "group `{}`: sample {id} is not a conflict sample",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Conflict samples (A) against every other sample (B).
pub fn detection_groups(manifest: &DatasetManifest) -> Result<GroupSpec> {
    let (a, b): (Vec<_>, Vec<_>) = manifest.samples.iter().partition(|s| s.conflict_label);
    GroupSpec::new(
        "detection",
        Comparison::Detection,
        a.into_iter().map(|s| s.sample_id.clone()).collect(),
        b.into_iter().map(|s| s.sample_id.clone()).collect(),
    )
}

/// Image-aligned (A) against text-aligned (B) conflict samples; samples
/// aligned with neither are left out.
pub fn resolution_groups(dump: &Dump, manifest: &DatasetManifest) -> Result<GroupSpec> {
    let mut a = BTreeSet::new();
    let mut b = BTreeSet::new();
    for s in manifest.samples.iter().filter(|s| s.conflict_label) {
        let ans = dump
            .answer(&s.sample_id)
            .map_err(|e| Error::Data(format!("no answer record for sample {}: {e}", s.sample_id)))?;
        match ans.aligned_modality {
            AlignedModality::Image => a.insert(s.sample_id.clone()),
            AlignedModality::Text => b.insert(s.sample_id.clone()),
            AlignedModality::Other => false,
        };
    }
    GroupSpec::new("resolution", Comparison::Resolution, a, b)
}

/// Per-(layer, head) group means, `[layer][head]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPattern<T> {
    pub n_layers: usize,
    pub n_heads: usize,
    /// `None` when no member has a text color token.
    pub text: Option<Vec<T>>,
    pub image: Vec<T>,
    pub n_text: usize,
    pub n_image: usize,
}

fn load_grid(dump: &Dump, id: &str) -> Result<Vec<AttentionWeights>> {
    dump.attention_grid(id)
        .map_err(|e| Error::Data(format!("missing attention records for sample {id}: {e}")))
}

fn mean_of_grids<'a, T: Scalar>(
    n_layers: usize,
    n_heads: usize,
    grids: impl IntoIterator<Item = &'a [AttentionWeights]>,
) -> Result<MeanPattern<T>> {
    let cells = n_layers * n_heads;
    let mut text = vec![0.0f64; cells];
    let mut image = vec![0.0f64; cells];
    let (mut n_text, mut n_image) = (0usize, 0usize);
    for g in grids {
        if g.len() != cells {
            return Err(Error::Data(format!(
                "attention grid has {} cells, expected {cells}",
                g.len()
            )));
        }
        if g[0].text.is_some() {
            n_text += 1;
            for (acc, w) in text.iter_mut().zip(g) {
                *acc += w.text.unwrap_or(0.0) as f64;
            }
        }
        n_image += 1;
        for (acc, w) in image.iter_mut().zip(g) {
            *acc += w.image as f64;
        }
    }
    if n_image == 0 {
        return Err(Error::Argument("cannot average an empty group".into()));
    }
    let scale = |v: Vec<f64>, n: usize| v.into_iter().map(|x| T::of(x / n as f64)).collect();
    Ok(MeanPattern {
        n_layers,
        n_heads,
        text: (n_text > 0).then(|| scale(text, n_text)),
        image: scale(image, n_image),
        n_text,
        n_image,
    })
}

pub fn group_mean_pattern<T: Scalar, S: AsRef<str>>(
    dump: &Dump,
    sample_ids: impl IntoIterator<Item = S>,
) -> Result<MeanPattern<T>> {
    let grids = sample_ids
        .into_iter()
        .map(|id| load_grid(dump, id.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    mean_of_grids(dump.n_layers(), dump.n_heads(), grids.iter().map(|g| g.as_slice()))
}

/// Absolute differences of two group means per (layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDeltaTable<T> {
    pub n_layers: usize,
    pub n_heads: usize,
    pub text: Option<Vec<T>>,
    pub image: Vec<T>,
}

pub fn pattern_delta<T: Scalar>(a: &MeanPattern<T>, b: &MeanPattern<T>) -> Result<HeadDeltaTable<T>> {
    if (a.n_layers, a.n_heads) != (b.n_layers, b.n_heads) {
        return Err(Error::Argument(format!(
            "attention grids differ: {}x{} vs {}x{}",
            a.n_layers, a.n_heads, b.n_layers, b.n_heads
        )));
    }
    let abs_diff = |x: &[T], y: &[T]| x.iter().zip(y).map(|(&p, &q)| (p - q).abs()).collect();
    Ok(HeadDeltaTable {
        n_layers: a.n_layers,
        n_heads: a.n_heads,
        text: match (&a.text, &b.text) {
            (Some(x), Some(y)) => Some(abs_diff(x, y)),
            _ => None,
        },
        image: abs_diff(&a.image, &b.image),
    })
}

impl<T: Scalar> HeadDeltaTable<T> {
    pub fn channel(&self, channel: Channel) -> Result<&[T]> {
        match channel {
            Channel::Image => Ok(&self.image),
            Channel::Text => self.text.as_deref().ok_or_else(|| {
                Error::Argument("text channel is absent from one of the groups".into())
            }),
        }
    }

    pub fn get(&self, layer: usize, head: usize, channel: Channel) -> Result<T> {
        Ok(self.channel(channel)?[layer * self.n_heads + head])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "head", "delta_text", "delta_image"])?;
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                let i = l * self.n_heads + h;
                let text = self
                    .text
                    .as_ref()
                    .map(|t| format!("{:.6}", t[i].as_f64()))
                    .unwrap_or_default();
                w.write_record([
                    l.to_string(),
                    h.to_string(),
                    text,
                    format!("{:.6}", self.image[i].as_f64()),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Head-summed deltas per layer with their dispersion across samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerProfile<T> {
    pub channel: Channel,
    pub values: Vec<T>,
    pub dispersion: Vec<T>,
}

impl<T: Scalar> LayerProfile<T> {
    pub fn argmax(&self) -> Option<usize> {
        first_argmax(&self.values)
    }
}

/// Everything derived from one group comparison.
#[derive(Debug, Clone)]
pub struct AttentionDiff<T> {
    pub group: String,
    pub comparison: Comparison,
    pub delta: HeadDeltaTable<T>,
    pub text: Option<LayerProfile<T>>,
    pub image: LayerProfile<T>,
}

impl<T: Scalar> AttentionDiff<T> {
    pub fn profile(&self, channel: Channel) -> Result<&LayerProfile<T>> {
        match channel {
            Channel::Image => Ok(&self.image),
            Channel::Text => self
                .text
                .as_ref()
                .ok_or_else(|| Error::Argument(format!("group `{}` has no text channel", self.group))),
        }
    }

    /// Columns: layer, text, text_sd, image, image_sd.
    pub fn write_profile_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "text", "text_sd", "image", "image_sd"])?;
        let f = |v: T| format!("{:.6}", v.as_f64());
        for l in 0..self.image.values.len() {
            let (t, tsd) = match &self.text {
                Some(p) => (f(p.values[l]), f(p.dispersion[l])),
                None => (String::new(), String::new()),
            };
            w.write_record([
                l.to_string(),
                t,
                tsd,
                f(self.image.values[l]),
                f(self.image.dispersion[l]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Per layer and sample: the head-summed deviation from the sample's group
/// mean; the standard deviation of these over both groups is the dispersion.
fn dispersion<T: Scalar>(
    groups: [(&[Vec<AttentionWeights>], &[T]); 2],
    n_layers: usize,
    n_heads: usize,
    channel: Channel,
) -> Vec<T> {
    (0..n_layers)
        .map(|l| {
            let mut contrib = Vec::new();
            for (grids, mean) in groups {
                for g in grids {
                    let mut s = 0.0;
                    for h in 0..n_heads {
                        let i = l * n_heads + h;
                        let x = match channel {
                            Channel::Text => match g[i].text {
                                Some(t) => t as f64,
                                None => break,
                            },
                            Channel::Image => g[i].image as f64,
                        };
                        s += x - mean[i].as_f64();
                    }
                    if channel == Channel::Image || g[0].text.is_some() {
                        contrib.push(s);
                    }
                }
            }
            T::of(std_dev(&contrib))
        })
        .collect()
}

fn profile_of<T: Scalar>(delta: &[T], n_layers: usize, n_heads: usize) -> Vec<T> {
    (0..n_layers)
        .map(|l| delta[l * n_heads..(l + 1) * n_heads].iter().copied().sum())
        .collect()
}

pub fn attention_diff<T: Scalar>(dump: &Dump, group: &GroupSpec) -> Result<AttentionDiff<T>> {
    group.check()?;
    let (nl, nh) = (dump.n_layers(), dump.n_heads());
    let load = |ids: &BTreeSet<String>| -> Result<Vec<Vec<AttentionWeights>>> {
        ids.iter().map(|id| load_grid(dump, id)).collect()
    };
    let (ga, gb) = (load(&group.a)?, load(&group.b)?);
    let ma: MeanPattern<T> = mean_of_grids(nl, nh, ga.iter().map(|g| g.as_slice()))?;
    let mb: MeanPattern<T> = mean_of_grids(nl, nh, gb.iter().map(|g| g.as_slice()))?;
    let delta = pattern_delta(&ma, &mb)?;
    let text = match (&delta.text, &ma.text, &mb.text) {
        (Some(d), Some(ta), Some(tb)) => Some(LayerProfile {
            channel: Channel::Text,
            values: profile_of(d, nl, nh),
            dispersion: dispersion([(&ga, ta), (&gb, tb)], nl, nh, Channel::Text),
        }),
        _ => None,
    };
    let image = LayerProfile {
        channel: Channel::Image,
        values: profile_of(&delta.image, nl, nh),
        dispersion: dispersion([(&ga, &ma.image), (&gb, &mb.image)], nl, nh, Channel::Image),
    };
    Ok(AttentionDiff {
        group: group.name.clone(),
        comparison: group.comparison,
        delta,
        text,
        image,
    })
}

pub fn layer_profile<T: Scalar>(dump: &Dump, group: &GroupSpec, channel: Channel) -> Result<LayerProfile<T>> {
    attention_diff(dump, group)?.profile(channel).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

/// The `k` largest deltas on `channel`; ties go to the lower (layer, head).
pub fn top_k_heads<T: Scalar>(delta: &HeadDeltaTable<T>, k: usize, channel: Channel) -> Result<Vec<HeadId>> {
    let total = delta.n_layers * delta.n_heads;
    if k == 0 || k > total {
        return Err(Error::Argument(format!("k must be in 1..={total}, got {k}")));
    }
    let values = delta.channel(channel)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
    Ok(order[..k]
        .iter()
        .map(|&i| HeadId {
            layer: i / delta.n_heads,
            head: i % delta.n_heads,
        })
        .collect())
}

/// Jaccard index `|A∩B| / |A∪B|`.
pub fn head_set_overlap(a: &[HeadId], b: &[HeadId]) -> Result<f64> {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return Err(Error::Argument("overlap of two empty head sets is undefined".into()));
    }
    Ok(a.intersection(&b).count() as f64 / union as f64)
}

fn first_argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakOrdering {
    pub detection_peak: usize,
    pub resolution_peak: usize,
    pub detection_precedes: bool,
}

pub fn peak_layer_ordering<T: Scalar>(detection: &[T], resolution: &[T]) -> Result<PeakOrdering> {
    if detection.len() != resolution.len() || detection.is_empty() {
        return Err(Error::Argument(format!(
            "profiles must be non-empty and of equal length ({} vs {})",
            detection.len(),
            resolution.len()
        )));
    }
    let d = first_argmax(detection).unwrap();
    let r = first_argmax(resolution).unwrap();
    Ok(PeakOrdering {
        detection_peak: d,
        resolution_peak: r,
        detection_precedes: d < r,
    })
}

pub fn write_heads_csv<T: Scalar, W: Write>(
    heads: &[HeadId],
    delta: &HeadDeltaTable<T>,
    channel: Channel,
    out: W,
) -> Result<()> {
    let values = delta.channel(channel)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "layer", "head", "delta"])?;
    for (r, h) in heads.iter().enumerate() {
        w.write_record([
            (r + 1).to_string(),
            h.layer.to_string(),
            h.head.to_string(),
            format!("{:.6}", values[h.layer * delta.n_heads + h.head].as_f64()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
