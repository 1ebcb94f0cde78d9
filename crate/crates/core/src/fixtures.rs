//! Planted-signal dumps with known ground truth.
//!
//! Activations carry a label-dependent shift along a seeded unit direction
//! from the onset layer on. Attention weights get triangular per-layer
//! offsets on designated heads. Answer probabilities follow a confidence
//! drawn uniformly over [−1, 1], and each conflict sample gets a planted
//! strength whose mean and spread depend on |confidence|.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::HeadId;
use crate::dataset::{write_manifest, CaptionType, DatasetManifest, SampleSpec, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{ActivationKind, AlignedModality, AttentionWeights, DumpBuilder, DumpMeta};

pub const DUMP_DIR: &str = "dump";
pub const PLANTED_FILE: &str = "planted_strength.csv";
pub const CONFIG_FILE: &str = "fixture_config.json";

/// Offsets on a fixed set of heads over a window of layers centred on
/// `peak_layer`. The offset at layer `l` is
/// `amplitude · (1 − |l − peak| / (half_width + 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadPlant {
    pub heads: Vec<usize>,
    pub peak_layer: usize,
    pub half_width: usize,
    pub amplitude: f32,
}

impl HeadPlant {
    fn none(peak_layer: usize) -> HeadPlant {
        HeadPlant {
            heads: Vec::new(),
            peak_layer,
            half_width: 0,
            amplitude: 0.0,
        }
    }

    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.peak_layer.saturating_sub(self.half_width)..=self.peak_layer + self.half_width
    }

    /// Offset magnitude at `layer`, zero outside the window.
    pub fn profile(&self, layer: usize) -> f32 {
        let dist = layer.abs_diff(self.peak_layer);
        if dist > self.half_width {
            return 0.0;
        }
        self.amplitude * (1.0 - dist as f32 / (self.half_width + 1) as f32)
    }

    pub fn head_set(&self) -> BTreeSet<HeadId> {
        if self.amplitude == 0.0 {
            return BTreeSet::new();
        }
        self.layers()
            .flat_map(|layer| self.heads.iter().map(move |&head| HeadId { layer, head }))
            .collect()
    }

    fn offset(&self, layer: usize, head: usize) -> f32 {
        if self.heads.contains(&head) {
            self.profile(layer)
        } else {
            0.0
        }
    }
}

/// Planted strength as a function of |confidence|: constant below
/// `middle_below`, constant above `extreme_above`, linear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitModel {
    pub middle_mean: f64,
    pub middle_sd: f64,
    pub extreme_mean: f64,
    pub extreme_sd: f64,
    pub middle_below: f64,
    pub extreme_above: f64,
    /// Lower bound on `p_image + p_text`; the sum is `max(answer_mass, |c|)`.
    pub answer_mass: f64,
}

impl Default for LogitModel {
    fn default() -> Self {
        LogitModel {
            middle_mean: 0.9,
            middle_sd: 0.02,
            extreme_mean: 0.7,
            extreme_sd: 0.15,
            middle_below: 0.2,
            extreme_above: 0.8,
            answer_mass: 0.9,
        }
    }
}

impl LogitModel {
    pub fn flat() -> LogitModel {
        LogitModel {
            middle_mean: 0.8,
            middle_sd: 0.1,
            extreme_mean: 0.8,
            extreme_sd: 0.1,
            ..LogitModel::default()
        }
    }

    /// Mean and standard deviation of the planted strength at confidence `c`.
    pub fn strength_params(&self, c: f64) -> (f64, f64) {
        let a = c.abs();
        let t = ((a - self.middle_below) / (self.extreme_above - self.middle_below)).clamp(0.0, 1.0);
        (
            self.middle_mean + t * (self.extreme_mean - self.middle_mean),
            self.middle_sd + t * (self.extreme_sd - self.middle_sd),
        )
    }

    pub fn answer_probs(&self, c: f64) -> (f32, f32) {
        let total = self.answer_mass.max(c.abs()).min(1.0);
        (((total + c) / 2.0) as f32, ((total - c) / 2.0) as f32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSignalConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub signal_onset_layer: usize,
    pub signal_strength: f32,
    pub noise_sigma: f32,
    pub direction_seed: u64,
    pub seed: u64,
    /// Balanced subset size per class; `None` keeps every manifest sample.
    pub samples_per_class: Option<usize>,
    /// Mean and concentration `α + β` of the Beta base weights.
    pub text_base: (f64, f64),
    pub image_base: (f64, f64),
    pub detection: HeadPlant,
    pub resolution: HeadPlant,
    pub logit_model: LogitModel,
}

impl Default for PlantedSignalConfig {
    fn default() -> Self {
        PlantedSignalConfig {
            n_layers: 28,
            n_heads: 28,
            d_model: 128,
            signal_onset_layer: 10,
            signal_strength: 6.0,
            noise_sigma: 1.0,
            direction_seed: 0x5eed_d12e,
            seed: 0,
            samples_per_class: Some(2400),
            text_base: (0.1, 200.0),
            image_base: (0.5, 200.0),
            detection: HeadPlant {
                heads: vec![3, 7, 11, 19],
                peak_layer: 18,
                half_width: 2,
                amplitude: 0.1,
            },
            resolution: HeadPlant {
                heads: vec![5, 13, 17, 25],
                peak_layer: 22,
                half_width: 2,
                amplitude: 0.1,
            },
            logit_model: LogitModel::default(),
        }
    }
}

impl PlantedSignalConfig {
    /// No activation signal, no attention offsets, flat strength.
    pub fn null() -> PlantedSignalConfig {
        let d = PlantedSignalConfig::default();
        PlantedSignalConfig {
            signal_strength: 0.0,
            detection: HeadPlant::none(d.detection.peak_layer),
            resolution: HeadPlant::none(d.resolution.peak_layer),
            logit_model: LogitModel::flat(),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return bad("n_layers, n_heads and d_model must be positive".into());
        }
        if self.signal_onset_layer >= self.n_layers {
            return bad(format!(
                "signal_onset_layer {} must be below n_layers {}",
                self.signal_onset_layer, self.n_layers
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return bad(format!("signal_strength must be non-negative, got {}", self.signal_strength));
        }
        if self.samples_per_class == Some(0) {
            return bad("samples_per_class must be positive".into());
        }
        for (name, (mean, conc)) in [("text_base", self.text_base), ("image_base", self.image_base)] {
            if !(mean > 0.0 && mean < 1.0 && conc > 0.0) {
                return bad(format!("{name} needs a mean in (0, 1) and a positive concentration"));
            }
        }
        for (name, p) in [("detection", &self.detection), ("resolution", &self.resolution)] {
            if !(0.0..=1.0).contains(&p.amplitude) {
                return bad(format!("{name} amplitude {} outside [0, 1]", p.amplitude));
            }
            if let Some(&h) = p.heads.iter().find(|&&h| h >= self.n_heads) {
                return bad(format!("{name} head {h} >= n_heads {}", self.n_heads));
            }
            if !p.heads.is_empty() && (p.half_width > p.peak_layer || *p.layers().end() >= self.n_layers) {
                return bad(format!("{name} layer window {:?} leaves the model", p.layers()));
            }
        }
        let (det, res) = (self.detection.head_set(), self.resolution.head_set());
        if let Some(h) = det.intersection(&res).next() {
            return bad(format!(
                "detection and resolution heads overlap at (layer {}, head {})",
                h.layer, h.head
            ));
        }
        if !det.is_empty() && !res.is_empty() && self.detection.peak_layer >= self.resolution.peak_layer {
            return bad(format!(
                "detection peak {} must precede resolution peak {}",
                self.detection.peak_layer, self.resolution.peak_layer
            ));
        }
        let m = &self.logit_model;
        if !(m.middle_below < m.extreme_above && m.middle_sd >= 0.0 && m.extreme_sd >= 0.0) {
            return bad("logit_model needs middle_below < extreme_above and non-negative spreads".into());
        }
        if !(0.0..=1.0).contains(&m.answer_mass) {
            return bad(format!("answer_mass {} outside [0, 1]", m.answer_mass));
        }
        Ok(())
    }

    pub fn dump_meta(&self) -> DumpMeta {
        DumpMeta::new(self.n_layers, self.n_heads, self.d_model)
    }
}

/// Class-balanced subset of `manifest`, picked by a seeded hash of the id.
pub fn fixture_manifest(manifest: &DatasetManifest, cfg: &PlantedSignalConfig) -> Result<DatasetManifest> {
    let Some(per_class) = cfg.samples_per_class else {
        return Ok(manifest.clone());
    };
    let mut kept = BTreeSet::new();
    for label in [true, false] {
        let mut keyed: Vec<(u64, &str)> = manifest
            .samples
            .iter()
            .filter(|s| s.conflict_label == label)
            .map(|s| (rng::derive(cfg.seed, &[rng::hash_str(&s.sample_id)]), s.sample_id.as_str()))
            .collect();
        if keyed.len() < per_class {
            return Err(Error::Config(format!(
                "samples_per_class = {per_class} but the manifest has only {} {} samples",
                keyed.len(),
                if label { "conflict" } else { "control" }
            )));
        }
        keyed.sort_unstable();
        kept.extend(keyed[..per_class].iter().map(|&(_, id)| id));
    }
    let samples = manifest
        .samples
        .iter()
        .filter(|s| kept.contains(s.sample_id.as_str()))
        .cloned()
        .collect();
    Ok(manifest.with_samples(samples))
}

fn kind_index(kind: ActivationKind) -> u64 {
    ActivationKind::ALL.iter().position(|&k| k == kind).unwrap() as u64
}

/// Seeded unit direction for one (layer, kind) cell.
pub fn planted_direction(cfg: &PlantedSignalConfig, layer: usize, kind: ActivationKind) -> Vec<f32> {
    let mut r = rng::stream(cfg.direction_seed, &[layer as u64, kind_index(kind)]);
    let v: Vec<f64> = (0..cfg.d_model).map(|_| r.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

const ACTIVATION_STREAM: u64 = 1;
const ATTENTION_STREAM: u64 = 2;
const LOGIT_STREAM: u64 = 3;

fn sample_stream(cfg: &PlantedSignalConfig, id: &str, which: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(cfg.seed, &[rng::hash_str(id), which])
}

pub fn gen_activation_fixtures(
    manifest: &DatasetManifest,
    cfg: &PlantedSignalConfig,
    builder: &mut DumpBuilder,
) -> Result<()> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_sigma as f64).map_err(|e| Error::Config(e.to_string()))?;
    let shift = cfg.signal_strength * cfg.noise_sigma / 2.0;
    let directions: BTreeMap<(usize, ActivationKind), Vec<f32>> = (cfg.signal_onset_layer..cfg.n_layers)
        .flat_map(|l| ActivationKind::ALL.map(|k| ((l, k), planted_direction(cfg, l, k))))
        .collect();
    let mut v = vec![0.0f32; cfg.d_model];
    for s in &manifest.samples {
        let mut r = sample_stream(cfg, &s.sample_id, ACTIVATION_STREAM);
        let sign = if s.conflict_label { 1.0 } else { -1.0 };
        for layer in 0..cfg.n_layers {
            for kind in ActivationKind::ALL {
                for x in v.iter_mut() {
                    *x = noise.sample(&mut r) as f32;
                }
                if let Some(u) = directions.get(&(layer, kind)) {
                    for (x, ui) in v.iter_mut().zip(u) {
                        *x += sign * shift * ui;
                    }
                }
                builder.set_activation(&s.sample_id, layer, kind, &v)?;
            }
        }
    }
    Ok(())
}

/// How often planted offsets pushed a weight outside [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClipStats {
    pub offset_values: usize,
    pub clipped: usize,
}

impl ClipStats {
    pub fn fraction(&self) -> f64 {
        if self.offset_values == 0 {
            0.0
        } else {
            self.clipped as f64 / self.offset_values as f64
        }
    }
}

fn beta(mean_conc: (f64, f64)) -> Result<Beta<f64>> {
    let (m, k) = mean_conc;
    Beta::new(m * k, (1.0 - m) * k).map_err(|e| Error::Config(format!("Beta({m}, {k}): {e}")))
}

/// Aligned modality from a planted confidence.
fn aligned_from(c: f64) -> AlignedModality {
    if c > 0.0 {
        AlignedModality::Image
    } else if c < 0.0 {
        AlignedModality::Text
    } else {
        AlignedModality::Other
    }
}

/// Planted confidence of a conflict sample; controls have none.
pub fn planted_confidence(cfg: &PlantedSignalConfig, s: &SampleSpec) -> Option<f64> {
    s.conflict_label.then(|| {
        let mut r = sample_stream(cfg, &s.sample_id, LOGIT_STREAM);
        r.gen_range(-1.0..=1.0)
    })
}

/// Detection offsets split conflict from control samples, half each way.
/// Resolution offsets split image- from text-aligned conflict samples.
/// The text channel moves with the offset sign, the image channel against it.
pub fn gen_attention_fixtures(
    manifest: &DatasetManifest,
    cfg: &PlantedSignalConfig,
    builder: &mut DumpBuilder,
) -> Result<ClipStats> {
    cfg.validate()?;
    let (text_base, image_base) = (beta(cfg.text_base)?, beta(cfg.image_base)?);
    let mut stats = ClipStats::default();
    for s in &manifest.samples {
        let mut r = sample_stream(cfg, &s.sample_id, ATTENTION_STREAM);
        let det_sign = if s.conflict_label { 0.5 } else { -0.5 };
        let res_sign = match planted_confidence(cfg, s).map(aligned_from) {
            Some(AlignedModality::Image) => 0.5,
            Some(AlignedModality::Text) => -0.5,
            _ => 0.0,
        };
        let has_text = s.caption_type != CaptionType::NoColor;
        for layer in 0..cfg.n_layers {
            for head in 0..cfg.n_heads {
                let offset = det_sign * cfg.detection.offset(layer, head)
                    + res_sign * cfg.resolution.offset(layer, head);
                let t = text_base.sample(&mut r) as f32 + offset;
                let i = image_base.sample(&mut r) as f32 - offset;
                let tc = t.clamp(0.0, 1.0);
                let ic = i.clamp(0.0, 1.0 - tc);
                if offset != 0.0 {
                    stats.offset_values += 2;
                    stats.clipped += usize::from(tc != t) + usize::from(ic != i);
                }
                let w = AttentionWeights {
                    text: has_text.then_some(tc),
                    image: ic,
                };
                builder.set_attention(&s.sample_id, layer, head, w)?;
            }
        }
    }
    if stats.fraction() > 0.01 {
        log::warn!(
            "planted attention offsets were clipped in {:.2}% of offset weights",
            100.0 * stats.fraction()
        );
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStrength {
    pub sample_id: String,
    pub confidence: f64,
    pub strength: f64,
}

/// Answer records for every sample; planted strengths for conflict samples.
pub fn gen_logit_fixtures(
    manifest: &DatasetManifest,
    cfg: &PlantedSignalConfig,
    builder: &mut DumpBuilder,
) -> Result<Vec<PlantedStrength>> {
    cfg.validate()?;
    let m = &cfg.logit_model;
    let mut planted = Vec::new();
    for s in &manifest.samples {
        let Some(c) = planted_confidence(cfg, s) else {
            builder.set_answer(&s.sample_id, m.answer_mass as f32, 0.0, AlignedModality::Image)?;
            continue;
        };
        let mut r = sample_stream(cfg, &s.sample_id, LOGIT_STREAM);
        let _confidence: f64 = r.gen_range(-1.0..=1.0);
        let (mean, sd) = m.strength_params(c);
        let z: f64 = r.sample(StandardNormal);
        let strength = (mean + sd * z).clamp(0.0, 1.0);
        let (pi, pt) = m.answer_probs(c);
        builder.set_answer(&s.sample_id, pi, pt, aligned_from(c))?;
        planted.push(PlantedStrength {
            sample_id: s.sample_id.clone(),
            confidence: c,
            strength,
        });
    }
    planted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(planted)
}

pub struct Fixtures {
    pub manifest: DatasetManifest,
    pub builder: DumpBuilder,
    pub planted: Vec<PlantedStrength>,
    pub clip: ClipStats,
}

pub fn build_fixtures(manifest: &DatasetManifest, cfg: &PlantedSignalConfig) -> Result<Fixtures> {
    cfg.validate()?;
    let subset = fixture_manifest(manifest, cfg)?;
    let mut builder = DumpBuilder::new(
        cfg.dump_meta(),
        subset.samples.iter().map(|s| s.sample_id.clone()),
    )?;
    gen_activation_fixtures(&subset, cfg, &mut builder)?;
    let clip = gen_attention_fixtures(&subset, cfg, &mut builder)?;
    let planted = gen_logit_fixtures(&subset, cfg, &mut builder)?;
    Ok(Fixtures {
        manifest: subset,
        builder,
        planted,
        clip,
    })
}

pub fn write_planted_csv<W: Write>(planted: &[PlantedStrength], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in planted {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_planted_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<PlantedStrength>()
        .map(|p| p.map(|p| (p.sample_id, p.strength)).map_err(Error::from))
        .collect()
}

/// Writes `dump/`, the subset manifest, the planted strengths and the config
/// under `dir`.
pub fn write_fixtures(dir: &Path, fixtures: &Fixtures, cfg: &PlantedSignalConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fixtures.builder.write(&dir.join(DUMP_DIR))?;
    write_manifest(&dir.join(MANIFEST_FILE), &fixtures.manifest)?;
    let path = dir.join(PLANTED_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_planted_csv(&fixtures.planted, std::io::BufWriter::new(file))?;
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
