use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ActivationKind, ActivationRecord, AlignedModality, AnswerProbRecord, AttentionRecord,
    AttentionWeights,
};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";
pub(crate) const ATTENTION_STREAM: &str = "attention";
pub(crate) const ANSWERS_STREAM: &str = "answers";

pub(crate) fn activation_stream(kind: ActivationKind) -> String {
    format!("activations/{}", kind.name())
}

/// Location of one record stream inside `blobs/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub stream: String,
    /// Relative to the dump directory.
    pub path: String,
    /// Byte offset and length inside `path`.
    pub offset: u64,
    pub length: u64,
    /// Row-major element shape; the product times 4 equals `length`.
    pub shape: Vec<usize>,
}

impl BlobRef {
    pub fn n_elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Contents of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpIndex {
    pub format_version: u32,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: BTreeMap<ActivationKind, usize>,
    pub sample_ids: Vec<String>,
    /// Which token the activations were taken at, as chosen by the producer.
    pub token_position_policy: String,
    /// Samples whose caption has no color token.
    #[serde(default)]
    pub text_channel_absent: Vec<String>,
    pub blobs: Vec<BlobRef>,
}

impl DumpIndex {
    pub fn blob(&self, stream: &str) -> Option<&BlobRef> {
        self.blobs.iter().find(|b| b.stream == stream)
    }

    /// Shape each declared stream must have.
    pub(crate) fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let n = self.sample_ids.len();
        let mut out: Vec<(String, Vec<usize>)> = self
            .d_model
            .iter()
            .map(|(&k, &d)| (activation_stream(k), vec![n, self.n_layers, d]))
            .collect();
        if self.n_heads > 0 {
            out.push((ATTENTION_STREAM.into(), vec![n, self.n_layers, self.n_heads, 2]));
        }
        if self.blob(ANSWERS_STREAM).is_some() {
            out.push((ANSWERS_STREAM.into(), vec![n, 3]));
        }
        out
    }
}

/// Dimensions declared before any record is written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpMeta {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: BTreeMap<ActivationKind, usize>,
    pub token_position_policy: String,
    pub with_answers: bool,
}

impl DumpMeta {
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize) -> DumpMeta {
        DumpMeta {
            n_layers,
            n_heads,
            d_model: ActivationKind::ALL.iter().map(|&k| (k, d_model)).collect(),
            token_position_policy: "last_prompt_token".into(),
            with_answers: true,
        }
    }
}

/// Dense in-memory dump under construction. Every slot must be filled
/// before [`DumpBuilder::write`].
#[derive(Debug, Clone)]
pub struct DumpBuilder {
    meta: DumpMeta,
    sample_ids: Vec<String>,
    pos: HashMap<String, usize>,
    activations: BTreeMap<ActivationKind, Vec<f32>>,
    attention: Vec<f32>,
    answers: Vec<f32>,
    /// Per sample: `Some(true)` once a record without text channel is seen.
    text_state: Vec<Option<bool>>,
    filled: BTreeMap<String, Vec<bool>>,
}

impl DumpBuilder {
    /// Sample ids are sorted; duplicates are a schema error.
    pub fn new(meta: DumpMeta, sample_ids: impl IntoIterator<Item = String>) -> Result<DumpBuilder> {
        let mut ids: Vec<String> = sample_ids.into_iter().collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("duplicate sample_id {}", w[0])));
        }
        let n = ids.len();
        let pos = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut filled = BTreeMap::new();
        let mut activations = BTreeMap::new();
        for (&k, &d) in &meta.d_model {
            activations.insert(k, vec![0.0; n * meta.n_layers * d]);
            filled.insert(activation_stream(k), vec![false; n * meta.n_layers]);
        }
        filled.insert(ATTENTION_STREAM.into(), vec![false; n * meta.n_layers * meta.n_heads]);
        if meta.with_answers {
            filled.insert(ANSWERS_STREAM.into(), vec![false; n]);
        }
        Ok(DumpBuilder {
            attention: vec![0.0; n * meta.n_layers * meta.n_heads * 2],
            answers: vec![0.0; if meta.with_answers { n * 3 } else { 0 }],
            meta,
            sample_ids: ids,
            pos,
            activations,
            text_state: vec![None; n],
            filled,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn meta(&self) -> &DumpMeta {
        &self.meta
    }

    fn index_of(&self, sample_id: &str) -> Result<usize> {
        self.pos
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::Schema(format!("sample {sample_id} is not declared in the dump")))
    }

    fn mark(&mut self, stream: &str, slot: usize, what: impl Fn() -> String) -> Result<()> {
        let flags = self
            .filled
            .get_mut(stream)
            .ok_or_else(|| Error::Schema(format!("stream {stream} is not declared")))?;
        if std::mem::replace(&mut flags[slot], true) {
            return Err(Error::Schema(format!("duplicate record: {}", what())));
        }
        Ok(())
    }

    pub fn set_activation(
        &mut self,
        sample_id: &str,
        layer: usize,
        kind: ActivationKind,
        vector: &[f32],
    ) -> Result<()> {
        let s = self.index_of(sample_id)?;
        let d = *self.meta.d_model.get(&kind).ok_or_else(|| {
            Error::Schema(format!("activation kind {kind} is not declared in the dump"))
        })?;
        if vector.len() != d {
            return Err(Error::Schema(format!(
                "{sample_id} layer {layer} {kind}: vector length {} but d_model = {d}",
                vector.len()
            )));
        }
        if layer >= self.meta.n_layers {
            return Err(Error::Schema(format!(
                "{sample_id}: layer {layer} >= n_layers {}",
                self.meta.n_layers
            )));
        }
        if let Some(bad) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "{sample_id} layer {layer} {kind}: non-finite entry at {bad}"
            )));
        }
        let slot = s * self.meta.n_layers + layer;
        self.mark(&activation_stream(kind), slot, || {
            format!("{sample_id} layer {layer} {kind}")
        })?;
        let blob = self.activations.get_mut(&kind).expect("declared kind");
        blob[slot * d..(slot + 1) * d].copy_from_slice(vector);
        Ok(())
    }

    pub fn set_attention(
        &mut self,
        sample_id: &str,
        layer: usize,
        head: usize,
        w: AttentionWeights,
    ) -> Result<()> {
        let s = self.index_of(sample_id)?;
        if layer >= self.meta.n_layers || head >= self.meta.n_heads {
            return Err(Error::Schema(format!(
                "{sample_id}: (layer {layer}, head {head}) outside {}x{} grid",
                self.meta.n_layers, self.meta.n_heads
            )));
        }
        let in_range = |p: f32| (0.0..=1.0).contains(&p);
        if !in_range(w.image) || w.text.is_some_and(|t| !in_range(t)) {
            return Err(Error::Schema(format!(
                "{sample_id} (layer {layer}, head {head}): attention weight outside [0, 1]"
            )));
        }
        let slot = (s * self.meta.n_layers + layer) * self.meta.n_heads + head;
        let absent = w.text.is_none();
        match self.text_state[s] {
            Some(prev) if prev != absent => {
                return Err(Error::Schema(format!(
                    "{sample_id}: text channel present for some heads and absent for others"
                )));
            }
            _ => {}
        }
        self.mark(ATTENTION_STREAM, slot, || {
            format!("{sample_id} attention (layer {layer}, head {head})")
        })?;
        self.text_state[s] = Some(absent);
        self.attention[slot * 2] = w.text.unwrap_or(0.0);
        self.attention[slot * 2 + 1] = w.image;
        Ok(())
    }

    pub fn set_answer(
        &mut self,
        sample_id: &str,
        p_image: f32,
        p_text: f32,
        aligned: AlignedModality,
    ) -> Result<()> {
        let rec = AnswerProbRecord {
            sample_id: sample_id.to_string(),
            p_image_answer: p_image,
            p_text_answer: p_text,
            aligned_modality: aligned,
        };
        rec.check()?;
        let s = self.index_of(sample_id)?;
        self.mark(ANSWERS_STREAM, s, || format!("{sample_id} answer"))?;
        self.answers[s * 3..s * 3 + 3].copy_from_slice(&[p_image, p_text, aligned.code()]);
        Ok(())
    }

    pub fn index(&self) -> DumpIndex {
        let n = self.sample_ids.len();
        let mut blobs = Vec::new();
        for (&k, &d) in &self.meta.d_model {
            blobs.push(blob_ref(activation_stream(k), format!("blobs/{}.f32", k.name()), vec![
                n,
                self.meta.n_layers,
                d,
            ]));
        }
        if self.meta.n_heads > 0 {
            blobs.push(blob_ref(
                ATTENTION_STREAM.into(),
                "blobs/attention.f32".into(),
                vec![n, self.meta.n_layers, self.meta.n_heads, 2],
            ));
        }
        if self.meta.with_answers {
            blobs.push(blob_ref(ANSWERS_STREAM.into(), "blobs/answers.f32".into(), vec![n, 3]));
        }
        DumpIndex {
            format_version: FORMAT_VERSION,
            n_layers: self.meta.n_layers,
            n_heads: self.meta.n_heads,
            d_model: self.meta.d_model.clone(),
            sample_ids: self.sample_ids.clone(),
            token_position_policy: self.meta.token_position_policy.clone(),
            text_channel_absent: self
                .text_state
                .iter()
                .zip(&self.sample_ids)
                .filter(|(st, _)| **st == Some(true))
                .map(|(_, id)| id.clone())
                .collect(),
            blobs,
        }
    }

    /// Checks completeness and writes `index.json` plus the blobs.
    pub fn write(&self, dir: &Path) -> Result<DumpIndex> {
        for (stream, flags) in &self.filled {
            if stream == ATTENTION_STREAM && self.meta.n_heads == 0 {
                continue;
            }
            if let Some(missing) = flags.iter().position(|f| !f) {
                return Err(Error::Schema(format!(
                    "stream {stream} is missing a record for {}",
                    self.describe_slot(stream, missing)
                )));
            }
        }
        let index = self.index();
        let blob_dir = dir.join("blobs");
        fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
        for b in &index.blobs {
            let data: &[f32] = match b.stream.as_str() {
                ATTENTION_STREAM => &self.attention,
                ANSWERS_STREAM => &self.answers,
                s => {
                    let kind = ActivationKind::parse(s.trim_start_matches("activations/"))?;
                    &self.activations[&kind]
                }
            };
            let path = dir.join(&b.path);
            fs::write(&path, f32_le_bytes(data)).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(index)
    }

    fn describe_slot(&self, stream: &str, slot: usize) -> String {
        let l = self.meta.n_layers.max(1);
        match stream {
            ANSWERS_STREAM => self.sample_ids[slot].clone(),
            ATTENTION_STREAM => {
                let h = self.meta.n_heads.max(1);
                format!(
                    "{} (layer {}, head {})",
                    self.sample_ids[slot / (l * h)],
                    (slot / h) % l,
                    slot % h
                )
            }
            _ => format!("{} layer {}", self.sample_ids[slot / l], slot % l),
        }
    }
}

fn blob_ref(stream: String, path: String, shape: Vec<usize>) -> BlobRef {
    let length = shape.iter().product::<usize>() as u64 * 4;
    BlobRef {
        stream,
        path,
        offset: 0,
        length,
        shape,
    }
}

pub(crate) fn f32_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes record streams as a dump. Sample ids are the sorted union of ids
/// across all records; each declared stream must cover every sample.
pub fn write_dump(
    dir: &Path,
    meta: &DumpMeta,
    activations: &[ActivationRecord],
    attention: &[AttentionRecord],
    answers: &[AnswerProbRecord],
) -> Result<DumpIndex> {
    let ids: BTreeSet<String> = activations
        .iter()
        .map(|r| r.sample_id.clone())
        .chain(attention.iter().map(|r| r.sample_id.clone()))
        .chain(answers.iter().map(|r| r.sample_id.clone()))
        .collect();
    let mut b = DumpBuilder::new(meta.clone(), ids)?;
    for r in activations {
        b.set_activation(&r.sample_id, r.layer, r.kind, &r.vector)?;
    }
    if meta.n_heads == 0 && !attention.is_empty() {
        return Err(Error::Schema("attention records given but n_heads = 0".into()));
    }
    for r in attention {
        b.set_attention(
            &r.sample_id,
            r.layer,
            r.head,
            AttentionWeights {
                text: r.weight_to_text_color_token,
                image: r.weight_to_image_tokens_sum,
            },
        )?;
    }
    if !meta.with_answers && !answers.is_empty() {
        return Err(Error::Schema("answer records given but the dump declares none".into()));
    }
    for r in answers {
        b.set_answer(&r.sample_id, r.p_image_answer, r.p_text_answer, r.aligned_modality)?;
    }
    b.write(dir)
}
