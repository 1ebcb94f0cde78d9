use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use super::format::{activation_stream, ANSWERS_STREAM, ATTENTION_STREAM};
use super::{
    ActivationKind, ActivationRecord, AlignedModality, AnswerProbRecord, AttentionRecord,
    AttentionWeights, BlobRef, DumpIndex, FORMAT_VERSION, INDEX_FILE,
};
use super::ViolationKind;
use crate::error::{Error, Result};

/// Read-only handle on a dump directory. Blobs are loaded on first access and
/// checked for finiteness at that point.
#[derive(Debug)]
pub struct Dump {
    root: PathBuf,
    index: DumpIndex,
    pos: HashMap<String, usize>,
    text_absent: HashSet<usize>,
    blobs: HashMap<String, OnceLock<Vec<f32>>>,
}

pub(crate) fn parse_index(root: &Path) -> Result<DumpIndex> {
    let path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptIndex {
        path: path.clone(),
        reason: e.to_string(),
    })
}

/// Structural problems with the index itself, independent of blob contents.
pub(crate) fn index_problems(index: &DumpIndex) -> Vec<(ViolationKind, String)> {
    use ViolationKind::*;
    let mut out = Vec::new();
    if index.format_version != FORMAT_VERSION {
        out.push((CorruptIndex, format!(
            "format_version {} is not supported (expected {FORMAT_VERSION})",
            index.format_version
        )));
    }
    let mut seen = HashSet::new();
    for id in &index.sample_ids {
        if !seen.insert(id) {
            out.push((DuplicateKey, format!("duplicate sample_id {id}")));
        }
    }
    if index.sample_ids.windows(2).any(|w| w[0] > w[1]) {
        out.push((CorruptIndex, "sample_ids are not sorted".into()));
    }
    for id in &index.text_channel_absent {
        if !seen.contains(id) {
            out.push((CorruptIndex, format!("text_channel_absent names unknown sample {id}")));
        }
    }
    let mut streams = HashSet::new();
    for b in &index.blobs {
        if !streams.insert(b.stream.as_str()) {
            out.push((DuplicateKey, format!("duplicate blob entry for stream {}", b.stream)));
        }
        if b.n_elements() as u64 * 4 != b.length {
            out.push((IndexBlobMismatch, format!(
                "stream {}: shape {:?} does not match length {}",
                b.stream, b.shape, b.length
            )));
        }
    }
    for (stream, shape) in index.expected_shapes() {
        match index.blob(&stream) {
            None => out.push((IndexBlobMismatch, format!("stream {stream} is declared but has no blob"))),
            Some(b) if b.shape != shape => out.push((IndexBlobMismatch, format!(
                "stream {stream}: blob shape {:?} but index dimensions imply {shape:?}",
                b.shape
            ))),
            _ => {}
        }
    }
    let mut by_file: HashMap<&str, Vec<&BlobRef>> = HashMap::new();
    for b in &index.blobs {
        by_file.entry(b.path.as_str()).or_default().push(b);
    }
    for blobs in by_file.values_mut() {
        blobs.sort_by_key(|b| b.offset);
        for w in blobs.windows(2) {
            if w[0].offset + w[0].length > w[1].offset {
                out.push((IndexBlobMismatch, format!("blobs {} and {} overlap", w[0].stream, w[1].stream)));
            }
        }
    }
    out
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    let index = parse_index(path)?;
    if let Some((_, p)) = index_problems(&index).into_iter().next() {
        return Err(Error::CorruptIndex {
            path: path.join(INDEX_FILE),
            reason: p,
        });
    }
    for b in &index.blobs {
        let file = path.join(&b.path);
        let found = fs::metadata(&file).map_err(|e| Error::io(&file, e))?.len();
        let expected = b.offset + b.length;
        if found < expected {
            return Err(Error::TruncatedBlob {
                path: file,
                expected,
                found,
            });
        }
    }
    let pos = index
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect::<HashMap<_, _>>();
    let text_absent = index.text_channel_absent.iter().map(|s| pos[s]).collect();
    let blobs = index
        .blobs
        .iter()
        .map(|b| (b.stream.clone(), OnceLock::new()))
        .collect();
    Ok(Dump {
        root: path.to_path_buf(),
        index,
        pos,
        text_absent,
        blobs,
    })
}

pub(crate) fn load_blob(root: &Path, b: &BlobRef) -> Result<Vec<f32>> {
    let file = root.join(&b.path);
    let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
    let end = b.offset + b.length;
    if (bytes.len() as u64) < end {
        return Err(Error::TruncatedBlob {
            path: file,
            expected: end,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes[b.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Dump {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &DumpIndex {
        &self.index
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.index.sample_ids
    }

    pub fn n_layers(&self) -> usize {
        self.index.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.index.n_heads
    }

    pub fn kinds(&self) -> impl Iterator<Item = ActivationKind> + '_ {
        self.index.d_model.keys().copied()
    }

    pub fn d_model(&self, kind: ActivationKind) -> Option<usize> {
        self.index.d_model.get(&kind).copied()
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.pos.contains_key(sample_id)
    }

    pub fn has_answers(&self) -> bool {
        self.index.blob(ANSWERS_STREAM).is_some()
    }

    fn sample(&self, sample_id: &str) -> Result<usize> {
        self.pos
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("sample {sample_id} is not in dump {}", self.root.display())))
    }

    fn stream(&self, stream: &str) -> Result<&[f32]> {
        let cell = self
            .blobs
            .get(stream)
            .ok_or_else(|| Error::Data(format!("dump {} has no {stream} stream", self.root.display())))?;
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let b = self.index.blob(stream).expect("stream listed in index");
        let data = load_blob(&self.root, b)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let per_sample = b.n_elements() / self.index.sample_ids.len().max(1);
            let s = i / per_sample.max(1);
            let layer = if stream == ANSWERS_STREAM {
                0
            } else {
                (i % per_sample) * self.index.n_layers / per_sample
            };
            return Err(Error::NonFinite {
                stream: stream.to_string(),
                sample_id: self.index.sample_ids[s].clone(),
                layer,
            });
        }
        let _ = cell.set(data);
        Ok(cell.get().expect("just set"))
    }

    pub fn activation(&self, sample_id: &str, layer: usize, kind: ActivationKind) -> Result<&[f32]> {
        let d = self
            .d_model(kind)
            .ok_or_else(|| Error::Data(format!("dump has no {kind} activations")))?;
        if layer >= self.index.n_layers {
            return Err(Error::Data(format!("layer {layer} not in dump ({} layers)", self.index.n_layers)));
        }
        let s = self.sample(sample_id)?;
        let blob = self.stream(&activation_stream(kind))?;
        let at = (s * self.index.n_layers + layer) * d;
        Ok(&blob[at..at + d])
    }

    /// Records for one (layer, kind) cell in ascending sample order,
    /// optionally restricted to a sample set.
    pub fn iter_activations<'a>(
        &'a self,
        layer: usize,
        kind: ActivationKind,
        samples: Option<&'a HashSet<String>>,
    ) -> Result<impl Iterator<Item = ActivationRecord> + 'a> {
        let d = self
            .d_model(kind)
            .ok_or_else(|| Error::Data(format!("dump has no {kind} activations")))?;
        let l = self.index.n_layers;
        if layer >= l {
            return Err(Error::Data(format!("layer {layer} not in dump ({l} layers)")));
        }
        let blob = self.stream(&activation_stream(kind))?;
        Ok(self
            .index
            .sample_ids
            .iter()
            .enumerate()
            .filter(move |(_, id)| samples.is_none_or(|set| set.contains(*id)))
            .map(move |(s, id)| {
                let at = (s * l + layer) * d;
                ActivationRecord {
                    sample_id: id.clone(),
                    layer,
                    kind,
                    vector: blob[at..at + d].to_vec(),
                }
            }))
    }

    pub fn activation_records(&self) -> Result<Vec<ActivationRecord>> {
        let mut out = Vec::new();
        for id in &self.index.sample_ids {
            for layer in 0..self.index.n_layers {
                for kind in self.kinds() {
                    out.push(ActivationRecord {
                        sample_id: id.clone(),
                        layer,
                        kind,
                        vector: self.activation(id, layer, kind)?.to_vec(),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn text_channel_absent(&self, sample_id: &str) -> Result<bool> {
        Ok(self.text_absent.contains(&self.sample(sample_id)?))
    }

    pub fn attention(&self, sample_id: &str, layer: usize, head: usize) -> Result<AttentionWeights> {
        let (l, h) = (self.index.n_layers, self.index.n_heads);
        if layer >= l || head >= h {
            return Err(Error::Data(format!("(layer {layer}, head {head}) outside the {l}x{h} grid")));
        }
        let s = self.sample(sample_id)?;
        let blob = self.stream(ATTENTION_STREAM)?;
        let at = ((s * l + layer) * h + head) * 2;
        Ok(AttentionWeights {
            text: (!self.text_absent.contains(&s)).then_some(blob[at]),
            image: blob[at + 1],
        })
    }

    /// All attention weights for one sample, `[layer][head]` row-major.
    pub fn attention_grid(&self, sample_id: &str) -> Result<Vec<AttentionWeights>> {
        let (l, h) = (self.index.n_layers, self.index.n_heads);
        let s = self.sample(sample_id)?;
        let blob = self.stream(ATTENTION_STREAM)?;
        let absent = self.text_absent.contains(&s);
        Ok(blob[s * l * h * 2..(s + 1) * l * h * 2]
            .chunks_exact(2)
            .map(|p| AttentionWeights {
                text: (!absent).then_some(p[0]),
                image: p[1],
            })
            .collect())
    }

    pub fn attention_records(&self) -> Result<Vec<AttentionRecord>> {
        let mut out = Vec::new();
        for id in &self.index.sample_ids {
            for layer in 0..self.index.n_layers {
                for head in 0..self.index.n_heads {
                    let w = self.attention(id, layer, head)?;
                    out.push(AttentionRecord {
                        sample_id: id.clone(),
                        layer,
                        head,
                        weight_to_text_color_token: w.text,
                        weight_to_image_tokens_sum: w.image,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn answer(&self, sample_id: &str) -> Result<AnswerProbRecord> {
        let s = self.sample(sample_id)?;
        let blob = self.stream(ANSWERS_STREAM)?;
        let row = &blob[s * 3..s * 3 + 3];
        let aligned = AlignedModality::from_code(row[2]).ok_or_else(|| {
            Error::Data(format!("sample {sample_id}: invalid aligned_modality code {}", row[2]))
        })?;
        Ok(AnswerProbRecord {
            sample_id: sample_id.to_string(),
            p_image_answer: row[0],
            p_text_answer: row[1],
            aligned_modality: aligned,
        })
    }

    pub fn answer_records(&self) -> Result<Vec<AnswerProbRecord>> {
        if !self.has_answers() {
            return Ok(Vec::new());
        }
        self.index.sample_ids.iter().map(|id| self.answer(id)).collect()
    }
}
