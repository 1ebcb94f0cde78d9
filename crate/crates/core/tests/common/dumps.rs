//! Small hand-built dumps and the corruptions the validator must catch.
#![allow(dead_code)]

use std::fs::{self, OpenOptions};
use std::path::Path;

use mconflict::store::{
    write_dump, ActivationKind, ActivationRecord, AlignedModality, AnswerProbRecord,
    AttentionRecord, DumpMeta,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Records {
    pub meta: DumpMeta,
    pub activations: Vec<ActivationRecord>,
    pub attention: Vec<AttentionRecord>,
    pub answers: Vec<AnswerProbRecord>,
}

pub const N_LAYERS: usize = 3;
pub const N_HEADS: usize = 2;
pub const D_MODEL: usize = 5;

/// Four samples; `s2` has no text color token.
pub fn small_records(seed: u64) -> Records {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ids = ["s3", "s0", "s2", "s1"];
    let meta = DumpMeta::new(N_LAYERS, N_HEADS, D_MODEL);
    let mut activations = Vec::new();
    let mut attention = Vec::new();
    let mut answers = Vec::new();
    for id in ids {
        for layer in 0..N_LAYERS {
            for kind in ActivationKind::ALL {
                activations.push(ActivationRecord {
                    sample_id: id.into(),
                    layer,
                    kind,
                    vector: (0..D_MODEL).map(|_| r.gen_range(-3.0f32..3.0)).collect(),
                });
            }
            for head in 0..N_HEADS {
                let t: f32 = r.gen_range(0.0..0.5);
                attention.push(AttentionRecord {
                    sample_id: id.into(),
                    layer,
                    head,
                    weight_to_text_color_token: (id != "s2").then_some(t),
                    weight_to_image_tokens_sum: r.gen_range(0.0..0.5),
                });
            }
        }
        let p: f32 = r.gen_range(0.0..0.9);
        answers.push(AnswerProbRecord {
            sample_id: id.into(),
            p_image_answer: p,
            p_text_answer: 0.9 - p,
            aligned_modality: if p > 0.45 { AlignedModality::Image } else { AlignedModality::Text },
        });
    }
    Records {
        meta,
        activations,
        attention,
        answers,
    }
}

pub fn write_small(dir: &Path, seed: u64) -> Records {
    let recs = small_records(seed);
    write_dump(dir, &recs.meta, &recs.activations, &recs.attention, &recs.answers).unwrap();
    recs
}

fn index_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("index.json")).unwrap()).unwrap()
}

fn blob_path(dir: &Path, stream: &str) -> std::path::PathBuf {
    let idx = index_json(dir);
    let b = idx["blobs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b["stream"] == stream)
        .unwrap();
    dir.join(b["path"].as_str().unwrap())
}

fn put_f32(dir: &Path, stream: &str, element: usize, v: f32) {
    let p = blob_path(dir, stream);
    let mut bytes = fs::read(&p).unwrap();
    bytes[element * 4..element * 4 + 4].copy_from_slice(&v.to_le_bytes());
    fs::write(&p, bytes).unwrap();
}

pub fn truncate(dir: &Path) {
    let p = blob_path(dir, "activations/residual");
    let len = fs::metadata(&p).unwrap().len();
    OpenOptions::new().write(true).open(&p).unwrap().set_len(len - 6).unwrap();
}

/// NaN in sample `s1`, layer 1 of the MLP stream.
pub fn plant_nan(dir: &Path) {
    put_f32(dir, "activations/mlp_out", (N_LAYERS + 1) * D_MODEL + 2, f32::NAN);
}

/// Text weight 1.5 at sample `s0`, layer 0, head 1.
pub fn plant_range(dir: &Path) {
    put_f32(dir, "attention", 2, 1.5);
}

pub fn duplicate_key(dir: &Path) {
    let mut idx = index_json(dir);
    idx["sample_ids"][1] = idx["sample_ids"][0].clone();
    fs::write(dir.join("index.json"), idx.to_string()).unwrap();
}

/// Blob longer than the index says.
pub fn blob_mismatch(dir: &Path) {
    let p = blob_path(dir, "answers");
    let mut bytes = fs::read(&p).unwrap();
    bytes.extend_from_slice(&0f32.to_le_bytes());
    fs::write(&p, bytes).unwrap();
}
