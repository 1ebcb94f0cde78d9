//! Activation dump: the on-disk contract between model inference and analysis.
//!
//! A dump directory holds `index.json` and one raw little-endian `f32` blob per
//! record stream under `blobs/`:
//!
//! | stream              | file                    | layout                              |
//! |---------------------|-------------------------|-------------------------------------|
//! | `activations/<kind>`| `blobs/<kind>.f32`      | `[sample][layer][d_model]`          |
//! | `attention`         | `blobs/attention.f32`   | `[sample][layer][head][text, image]`|
//! | `answers`           | `blobs/answers.f32`     | `[sample][p_image, p_text, aligned]`|
//!
//! Samples are stored in ascending `sample_id` order. `aligned` is encoded as
//! 0 (image), 1 (text) or 2 (other). Samples listed in `text_channel_absent`
//! have no text color token; their text channel is stored as 0 and reads back
//! as `None`.

mod format;
mod read;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{write_dump, BlobRef, DumpBuilder, DumpIndex, DumpMeta, FORMAT_VERSION, INDEX_FILE};
pub use read::{read_dump, Dump};
pub use validate::{validate_dump, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    AttnOut,
    MlpOut,
    Residual,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [
        ActivationKind::AttnOut,
        ActivationKind::MlpOut,
        ActivationKind::Residual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::AttnOut => "attn_out",
            ActivationKind::MlpOut => "mlp_out",
            ActivationKind::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Result<ActivationKind> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown activation kind `{s}`")))
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignedModality {
    Image,
    Text,
    Other,
}

impl AlignedModality {
    pub(crate) fn code(self) -> f32 {
        match self {
            AlignedModality::Image => 0.0,
            AlignedModality::Text => 1.0,
            AlignedModality::Other => 2.0,
        }
    }

    pub(crate) fn from_code(v: f32) -> Option<AlignedModality> {
        match v {
            0.0 => Some(AlignedModality::Image),
            1.0 => Some(AlignedModality::Text),
            2.0 => Some(AlignedModality::Other),
            _ => None,
        }
    }
}

/// Last-token activation for one (sample, layer, kind).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub sample_id: String,
    pub layer: usize,
    pub kind: ActivationKind,
    pub vector: Vec<f32>,
}

/// Final-token attention for one (sample, layer, head).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionWeights {
    /// `None` when the caption has no color word.
    pub text: Option<f32>,
    pub image: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub layer: usize,
    pub head: usize,
    pub weight_to_text_color_token: Option<f32>,
    pub weight_to_image_tokens_sum: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerProbRecord {
    pub sample_id: String,
    pub p_image_answer: f32,
    pub p_text_answer: f32,
    pub aligned_modality: AlignedModality,
}

impl AnswerProbRecord {
    pub fn check(&self) -> Result<()> {
        let ok = |p: f32| (0.0..=1.0).contains(&p);
        if !ok(self.p_image_answer)
            || !ok(self.p_text_answer)
            || self.p_image_answer + self.p_text_answer > 1.0 + 1e-6
        {
            return Err(Error::Schema(format!(
                "answer probabilities ({}, {}) for {} are not a sub-distribution",
                self.p_image_answer, self.p_text_answer, self.sample_id
            )));
        }
        Ok(())
    }
}
