//! Synthetic conflict dataset: colored shapes on a white canvas paired with
//! captions in four control conditions.

mod generate;
mod io;
mod render;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_dataset, make_caption, Caption, GenerationConfig};
pub use io::{read_manifest, write_dataset, write_manifest, DatasetMeta, MANIFEST_FILE, META_FILE};
pub use render::{encode_png, render_image, RgbImage};
pub use split::{balance_classes, split_disjoint_colors, ColorSplit};

pub const GENERATOR_VERSION: &str = "mconflict-dataset/1";
pub const DEFAULT_CANVAS: u32 = 256;
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Diamond,
    Star,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Diamond,
        ShapeKind::Star,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Star => "star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorName {
    Black,
    Gray,
    Red,
    Blue,
    Green,
    Yellow,
    Purple,
    Pink,
}

impl ColorName {
    pub const ALL: [ColorName; 8] = [
        ColorName::Black,
        ColorName::Gray,
        ColorName::Red,
        ColorName::Blue,
        ColorName::Green,
        ColorName::Yellow,
        ColorName::Purple,
        ColorName::Pink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ColorName::Black => "black",
            ColorName::Gray => "gray",
            ColorName::Red => "red",
            ColorName::Blue => "blue",
            ColorName::Green => "green",
            ColorName::Yellow => "yellow",
            ColorName::Purple => "purple",
            ColorName::Pink => "pink",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            ColorName::Black => [0, 0, 0],
            ColorName::Gray => [128, 128, 128],
            ColorName::Red => [255, 0, 0],
            ColorName::Blue => [0, 0, 255],
            ColorName::Green => [0, 128, 0],
            ColorName::Yellow => [255, 255, 0],
            ColorName::Purple => [128, 0, 128],
            ColorName::Pink => [255, 192, 203],
        }
    }

    pub fn parse(s: &str) -> Result<ColorName> {
        ColorName::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown color `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaptionType {
    /// Caption asserts a color different from the image.
    Conflict,
    NoColor,
    MatchingColor,
    /// Caption gives a color to a shape that is not in the image.
    OtherShapeColor,
}

impl CaptionType {
    pub const ALL: [CaptionType; 4] = [
        CaptionType::Conflict,
        CaptionType::NoColor,
        CaptionType::MatchingColor,
        CaptionType::OtherShapeColor,
    ];

    pub fn is_conflict(self) -> bool {
        matches!(self, CaptionType::Conflict)
    }
}

/// One image/caption pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub sample_id: String,
    pub shape: ShapeKind,
    pub image_color: ColorName,
    pub caption_color: Option<ColorName>,
    pub caption_type: CaptionType,
    /// Shape named in the caption; differs from `shape` only for
    /// [`CaptionType::OtherShapeColor`].
    pub caption_shape: ShapeKind,
    pub caption_text: String,
    pub center: (u32, u32),
    pub size: u32,
    pub conflict_label: bool,
    pub image_answer_token: String,
    pub text_answer_token: Option<String>,
    pub seed: u64,
}

impl SampleSpec {
    /// Checks the caption/label invariants and that the shape fits the canvas.
    pub fn validate(&self, canvas: u32) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sample {}: {m}", self.sample_id)));
        if self.conflict_label != self.caption_type.is_conflict() {
            return bad("conflict_label disagrees with caption_type");
        }
        match self.caption_type {
            CaptionType::Conflict => {
                if self.caption_color.is_none() || self.caption_color == Some(self.image_color) {
                    return bad("conflict caption must name a different color");
                }
                if self.caption_shape != self.shape {
                    return bad("conflict caption must name the image shape");
                }
            }
            CaptionType::MatchingColor => {
                if self.caption_color != Some(self.image_color) || self.caption_shape != self.shape
                {
                    return bad("matching caption must repeat the image color and shape");
                }
            }
            CaptionType::NoColor => {
                if self.caption_color.is_some() || self.caption_shape != self.shape {
                    return bad("color-free caption must omit the color");
                }
            }
            CaptionType::OtherShapeColor => {
                if self.caption_color.is_none() || self.caption_shape == self.shape {
                    return bad("other-shape caption must name a colored absent shape");
                }
            }
        }
        if self.image_answer_token != self.image_color.name() {
            return bad("image_answer_token must be the image color word");
        }
        if self.text_answer_token.as_deref() != self.caption_color.map(ColorName::name) {
            return bad("text_answer_token must be the caption color word");
        }
        render::check_bounds(self.center, self.size, canvas)
    }

    /// Every color word this sample exposes, image or caption.
    pub fn mentioned_colors(&self) -> impl Iterator<Item = ColorName> {
        std::iter::once(self.image_color).chain(self.caption_color)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<SampleSpec>,
    pub generator_version: String,
    pub global_seed: u64,
    pub canvas_size: u32,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::Config(format!("duplicate sample_id {}", s.sample_id)));
            }
            s.validate(self.canvas_size)?;
        }
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleSpec> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn n_conflict(&self) -> usize {
        self.samples.iter().filter(|s| s.conflict_label).count()
    }

    /// Same header, different sample list.
    pub fn with_samples(&self, samples: Vec<SampleSpec>) -> DatasetManifest {
        DatasetManifest {
            samples,
            generator_version: self.generator_version.clone(),
            global_seed: self.global_seed,
            canvas_size: self.canvas_size,
        }
    }
}
