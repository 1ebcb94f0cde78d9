use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CaptionType, ColorName, DatasetManifest, SampleSpec, ShapeKind, DEFAULT_CANVAS,
    GENERATOR_VERSION,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub global_seed: u64,
    pub canvas_size: u32,
    /// Distinct conflicting caption colors per (shape, image color); at most 7.
    pub conflict_colors_per_combo: usize,
    /// Randomized placements per (shape, image color, caption color).
    pub conflict_replicates: usize,
    /// Control counts; `None` splits the conflict count evenly over the three.
    pub n_no_color: Option<usize>,
    pub n_matching_color: Option<usize>,
    pub n_other_shape_color: Option<usize>,
    pub min_size: u32,
    pub max_size: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            global_seed: 0,
            canvas_size: DEFAULT_CANVAS,
            conflict_colors_per_combo: 7,
            conflict_replicates: 20,
            n_no_color: None,
            n_matching_color: None,
            n_other_shape_color: None,
            min_size: 48,
            max_size: 160,
        }
    }
}

impl GenerationConfig {
    pub fn n_conflict(&self) -> usize {
        ShapeKind::ALL.len()
            * ColorName::ALL.len()
            * self.conflict_colors_per_combo
            * self.conflict_replicates
    }

    /// Resolved (no-color, matching, other-shape) counts.
    pub fn control_counts(&self) -> [usize; 3] {
        let total = self.n_conflict();
        let even = [total.div_ceil(3), (total + 1) / 3, total / 3];
        [
            self.n_no_color.unwrap_or(even[0]),
            self.n_matching_color.unwrap_or(even[1]),
            self.n_other_shape_color.unwrap_or(even[2]),
        ]
    }

    fn check(&self) -> Result<()> {
        let others = ColorName::ALL.len() - 1;
        if self.conflict_colors_per_combo > others {
            return Err(Error::Config(format!(
                "{} distinct conflict colors requested but only {others} differ from the image color",
                self.conflict_colors_per_combo
            )));
        }
        if self.conflict_colors_per_combo == 0 || self.conflict_replicates == 0 {
            return Err(Error::Config("conflict counts must be positive".into()));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "invalid size range [{}, {}]",
                self.min_size, self.max_size
            )));
        }
        if self.max_size + 1 >= self.canvas_size {
            return Err(Error::Config(format!(
                "max size {} does not fit a {} canvas",
                self.max_size, self.canvas_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub color: Option<ColorName>,
    pub shape: ShapeKind,
}

fn caption_text(color: Option<ColorName>, shape: ShapeKind) -> String {
    match color {
        Some(c) => format!("an image of a {} {}", c.name(), shape.name()),
        None => format!("an image of a {}", shape.name()),
    }
}

fn other_colors(image_color: ColorName) -> Vec<ColorName> {
    ColorName::ALL
        .into_iter()
        .filter(|&c| c != image_color)
        .collect()
}

/// Builds the caption for one control condition.
pub fn make_caption<R: Rng + ?Sized>(
    shape: ShapeKind,
    image_color: ColorName,
    caption_type: CaptionType,
    rng: &mut R,
) -> Caption {
    let (color, named) = match caption_type {
        CaptionType::NoColor => (None, shape),
        CaptionType::MatchingColor => (Some(image_color), shape),
        CaptionType::Conflict => (other_colors(image_color).choose(rng).copied(), shape),
        CaptionType::OtherShapeColor => {
            let shapes: Vec<_> = ShapeKind::ALL.into_iter().filter(|&s| s != shape).collect();
            let named = *shapes.choose(rng).expect("four other shapes");
            (other_colors(image_color).choose(rng).copied(), named)
        }
    };
    Caption {
        text: caption_text(color, named),
        color,
        shape: named,
    }
}

fn place<R: Rng>(cfg: &GenerationConfig, rng: &mut R) -> ((u32, u32), u32) {
    let size = rng.gen_range(cfg.min_size..=cfg.max_size);
    let lo = size.div_ceil(2);
    let hi = cfg.canvas_size - 1 - lo;
    let cx = rng.gen_range(lo..=hi);
    let cy = rng.gen_range(lo..=hi);
    ((cx, cy), size)
}

fn build(
    cfg: &GenerationConfig,
    index: usize,
    shape: ShapeKind,
    image_color: ColorName,
    caption_type: CaptionType,
    conflict_color: Option<ColorName>,
) -> SampleSpec {
    let seed = rng::derive(cfg.global_seed, &[index as u64]);
    let mut r = rng::stream(seed, &[]);
    let caption = match conflict_color {
        Some(c) => Caption {
            text: caption_text(Some(c), shape),
            color: Some(c),
            shape,
        },
        None => make_caption(shape, image_color, caption_type, &mut r),
    };
    let (center, size) = place(cfg, &mut r);
    SampleSpec {
        sample_id: format!("s{index:05}"),
        shape,
        image_color,
        caption_color: caption.color,
        caption_type,
        caption_shape: caption.shape,
        caption_text: caption.text,
        center,
        size,
        conflict_label: caption_type.is_conflict(),
        image_answer_token: image_color.name().to_string(),
        text_answer_token: caption.color.map(|c| c.name().to_string()),
        seed,
    }
}

/// Enumerates the full manifest. Conflict samples come first, ordered by
/// (shape, image color, caption color, replicate), then the three controls
/// cycling through every (shape, color) combination.
pub fn generate_dataset(cfg: &GenerationConfig) -> Result<DatasetManifest> {
    cfg.check()?;
    let mut samples = Vec::with_capacity(cfg.n_conflict() * 2);
    for shape in ShapeKind::ALL {
        for image_color in ColorName::ALL {
            let mut colors = other_colors(image_color);
            if cfg.conflict_colors_per_combo < colors.len() {
                let mut r = rng::stream(
                    cfg.global_seed,
                    &[0xC010, shape as u64, image_color as u64],
                );
                colors.shuffle(&mut r);
                colors.truncate(cfg.conflict_colors_per_combo);
                colors.sort();
            }
            for &caption_color in &colors {
                for _ in 0..cfg.conflict_replicates {
                    let idx = samples.len();
                    samples.push(build(
                        cfg,
                        idx,
                        shape,
                        image_color,
                        CaptionType::Conflict,
                        Some(caption_color),
                    ));
                }
            }
        }
    }
    let controls = [
        CaptionType::NoColor,
        CaptionType::MatchingColor,
        CaptionType::OtherShapeColor,
    ];
    for (caption_type, count) in controls.into_iter().zip(cfg.control_counts()) {
        for j in 0..count {
            let shape = ShapeKind::ALL[j % ShapeKind::ALL.len()];
            let color = ColorName::ALL[(j / ShapeKind::ALL.len()) % ColorName::ALL.len()];
            let idx = samples.len();
            samples.push(build(cfg, idx, shape, color, caption_type, None));
        }
    }
    Ok(DatasetManifest {
        samples,
        generator_version: GENERATOR_VERSION.to_string(),
        global_seed: cfg.global_seed,
        canvas_size: cfg.canvas_size,
    })
}
