use std::io::Write;

use super::{SampleSpec, ShapeKind, BACKGROUND};
use crate::error::{Error, Result};

/// Row-major RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub(crate) fn check_bounds(center: (u32, u32), size: u32, canvas: u32) -> Result<()> {
    let r = size as f64 / 2.0;
    let max = canvas as f64 - 1.0;
    let (cx, cy) = (center.0 as f64, center.1 as f64);
    if size == 0 || cx - r < 0.0 || cy - r < 0.0 || cx + r > max || cy + r > max {
        return Err(Error::Bounds(format!(
            "shape of size {size} at ({}, {}) does not fit a {canvas}x{canvas} canvas",
            center.0, center.1
        )));
    }
    Ok(())
}

/// Star outline: 10 vertices alternating outer and inner radius, first point up.
fn star_vertices(cx: f64, cy: f64, r: f64) -> [(f64, f64); 10] {
    let inner = r * 0.381_966;
    let mut v = [(0.0, 0.0); 10];
    for (k, p) in v.iter_mut().enumerate() {
        let rad = if k % 2 == 0 { r } else { inner };
        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
        *p = (cx + rad * a.cos(), cy + rad * a.sin());
    }
    v
}

fn in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn contains(shape: ShapeKind, dx: f64, dy: f64, r: f64, star: &[(f64, f64)]) -> bool {
    match shape {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
        // apex up, base along the bottom edge of the bounding box
        ShapeKind::Triangle => dy <= r && dx.abs() <= (dy + r) / 2.0,
        ShapeKind::Star => in_polygon(dx, dy, star),
    }
}

/// Draws the sample's shape in its image color on a white canvas.
pub fn render_image(spec: &SampleSpec, canvas: u32) -> Result<RgbImage> {
    check_bounds(spec.center, spec.size, canvas)?;
    let mut img = RgbImage::filled(canvas, canvas, BACKGROUND);
    let rgb = spec.image_color.rgb();
    let r = spec.size as f64 / 2.0;
    let (cx, cy) = (spec.center.0 as f64, spec.center.1 as f64);
    let star = star_vertices(0.0, 0.0, r);
    let x0 = (cx - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil() as u32).min(canvas - 1);
    let y0 = (cy - r).floor().max(0.0) as u32;
    let y1 = ((cy + r).ceil() as u32).min(canvas - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if contains(spec.shape, x as f64 - cx, y as f64 - cy, r, &star) {
                img.put(x, y, rgb);
            }
        }
    }
    Ok(img)
}

/// Lossless PNG encoding with fixed settings so output bytes are reproducible.
pub fn encode_png<W: Write>(img: &RgbImage, out: W) -> Result<()> {
    let mut enc = png::Encoder::new(out, img.width, img.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    enc.set_filter(png::FilterType::Sub);
    let mut w = enc.write_header()?;
    w.write_image_data(&img.data)?;
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CaptionType, ColorName};

    fn spec(shape: ShapeKind, color: ColorName, center: (u32, u32), size: u32) -> SampleSpec {
        SampleSpec {
            sample_id: "t".into(),
            shape,
            image_color: color,
            caption_color: None,
            caption_type: CaptionType::NoColor,
            caption_shape: shape,
            caption_text: format!("an image of a {}", shape.name()),
            center,
            size,
            conflict_label: false,
            image_answer_token: color.name().into(),
            text_answer_token: None,
            seed: 0,
        }
    }

    #[test]
    fn center_pixel_carries_color() {
        for shape in ShapeKind::ALL {
            let img = render_image(&spec(shape, ColorName::Blue, (128, 128), 100), 256).unwrap();
            assert_eq!(img.pixel(128, 128), ColorName::Blue.rgb(), "{shape:?}");
            assert_eq!(img.pixel(0, 0), BACKGROUND);
        }
    }

    #[test]
    fn out_of_canvas_is_rejected() {
        let s = spec(ShapeKind::Star, ColorName::Red, (15, 15), 40);
        assert!(matches!(render_image(&s, 256), Err(Error::Bounds(_))));
        let s = spec(ShapeKind::Star, ColorName::Red, (30, 30), 40);
        assert!(render_image(&s, 256).is_ok());
        let s = spec(ShapeKind::Circle, ColorName::Red, (240, 128), 40);
        assert!(render_image(&s, 256).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = spec(ShapeKind::Triangle, ColorName::Pink, (100, 90), 77);
        let mut a = Vec::new();
        let mut b = Vec::new();
        encode_png(&render_image(&s, 256).unwrap(), &mut a).unwrap();
        encode_png(&render_image(&s, 256).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn only_two_colors_appear() {
        let img = render_image(&spec(ShapeKind::Star, ColorName::Gray, (128, 128), 150), 256).unwrap();
        let mut colors: Vec<[u8; 3]> = img.data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        colors.sort();
        colors.dedup();
        assert_eq!(colors, vec![ColorName::Gray.rgb(), BACKGROUND]);
    }

    #[test]
    fn areas_are_ordered() {
        let area = |shape| {
            let img = render_image(&spec(shape, ColorName::Black, (128, 128), 120), 256).unwrap();
            img.data.chunks(3).filter(|c| c[0] == 0).count()
        };
        // square > circle > diamond/triangle > star at equal extent
        assert!(area(ShapeKind::Square) > area(ShapeKind::Circle));
        assert!(area(ShapeKind::Circle) > area(ShapeKind::Diamond));
        assert!(area(ShapeKind::Diamond) > area(ShapeKind::Star));
    }
}
