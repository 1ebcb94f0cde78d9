use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_png, render_image, DatasetManifest, SampleSpec, DEFAULT_CANVAS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "dataset.json";

/// Manifest header stored next to the JSONL sample list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub generator_version: String,
    pub global_seed: u64,
    pub canvas_size: u32,
    pub n_samples: usize,
}

/// Writes one JSON object per line plus the sibling `dataset.json` header.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &manifest.samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = DatasetMeta {
        generator_version: manifest.generator_version.clone(),
        global_seed: manifest.global_seed,
        canvas_size: manifest.canvas_size,
        n_samples: manifest.samples.len(),
    };
    let meta_path = path.with_file_name(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleSpec = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        samples.push(s);
    }
    let meta_path = path.with_file_name(META_FILE);
    let (generator_version, global_seed, canvas_size) = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        (meta.generator_version, meta.global_seed, meta.canvas_size)
    } else {
        ("unknown".to_string(), 0, DEFAULT_CANVAS)
    };
    let manifest = DatasetManifest {
        samples,
        generator_version,
        global_seed,
        canvas_size,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes `manifest.jsonl`, `dataset.json` and, when `images` is set, one
/// `images/{sample_id}.png` per sample.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, images: bool) -> Result<()> {
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(&dir.join(MANIFEST_FILE), manifest)?;
    if images {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        manifest.samples.par_iter().try_for_each(|s| -> Result<()> {
            let img = render_image(s, manifest.canvas_size)?;
            let path = img_dir.join(format!("{}.png", s.sample_id));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            encode_png(&img, BufWriter::new(file))
        })?;
    }
    Ok(())
}
