use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::format::{ANSWERS_STREAM, ATTENTION_STREAM};
use super::read::{index_problems, load_blob, parse_index};
use super::{AlignedModality, DumpIndex};
use crate::dataset::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    CorruptIndex,
    Truncated,
    NonFinite,
    Range,
    DuplicateKey,
    IndexBlobMismatch,
    UnknownSample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return writeln!(f, "PASS");
        }
        writeln!(f, "FAIL ({} violations)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  [{:?}] {}", v.kind, v.message)?;
        }
        Ok(())
    }
}

/// Per-stream cap on itemized content violations.
const MAX_ITEMS: usize = 20;

/// Checks a dump directory without trusting it: index structure, blob sizes,
/// finiteness, probability ranges and, when given, that every sample is
/// known to the manifest. Problems are collected, never returned as errors.
pub fn validate_dump(path: &Path, manifest: Option<&DatasetManifest>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let index = match parse_index(path) {
        Ok(i) => i,
        Err(e) => {
            report.push(ViolationKind::CorruptIndex, e.to_string());
            return report;
        }
    };
    for (kind, msg) in index_problems(&index) {
        report.push(kind, msg);
    }

    let mut file_end: HashMap<&str, u64> = HashMap::new();
    for b in &index.blobs {
        let e = file_end.entry(b.path.as_str()).or_default();
        *e = (*e).max(b.offset + b.length);
    }
    for (file, end) in &file_end {
        match fs::metadata(path.join(file)) {
            Err(e) => report.push(ViolationKind::Truncated, format!("{file}: {e}")),
            Ok(m) if m.len() < *end => report.push(
                ViolationKind::Truncated,
                format!("{file}: {} bytes, index needs {end}", m.len()),
            ),
            Ok(m) if m.len() > *end => report.push(
                ViolationKind::IndexBlobMismatch,
                format!("{file}: {} bytes but the index accounts for only {end}", m.len()),
            ),
            Ok(_) => {}
        }
    }

    let n = index.sample_ids.len();
    for b in &index.blobs {
        let Ok(data) = load_blob(path, b) else { continue };
        if n == 0 || data.len() != b.n_elements() {
            continue;
        }
        check_stream(&index, &b.stream, &data, &mut report);
    }

    if let Some(m) = manifest {
        let known: std::collections::HashSet<&str> =
            m.samples.iter().map(|s| s.sample_id.as_str()).collect();
        for id in index.sample_ids.iter().filter(|id| !known.contains(id.as_str())) {
            report.push(
                ViolationKind::UnknownSample,
                format!("sample {id} is not in the manifest"),
            );
        }
    }
    report
}

fn check_stream(index: &DumpIndex, stream: &str, data: &[f32], report: &mut ValidationReport) {
    let n = index.sample_ids.len();
    let per_sample = data.len() / n;
    let per_layer = (per_sample / index.n_layers.max(1)).max(1);
    let mut items = 0;
    let mut suppressed = None;
    let mut flag = |report: &mut ValidationReport, kind, msg: String| {
        if items < MAX_ITEMS {
            report.push(kind, msg);
        } else {
            suppressed.get_or_insert(kind);
        }
        items += 1;
    };
    for (i, &v) in data.iter().enumerate() {
        let sample = &index.sample_ids[i / per_sample];
        let layer = (i % per_sample) / per_layer;
        if !v.is_finite() {
            let at = if stream == ANSWERS_STREAM {
                String::new()
            } else {
                format!(" layer {layer}")
            };
            flag(
                report,
                ViolationKind::NonFinite,
                format!("{stream}: non-finite value {v} for sample {sample}{at}"),
            );
        } else if stream == ATTENTION_STREAM && !(0.0..=1.0).contains(&v) {
            let head = (i % per_layer) / 2;
            flag(
                report,
                ViolationKind::Range,
                format!("attention weight {v} outside [0, 1] for sample {sample} layer {layer} head {head}"),
            );
        }
    }
    if stream == ANSWERS_STREAM {
        for (row, sample) in data.chunks_exact(3).zip(&index.sample_ids) {
            let (pi, pt) = (row[0], row[1]);
            if !row.iter().all(|v| v.is_finite()) {
                continue;
            }
            if !(0.0..=1.0).contains(&pi) || !(0.0..=1.0).contains(&pt) || pi + pt > 1.0 + 1e-6 {
                flag(
                    report,
                    ViolationKind::Range,
                    format!("answer probabilities ({pi}, {pt}) for sample {sample} are not a sub-distribution"),
                );
            }
            if AlignedModality::from_code(row[2]).is_none() {
                flag(
                    report,
                    ViolationKind::Range,
                    format!("invalid aligned_modality code {} for sample {sample}", row[2]),
                );
            }
        }
    }
    if let Some(kind) = suppressed {
        report.push(
            kind,
            format!("{stream}: {} further violations not itemized", items - MAX_ITEMS),
        );
    }
}
