use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ColorName, DatasetManifest, SampleSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint color partition for train/test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorSplit {
    pub train: BTreeSet<ColorName>,
    pub test: BTreeSet<ColorName>,
}

impl Default for ColorSplit {
    fn default() -> Self {
        use ColorName::*;
        ColorSplit {
            train: [Red, Blue, Green, Yellow, Purple].into_iter().collect(),
            test: [Black, Gray, Pink].into_iter().collect(),
        }
    }
}

impl ColorSplit {
    pub fn new(
        train: impl IntoIterator<Item = ColorName>,
        test: impl IntoIterator<Item = ColorName>,
    ) -> Result<ColorSplit> {
        let split = ColorSplit {
            train: train.into_iter().collect(),
            test: test.into_iter().collect(),
        };
        split.check()?;
        Ok(split)
    }

    fn check(&self) -> Result<()> {
        if let Some(c) = self.train.intersection(&self.test).next() {
            return Err(Error::Config(format!(
                "color {} is in both the train and test sets",
                c.name()
            )));
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("train and test color sets must be non-empty".into()));
        }
        Ok(())
    }

    /// Samples whose every mentioned color lies in `colors`; no rebalancing.
    pub fn filter(manifest: &DatasetManifest, colors: &BTreeSet<ColorName>) -> DatasetManifest {
        let samples = manifest
            .samples
            .iter()
            .filter(|s| s.mentioned_colors().all(|c| colors.contains(&c)))
            .cloned()
            .collect();
        manifest.with_samples(samples)
    }
}

/// Subsamples the majority class down to the minority count. The kept subset
/// is chosen by a seeded hash of `sample_id`; manifest order is preserved.
pub fn balance_classes(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let (pos, neg): (Vec<&SampleSpec>, Vec<&SampleSpec>) =
        manifest.samples.iter().partition(|s| s.conflict_label);
    let keep = pos.len().min(neg.len());
    let pick = |group: Vec<&SampleSpec>| -> BTreeSet<String> {
        let mut keyed: Vec<(u64, &str)> = group
            .iter()
            .map(|s| (rng::derive(seed, &[rng::hash_str(&s.sample_id)]), s.sample_id.as_str()))
            .collect();
        keyed.sort_unstable();
        keyed.into_iter().take(keep).map(|(_, id)| id.to_string()).collect()
    };
    let mut kept = pick(pos);
    kept.extend(pick(neg));
    let samples = manifest
        .samples
        .iter()
        .filter(|s| kept.contains(&s.sample_id))
        .cloned()
        .collect();
    manifest.with_samples(samples)
}

/// Color-disjoint train/test split.
///
/// A sample belongs to a side only if its image color and caption color both
/// lie in that side's set; mixed samples are dropped. Conflict samples survive
/// the filter less often than single-color controls, so each side is then
/// class-balanced with [`balance_classes`], seeded from the manifest seed.
pub fn split_disjoint_colors(
    manifest: &DatasetManifest,
    split: &ColorSplit,
) -> Result<(DatasetManifest, DatasetManifest)> {
    split.check()?;
    let seed = manifest.global_seed;
    let train = balance_classes(&ColorSplit::filter(manifest, &split.train), seed);
    let test = balance_classes(&ColorSplit::filter(manifest, &split.test), seed ^ 1);
    Ok((train, test))
}
