//! On-disk datasets: one binary event file per sample plus a manifest.
//!
//! Manifest lines are `path label split`, with paths relative to the
//! manifest's directory. Blank lines and lines starting with `#` are skipped.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::event::{load_events, save_events, EventFormat, EventSample};
use crate::synth::Dataset;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u32,
    pub split: SplitName,
}

/// Writes `dir/{train,val,test}/<id>.evt` and `dir/manifest.txt`, returning
/// the manifest path.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut manifest = String::new();
    for (split, samples) in [
        (SplitName::Train, &ds.train),
        (SplitName::Val, &ds.val),
        (SplitName::Test, &ds.test),
    ] {
        let sub = dir.join(split.to_string());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for s in samples {
            let label = s
                .label()
                .ok_or_else(|| Error::Validation(format!("sample {:?} has no label", s.sample_id())))?;
            let rel = format!("{split}/{}.evt", s.sample_id());
            save_events(s, dir.join(&rel), EventFormat::Binary)?;
            manifest.push_str(&format!("{rel} {label} {split}\n"));
        }
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i as u64 + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [p, label, split] = fields[..] else {
            return Err(Error::parse_at_line(lineno, format!("expected `path label split`, got {line:?}")));
        };
        let label = label
            .parse()
            .map_err(|_| Error::parse_at_line(lineno, format!("label {label:?} is not a non-negative integer")))?;
        let split = split.parse().map_err(|e: Error| Error::parse_at_line(lineno, e.to_string()))?;
        out.push(ManifestEntry {
            path: base.join(p),
            label,
            split,
        });
    }
    Ok(out)
}

/// Loads every sample of one split, with labels taken from the manifest.
pub fn load_split(manifest: impl AsRef<Path>, split: SplitName) -> Result<Vec<EventSample>> {
    read_manifest(manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(load_events(&e.path, EventFormat::Binary)?.with_label(Some(e.label))))
        .collect()
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    Ok(Dataset {
        train: load_split(manifest, SplitName::Train)?,
        val: load_split(manifest, SplitName::Val)?,
        test: load_split(manifest, SplitName::Test)?,
    })
}

/// Number of classes implied by the largest label.
pub fn class_count<'a>(samples: impl IntoIterator<Item = &'a EventSample>) -> usize {
    samples.into_iter().filter_map(|s| s.label()).max().map_or(0, |m| m as usize + 1)
}
