//! Labeled datasets: validation gates, synthetic samples, stratified splits
//! and JSON Lines manifests.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::extract_features_from_path;
use crate::registry::{ContentType, Registry};
use crate::trainer::Example;

pub use synth::{
    gen_synthetic_txt, gen_synthetic_unknown, gen_toy_sample, write_toy_corpus, SYNTHETIC_PREFIX,
    TOY_LABELS,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("length range [{min}, {max}] is invalid (need 16 <= min <= max)")]
    BadRange { min: usize, max: usize },
    #[error("directory {0:?} does not name a registered content type")]
    UnknownLabelDir(String),
    #[error("{label}: {available} samples, below the floor of {floor}")]
    InsufficientSamples { label: String, available: usize, floor: usize },
    #[error("duplicate manifest path {0:?}")]
    DuplicatePath(String),
    #[error("no toy generator for {0:?}")]
    NoGenerator(String),
    #[error("manifest line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest label {0:?} is not in the registry")]
    UnknownLabel(String),
    #[error("walk error: {0}")]
    Walk(#[from] walkdir::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    TooSmall,
    MagicMismatch,
    NotText,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::TooSmall => "too_small",
            RejectReason::MagicMismatch => "magic_mismatch",
            RejectReason::NotText => "not_text",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

/// True when `data` is valid UTF-8 and every ASCII byte is tab, newline,
/// carriage return or printable.
pub fn is_text(data: &[u8]) -> bool {
    let printable = data
        .iter()
        .all(|&b| b >= 0x80 || matches!(b, 0x09 | 0x0A | 0x0D | 0x20..=0x7E));
    printable && std::str::from_utf8(data).is_ok()
}

/// Necessary-condition checks for a sample claimed to be of type `claimed`:
/// minimum size, magic prefix for binary types, text encoding for text types.
pub fn validate_sample(data: &[u8], claimed: &ContentType) -> Verdict {
    if (data.len() as u64) < claimed.min_size_bytes {
        return Verdict::Rejected(RejectReason::TooSmall);
    }
    if claimed.is_text {
        if !is_text(data) {
            return Verdict::Rejected(RejectReason::NotText);
        }
    } else if !claimed.magic_prefixes.is_empty()
        && !claimed.magic_prefixes.iter().any(|m| data.starts_with(m))
    {
        return Verdict::Rejected(RejectReason::MagicMismatch);
    }
    // trustworthiness screening is delegated to the data provider
    Verdict::Accepted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Path relative to the corpus root, `/`-separated.
    pub path: String,
    pub label: String,
    pub split: Split,
    pub size: u64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub path: String,
    pub label: String,
    pub size: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Sorted by path.
    pub entries: Vec<Sample>,
    /// Human-readable notes, e.g. about shrunken splits.
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(mut entries: Vec<Sample>) -> Result<Self, CorpusError> {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        if let Some(w) = entries.windows(2).find(|w| w[0].path == w[1].path) {
            return Err(CorpusError::DuplicatePath(w[0].path.clone()));
        }
        Ok(Self {
            entries,
            warnings: Vec::new(),
        })
    }

    pub fn counts(&self) -> BTreeMap<(String, Split), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.label.clone(), e.split)).or_insert(0) += 1;
        }
        out
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        jsonl(&self.entries)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| CorpusError::Parse { line: i + 1, source }))
            .collect::<Result<Vec<Sample>, _>>()?;
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        Self::from_jsonl(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    /// SHA-256 of the canonical JSON Lines form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("plain records serialize"));
        out.push('\n');
    }
    out
}

/// Walks `root/<label>/...`, validating every file against its directory's
/// type. Accepted files enter the manifest unassigned; files whose name
/// starts with [`SYNTHETIC_PREFIX`] are marked synthetic.
pub fn build_manifest(root: impl AsRef<Path>, reg: &Registry) -> Result<(Manifest, Vec<Reject>), CorpusError> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(root))?;
    dirs.sort_by_key(|d| d.file_name());
    for dir in dirs {
        let path = dir.path();
        if !path.is_dir() {
            continue;
        }
        let name = dir.file_name().to_string_lossy().into_owned();
        let ty = reg.lookup_label(&name).map_err(|_| CorpusError::UnknownLabelDir(name.clone()))?;
        for entry in walkdir::WalkDir::new(&path).sort_by_file_name() {
            let entry = entry?;
            if !entry.file_type().is_file() {
                continue;
            }
            let data = std::fs::read(entry.path()).map_err(io_err(entry.path()))?;
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let size = data.len() as u64;
            match validate_sample(&data, ty) {
                Verdict::Accepted => {
                    let synthetic = entry.file_name().to_string_lossy().starts_with(SYNTHETIC_PREFIX);
                    entries.push(Sample {
                        path: rel,
                        label: name.clone(),
                        split: Split::Unassigned,
                        size,
                        origin: if synthetic { Origin::Synthetic } else { Origin::Real },
                    });
                }
                Verdict::Rejected(reason) => rejects.push(Reject {
                    path: rel,
                    label: name.clone(),
                    size,
                    reason,
                }),
            }
        }
    }
    Ok((Manifest::new(entries)?, rejects))
}

/// Requested samples per type and split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Deterministic stratified split. Each type's samples are shuffled and dealt
/// into train, val and test; surplus stays unassigned. A type with fewer
/// samples than requested gets proportionally smaller splits and a warning;
/// below `floor` samples it is an error.
pub fn split_dataset(
    manifest: &Manifest,
    per_type: SplitCounts,
    seed: u64,
    floor: usize,
) -> Result<Manifest, CorpusError> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_label.entry(&e.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = Split::Unassigned;
    }
    for (label, mut idx) in by_label {
        let available = idx.len();
        if available < floor {
            return Err(CorpusError::InsufficientSamples {
                label: label.to_owned(),
                available,
                floor,
            });
        }
        idx.shuffle(&mut rng);
        let want = per_type.total();
        let counts = if available >= want {
            per_type
        } else {
            let shrink = |n: usize| n * available / want.max(1);
            let (train, val) = (shrink(per_type.train), shrink(per_type.val));
            let test = available - train - val;
            out.warnings.push(format!(
                "{label}: {available} samples for {want} requested; split {train}/{val}/{test}"
            ));
            SplitCounts { train, val, test }
        };
        let plan = [(Split::Train, counts.train), (Split::Val, counts.val), (Split::Test, counts.test)];
        let mut it = idx.into_iter();
        for (split, n) in plan {
            for i in it.by_ref().take(n) {
                out.entries[i].split = split;
            }
        }
    }
    Ok(out)
}

/// Featurizes the `split` entries of `manifest` (paths relative to `root`),
/// labeling them with their ids in `reg`.
pub fn load_examples(
    root: impl AsRef<Path>,
    manifest: &Manifest,
    split: Split,
    reg: &Registry,
) -> Result<Vec<Example>, CorpusError> {
    let root = root.as_ref();
    manifest
        .in_split(split)
        .map(|e| {
            let label = reg.id_of(&e.label).ok_or_else(|| CorpusError::UnknownLabel(e.label.clone()))?;
            let path = root.join(&e.path);
            let features = extract_features_from_path(&path).map_err(io_err(&path))?;
            Ok(Example { features, label })
        })
        .collect()
}

#[cfg(test)]
mod tests;
