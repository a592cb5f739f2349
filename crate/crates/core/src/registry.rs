//! The closed set of canonical content types.
//!
//! Loaded from a JSON array whose order defines type ids. Several file
//! extensions may map to one canonical type (`jpg`/`jpeg`, `exe`/`dll`).

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TXT: &str = "txt";
pub const UNKNOWN: &str = "unknown";
pub const DEFAULT_MIN_SIZE: u64 = 16;

const BUILTIN: &str = include_str!("../data/content_types.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown content type label {0:?}")]
    UnknownLabel(String),
    #[error("no content type claims extension {0:?}")]
    UnmappedExtension(String),
    #[error("invalid registry: {0}")]
    Invalid(String),
    #[error("registry json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("registry io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentType {
    pub id: usize,
    pub label: String,
    pub is_text: bool,
    pub extensions: BTreeSet<String>,
    /// Necessary-condition prefixes: a valid sample starts with one of them.
    pub magic_prefixes: Vec<Vec<u8>>,
    pub min_size_bytes: u64,
}

impl ContentType {
    /// `"txt"` for text types, `"unknown"` otherwise.
    pub fn fallback_label(&self) -> &'static str {
        fallback_label(self)
    }
}

pub fn fallback_label(t: &ContentType) -> &'static str {
    if t.is_text {
        TXT
    } else {
        UNKNOWN
    }
}

/// On-disk form of one registry entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentTypeRecord {
    pub label: String,
    pub is_text: bool,
    #[serde(default)]
    pub extensions: Vec<String>,
    #[serde(default)]
    pub magic_prefixes_hex: Vec<String>,
    #[serde(default = "default_min_size")]
    pub min_size_bytes: u64,
}

fn default_min_size() -> u64 {
    DEFAULT_MIN_SIZE
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    types: Vec<ContentType>,
    by_label: HashMap<String, usize>,
    by_extension: HashMap<String, usize>,
    pub version: u32,
}

impl Registry {
    /// The bundled 113-type registry.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled registry is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, RegistryError> {
        let records: Vec<ContentTypeRecord> = serde_json::from_str(json)?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_records(records: Vec<ContentTypeRecord>) -> Result<Self, RegistryError> {
        let mut types = Vec::with_capacity(records.len());
        let mut by_label = HashMap::new();
        let mut by_extension = HashMap::new();
        for (id, r) in records.into_iter().enumerate() {
            if r.label.is_empty()
                || !r
                    .label
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
            {
                return Err(RegistryError::Invalid(format!("label {:?} is not lowercase ascii", r.label)));
            }
            if by_label.insert(r.label.clone(), id).is_some() {
                return Err(RegistryError::Invalid(format!("duplicate label {:?}", r.label)));
            }
            if r.is_text && !r.magic_prefixes_hex.is_empty() {
                return Err(RegistryError::Invalid(format!(
                    "text type {:?} cannot carry magic prefixes",
                    r.label
                )));
            }
            let mut extensions = BTreeSet::new();
            for ext in r.extensions {
                let ext = ext.to_ascii_lowercase();
                if let Some(prev) = by_extension.insert(ext.clone(), id) {
                    if prev != id {
                        return Err(RegistryError::Invalid(format!(
                            "extension {ext:?} claimed by two types"
                        )));
                    }
                }
                extensions.insert(ext);
            }
            let magic_prefixes = r
                .magic_prefixes_hex
                .iter()
                .map(|h| {
                    hex::decode(h)
                        .map_err(|e| RegistryError::Invalid(format!("bad magic hex {h:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            types.push(ContentType {
                id,
                label: r.label,
                is_text: r.is_text,
                extensions,
                magic_prefixes,
                min_size_bytes: r.min_size_bytes,
            });
        }
        for required in [TXT, UNKNOWN] {
            if !by_label.contains_key(required) {
                return Err(RegistryError::Invalid(format!("missing required type {required:?}")));
            }
        }
        Ok(Self {
            types,
            by_label,
            by_extension,
            version: 1,
        })
    }

    pub fn to_records(&self) -> Vec<ContentTypeRecord> {
        self.types
            .iter()
            .map(|t| ContentTypeRecord {
                label: t.label.clone(),
                is_text: t.is_text,
                extensions: t.extensions.iter().cloned().collect(),
                magic_prefixes_hex: t.magic_prefixes.iter().map(hex::encode).collect(),
                min_size_bytes: t.min_size_bytes,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_records()).expect("records serialize")
    }

    /// A registry restricted to `labels`, re-indexed in the given order.
    pub fn subset(&self, labels: &[&str]) -> Result<Self, RegistryError> {
        let records = self.to_records();
        let picked = labels
            .iter()
            .map(|l| {
                self.id_of(l)
                    .map(|id| records[id].clone())
                    .ok_or_else(|| RegistryError::UnknownLabel(l.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(picked)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[ContentType] {
        &self.types
    }

    pub fn get(&self, id: usize) -> Option<&ContentType> {
        self.types.get(id)
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.by_label.get(label).copied()
    }

    pub fn labels(&self) -> Vec<String> {
        self.types.iter().map(|t| t.label.clone()).collect()
    }

    pub fn lookup_label(&self, label: &str) -> Result<&ContentType, RegistryError> {
        self.id_of(label)
            .map(|id| &self.types[id])
            .ok_or_else(|| RegistryError::UnknownLabel(label.to_string()))
    }

    /// Maps a lowercase extension without leading dot to its canonical type.
    pub fn canonicalize_extension(&self, ext: &str) -> Result<&ContentType, RegistryError> {
        self.by_extension
            .get(ext)
            .map(|&id| &self.types[id])
            .ok_or_else(|| RegistryError::UnmappedExtension(ext.to_string()))
    }
}
