use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Prefix,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub match_kind: MatchKind,
    pub pattern: String,
    pub target: String,
}

impl Rule {
    pub fn matches(&self, raw: &str) -> bool {
        match self.match_kind {
            MatchKind::Exact => raw == self.pattern,
            MatchKind::Prefix => raw.starts_with(&self.pattern),
            MatchKind::Contains => raw.contains(&self.pattern),
        }
    }
}

/// Ordered mapping from raw tool output to canonical labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationRules {
    pub rules: Vec<Rule>,
}

impl NormalizationRules {
    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }
}

/// Target of the first rule matching `raw` (surrounding whitespace ignored),
/// or `None` when unmapped.
pub fn normalize_output<'r>(raw: &str, rules: &'r NormalizationRules) -> Option<&'r str> {
    let raw = raw.trim();
    rules.rules.iter().find(|r| r.matches(raw)).map(|r| r.target.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// 1.0 for empty input.
    pub mapped_fraction: f64,
    /// Unmapped outputs with their frequency, most frequent first.
    pub unmapped: Vec<(String, usize)>,
}

pub fn coverage_report<S: AsRef<str>>(raw: &[S], rules: &NormalizationRules) -> Coverage {
    let mut unmapped: BTreeMap<&str, usize> = BTreeMap::new();
    for r in raw {
        if normalize_output(r.as_ref(), rules).is_none() {
            *unmapped.entry(r.as_ref().trim()).or_insert(0) += 1;
        }
    }
    let missed: usize = unmapped.values().sum();
    let mapped_fraction = if raw.is_empty() {
        1.0
    } else {
        (raw.len() - missed) as f64 / raw.len() as f64
    };
    let mut unmapped: Vec<(String, usize)> = unmapped.into_iter().map(|(s, n)| (s.to_owned(), n)).collect();
    unmapped.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Coverage {
        mapped_fraction,
        unmapped,
    }
}

/// The canonical types a tool emitted at least once.
pub fn infer_supported<'a, I, S>(outputs: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = Option<&'a S>>,
    S: AsRef<str> + ?Sized + 'a,
{
    outputs.into_iter().flatten().map(|s| s.as_ref().to_owned()).collect()
}
