//! Evaluation harness: confusion counts, per-type and macro-averaged scores,
//! tool-output normalization, accuracy by sample size and a timing protocol.

mod normalize;
mod timing;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;

pub use normalize::{
    coverage_report, infer_supported, normalize_output, Coverage, MatchKind, NormalizationRules, Rule,
};
pub use timing::{
    time_runs, time_tool, CommandAdapter, HostInfo, TimingMode, TimingStats, DEFAULT_RUNS,
    DEFAULT_WARMUPS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{gold} gold labels but {predicted} predictions")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("no results to aggregate")]
    EmptyInput,
    #[error("runs must be at least 1")]
    BadRuns,
    #[error("bad command template: {0}")]
    BadTemplate(String),
    #[error("tool exited with {status}: {stderr}")]
    ToolFailed { status: String, stderr: String },
    #[error("tool timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("bad rules file: {0}")]
    Rules(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_type: BTreeMap<String, TypeCounts>,
    pub samples: u64,
}

impl ConfusionCounts {
    pub fn get(&self, label: &str) -> TypeCounts {
        self.per_type.get(label).copied().unwrap_or_default()
    }

    /// Types that occur as a gold label at least once.
    pub fn gold_types(&self) -> BTreeSet<String> {
        self.per_type
            .iter()
            .filter(|(_, c)| c.tp + c.fn_ > 0)
            .map(|(l, _)| l.clone())
            .collect()
    }

    pub fn correct(&self) -> u64 {
        self.per_type.values().map(|c| c.tp).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.samples)
    }
}

/// Tallies TP, FP and FN per type. `None` predictions are unmapped tool
/// outputs: they count as misses for the gold type and as nobody's FP.
pub fn confusion<G, P>(gold: &[G], predicted: &[Option<P>]) -> Result<ConfusionCounts, EvalError>
where
    G: AsRef<str>,
    P: AsRef<str>,
{
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let mut c = ConfusionCounts {
        samples: gold.len() as u64,
        ..Default::default()
    };
    for (g, p) in gold.iter().zip(predicted) {
        let g = g.as_ref();
        match p.as_ref().map(AsRef::as_ref) {
            Some(p) if p == g => c.per_type.entry(g.to_owned()).or_default().tp += 1,
            other => {
                c.per_type.entry(g.to_owned()).or_default().fn_ += 1;
                if let Some(p) = other {
                    c.per_type.entry(p.to_owned()).or_default().fp += 1;
                }
            }
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of one type; every 0/0 is 0.
pub fn prf1(c: &ConfusionCounts, label: &str) -> Prf1 {
    let t = c.get(label);
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    SupportedOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    /// `None` when the group has no types.
    pub mean_f1: Option<f64>,
    pub types: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub scope: Scope,
    pub binary: GroupMean,
    pub text: GroupMean,
    pub overall: GroupMean,
}

/// Unweighted mean F1 over the evaluated types (those with gold samples),
/// grouped by the registry's text flag. Under [`Scope::SupportedOnly`] types
/// outside `supported` are dropped; under [`Scope::All`] they score 0. Types
/// missing from the registry only enter the overall group.
pub fn macro_average(
    c: &ConfusionCounts,
    scope: Scope,
    supported: &BTreeSet<String>,
    reg: &Registry,
) -> MacroAverage {
    let mut sums = [(0.0, 0usize); 3];
    for label in c.gold_types() {
        let f1 = if supported.contains(&label) {
            prf1(c, &label).f1
        } else if scope == Scope::All {
            0.0
        } else {
            continue;
        };
        let mut add = |i: usize| {
            sums[i].0 += f1;
            sums[i].1 += 1;
        };
        add(2);
        if let Ok(t) = reg.lookup_label(&label) {
            add(t.is_text as usize);
        }
    }
    let mean = |(s, n): (f64, usize)| GroupMean {
        mean_f1: (n > 0).then(|| s / n as f64),
        types: n,
    };
    MacroAverage {
        scope,
        binary: mean(sums[0]),
        text: mean(sums[1]),
        overall: mean(sums[2]),
    }
}

/// Per-type table: `label,tp,fp,fn,precision,recall,f1`.
pub fn per_type_csv(c: &ConfusionCounts) -> String {
    let mut out = String::from("label,tp,fp,fn,precision,recall,f1\n");
    for (label, t) in &c.per_type {
        let s = prf1(c, label);
        out.push_str(&format!(
            "{label},{},{},{},{:.6},{:.6},{:.6}\n",
            t.tp, t.fp, t.fn_, s.precision, s.recall, s.f1
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    /// Inclusive lower edge.
    pub lo: u64,
    /// Exclusive upper edge; `None` for the open last bin.
    pub hi: Option<u64>,
    pub count: u64,
    pub accuracy: f64,
}

/// Powers of two from 2⁴ to 2³⁰.
pub fn default_size_edges() -> Vec<u64> {
    (4..=30).map(|e| 1u64 << e).collect()
}

/// Mean accuracy per size bin. `edges` must be increasing; the bins are
/// `[0, e0)`, `[e0, e1)`, ..., `[e_last, ∞)`, and only non-empty bins are
/// returned.
pub fn accuracy_by_size(results: &[(u64, bool)], edges: &[u64]) -> Result<Vec<SizeBin>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut tally = vec![(0u64, 0u64); edges.len() + 1];
    for &(size, ok) in results {
        let b = edges.partition_point(|&e| e <= size);
        tally[b].0 += 1;
        tally[b].1 += ok as u64;
    }
    Ok(tally
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0)
        .map(|(b, (n, ok))| SizeBin {
            lo: if b == 0 { 0 } else { edges[b - 1] },
            hi: edges.get(b).copied(),
            count: n,
            accuracy: ok as f64 / n as f64,
        })
        .collect())
}

/// JSON summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tool: String,
    pub samples: u64,
    pub accuracy: f64,
    pub supported: Vec<String>,
    pub macro_supported_only: MacroAverage,
    pub macro_all: MacroAverage,
    pub size_curve: Vec<SizeBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingStats>,
    pub host: HostInfo,
}

impl EvalSummary {
    /// Scores `predicted` against `gold`; `sizes` are the sample byte
    /// lengths. Without an explicit `supported` set it is inferred from the
    /// predictions.
    pub fn build<G: AsRef<str>, P: AsRef<str>>(
        tool: &str,
        gold: &[G],
        predicted: &[Option<P>],
        sizes: &[u64],
        supported: Option<BTreeSet<String>>,
        reg: &Registry,
    ) -> Result<(Self, ConfusionCounts), EvalError> {
        let c = confusion(gold, predicted)?;
        if sizes.len() != gold.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                predicted: sizes.len(),
            });
        }
        let supported = supported.unwrap_or_else(|| infer_supported(predicted.iter().map(|p| p.as_ref())));
        let results: Vec<(u64, bool)> = sizes
            .iter()
            .zip(gold.iter().zip(predicted))
            .map(|(&s, (g, p))| (s, p.as_ref().is_some_and(|p| p.as_ref() == g.as_ref())))
            .collect();
        let summary = Self {
            tool: tool.to_owned(),
            samples: c.samples,
            accuracy: c.accuracy(),
            supported: supported.iter().cloned().collect(),
            macro_supported_only: macro_average(&c, Scope::SupportedOnly, &supported, reg),
            macro_all: macro_average(&c, Scope::All, &supported, reg),
            size_curve: accuracy_by_size(&results, &default_size_edges())?,
            timing: None,
            host: HostInfo::current(),
        };
        Ok((summary, c))
    }
}
