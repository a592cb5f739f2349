use byseer_core::corpus::{build_manifest, jsonl, split_dataset, write_toy_corpus, SplitCounts};

use super::{base_registry, emit};
use crate::error::CliError;
use crate::CorpusCommand;

fn parse_split(s: &str) -> Result<SplitCounts, CliError> {
    let bad = || CliError::Usage(format!("--split wants TRAIN/VAL/TEST counts, got {s:?}"));
    let parts: Vec<usize> = s
        .split('/')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[train, val, test] => Ok(SplitCounts { train, val, test }),
        _ => Err(bad()),
    }
}

pub fn corpus(c: CorpusCommand) -> Result<(), CliError> {
    match c {
        CorpusCommand::Synth { out, per_type, seed } => {
            write_toy_corpus(&out, per_type, seed)?;
            Ok(())
        }
        CorpusCommand::Build {
            root,
            out,
            rejects,
            registry,
            split,
            seed,
            floor,
        } => {
            let counts = split.as_deref().map(parse_split).transpose()?;
            let reg = base_registry(registry.as_deref())?;
            let (mut manifest, rejected) = build_manifest(&root, &reg)?;
            if let Some(counts) = counts {
                manifest = split_dataset(&manifest, counts, seed, floor)?;
            }
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            let out = out.unwrap_or_else(|| root.join("manifest.jsonl"));
            manifest.save(&out)?;
            let rejects = rejects.unwrap_or_else(|| out.with_extension("rejects.jsonl"));
            emit(Some(&rejects), &jsonl(&rejected))?;
            let mut report = format!("digest\t{}\nrejected\t{}\n", manifest.digest(), rejected.len());
            for ((label, split), n) in manifest.counts() {
                report += &format!("{label}\t{split}\t{n}\n");
            }
            emit(None, &report)
        }
    }
}
