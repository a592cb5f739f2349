use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use byseer_core::calibrate::CalibrateError;
use byseer_core::corpus::load_examples;
use byseer_core::evalbench::{
    coverage_report, normalize_output, per_type_csv, CommandAdapter, EvalSummary, NormalizationRules,
};
use byseer_core::{calibrate_thresholds, Manifest, ScoredSample, Split};
use rayon::prelude::*;

use super::{base_registry, emit, load_detector, model_registry, read_model, write_model};
use crate::error::{io_at, CliError};
use crate::{CalibrateArgs, EvalArgs};

pub fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut model = read_model(&a.model.model)?;
    let reg = model_registry(&model, a.model.registry.as_deref())?;
    let manifest = Manifest::load(&a.data.manifest)?;
    let examples = load_examples(a.data.root(), &manifest, a.split.into(), &reg)?;
    if examples.is_empty() {
        return Err(CalibrateError::EmptyInput.into());
    }
    let samples = examples
        .par_iter()
        .map(|e| {
            model.probabilities(&e.features).map(|probabilities| ScoredSample {
                gold_id: e.label,
                probabilities,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(byseer_core::ModelError::from)?;
    let table = calibrate_thresholds(&samples, a.target_precision, &reg)?;
    model.thresholds = table.theta.clone();
    write_model(&model, a.out.as_deref().unwrap_or(&a.model.model))?;
    let unreachable = table.achieved.iter().filter(|t| !t.achievable).count();
    if unreachable > 0 {
        eprintln!(
            "{unreachable} type(s) cannot reach precision {}; they only fall back",
            a.target_precision
        );
    }
    emit(a.report.as_deref(), &table.to_csv(&reg))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.data.manifest)?;
    let root = a.data.root();
    let split: Split = a.split.into();
    let entries: Vec<_> = manifest.in_split(split).collect();
    if entries.is_empty() {
        return Err(CliError::NoInputs);
    }
    let gold: Vec<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    let sizes: Vec<u64> = entries.iter().map(|e| e.size).collect();
    let paths: Vec<_> = entries.iter().map(|e| root.join(&e.path)).collect();

    let (tool, predicted, supported, registry) = if let Some(model) = &a.subject.model {
        let mut det = load_detector(model, a.registry.as_deref())?;
        if a.no_thresholds {
            det = det.without_thresholds();
        }
        let predicted = paths
            .par_iter()
            .map(|p| det.predict_path(p).map(|r| Some(r.decided_label)).map_err(io_at(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let supported: BTreeSet<String> = det.registry().labels().into_iter().collect();
        (model.to_string_lossy().into_owned(), predicted, Some(supported), det.registry().clone())
    } else {
        let template = a.subject.command.as_deref().expect("clap requires a subject");
        let rules_path = a
            .rules
            .as_deref()
            .ok_or_else(|| CliError::Usage("--command needs --rules".into()))?;
        let rules = NormalizationRules::load(rules_path)?;
        let mut adapter = CommandAdapter::new(template)?;
        if let Some(t) = a.timeout {
            adapter = adapter.with_timeout(Duration::from_secs_f64(t));
        }
        let raw = paths
            .par_iter()
            .map(|p| adapter.run(std::slice::from_ref(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let coverage = coverage_report(&raw, &rules);
        eprintln!("mapped {:.2}% of tool outputs", coverage.mapped_fraction * 100.0);
        if let Some(dir) = &a.out_dir {
            write_json(dir, "coverage.json", &coverage)?;
        }
        let predicted = raw.iter().map(|r| normalize_output(r, &rules).map(str::to_owned)).collect();
        let registry = base_registry(a.registry.as_deref())?;
        (template.to_owned(), predicted, None, registry)
    };

    let (summary, counts) = EvalSummary::build(&tool, &gold, &predicted, &sizes, supported, &registry)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        let csv = dir.join("per_type.csv");
        emit(Some(&csv), &per_type_csv(&counts))?;
        write_json(dir, "summary.json", &summary)?;
    }
    emit(None, &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    emit(Some(&dir.join(name)), &text)
}
