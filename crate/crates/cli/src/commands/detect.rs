use std::io::{BufWriter, Write};

use rayon::prelude::*;
use serde::Serialize;

use super::load_detector;
use crate::error::{io_at, CliError};
use crate::DetectArgs;

#[derive(Debug, Serialize)]
struct Record<'a> {
    path: &'a str,
    label: Option<&'a str>,
    score: Option<f32>,
    fallback: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn detect(a: DetectArgs) -> Result<(), CliError> {
    if a.paths.is_empty() {
        return Err(CliError::NoInputs);
    }
    let mut det = load_detector(&a.model.model, a.model.registry.as_deref())?;
    if a.no_thresholds {
        det = det.without_thresholds();
    }
    let mut paths = a.paths;
    paths.sort();
    let results: Vec<_> = paths.par_iter().map(|p| det.predict_path(p)).collect();

    let mut out = BufWriter::new(std::io::stdout().lock());
    let mut failures = 0;
    for (path, result) in paths.iter().zip(results) {
        let shown = path.to_string_lossy();
        let line = match (&result, a.json) {
            (Ok(p), false) => format!("{shown}\t{}\t{:.6}\t{}", p.decided_label, p.top_score, p.fell_back),
            (Err(e), false) => {
                failures += 1;
                eprintln!("byseer: {shown}: {e}");
                continue;
            }
            (r, true) => {
                let rec = match r {
                    Ok(p) => Record {
                        path: &shown,
                        label: Some(&p.decided_label),
                        score: Some(p.top_score),
                        fallback: Some(p.fell_back),
                        error: None,
                    },
                    Err(e) => {
                        failures += 1;
                        Record {
                            path: &shown,
                            label: None,
                            score: None,
                            fallback: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                serde_json::to_string(&rec).expect("record serializes")
            }
        };
        writeln!(out, "{line}").map_err(io_at("<stdout>"))?;
    }
    out.flush().map_err(io_at("<stdout>"))?;
    if failures > 0 {
        return Err(CliError::PartialFailure(failures));
    }
    Ok(())
}
