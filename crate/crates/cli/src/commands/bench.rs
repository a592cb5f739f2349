use std::time::Duration;

use byseer_core::evalbench::{time_runs, time_tool, CommandAdapter, EvalError, HostInfo, TimingMode};

use super::{collect_files, emit, load_detector};
use crate::error::{io_at, CliError};
use crate::{BenchArgs, ModeArg};

fn quote(s: &str) -> Result<String, CliError> {
    shlex::try_quote(s)
        .map(|q| q.into_owned())
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    let files = collect_files(&a.paths)?;
    if files.is_empty() {
        return Err(CliError::NoInputs);
    }
    let mode = match a.mode {
        ModeArg::Single => TimingMode::Single,
        ModeArg::Batch => TimingMode::Batch,
    };
    let registry = a.registry.as_deref();
    let (subject, stats) = match (&a.subject.model, &a.subject.command) {
        (Some(model), _) if a.in_process => {
            // single mode reloads the model per file, batch mode loads it once
            let stats = time_runs(a.runs, a.warmups, files.len(), mode, || {
                let mut det = None;
                for f in &files {
                    if det.is_none() || mode == TimingMode::Single {
                        det = Some(load_detector(model, registry).map_err(|e| EvalError::Io(std::io::Error::other(e.to_string())))?);
                    }
                    det.as_ref().expect("loaded").predict_path(f)?;
                }
                Ok(())
            })?;
            (format!("in-process {}", model.display()), stats)
        }
        (Some(model), _) => {
            let exe = std::env::current_exe().map_err(io_at("<current exe>"))?;
            let mut template = format!(
                "{} detect --threads 1 --model {}",
                quote(&exe.to_string_lossy())?,
                quote(&model.to_string_lossy())?
            );
            if let Some(r) = registry {
                template += &format!(" --registry {}", quote(&r.to_string_lossy())?);
            }
            template += if mode == TimingMode::Single { " {file}" } else { " {files}" };
            let stats = time_tool(&adapter(&template, a.timeout)?, &files, a.runs, a.warmups, mode)?;
            (template, stats)
        }
        (None, Some(cmd)) => {
            let stats = time_tool(&adapter(cmd, a.timeout)?, &files, a.runs, a.warmups, mode)?;
            (cmd.clone(), stats)
        }
        (None, None) => unreachable!("clap requires a subject"),
    };
    let report = serde_json::json!({
        "subject": subject,
        "timing": stats,
        "host": HostInfo::current(),
    });
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report).expect("json") + "\n"))
}

fn adapter(template: &str, timeout: Option<f64>) -> Result<CommandAdapter, CliError> {
    let a = CommandAdapter::new(template)?;
    Ok(match timeout {
        Some(t) => a.with_timeout(Duration::from_secs_f64(t)),
        None => a,
    })
}
