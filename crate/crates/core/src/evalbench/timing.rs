use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::EvalError;

pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_WARMUPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// One invocation per file.
    Single,
    /// One invocation over all files.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mode: TimingMode,
    pub runs: usize,
    pub warmups: usize,
    pub num_samples: usize,
    /// Mean wall time of one run over the whole sample set.
    pub mean_ms: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub stddev_ms: f64,
    /// `mean_ms / num_samples`.
    pub amortized_ms: f64,
    /// Measured run times, warmups excluded.
    pub run_ms: Vec<f64>,
}

/// Host description recorded next to timings; the harness does no CPU
/// pinning itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_owned(),
            arch: std::env::consts::ARCH.to_owned(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Calls `run` `warmups` times unmeasured, then `runs` times measured.
pub fn time_runs<F>(
    runs: usize,
    warmups: usize,
    num_samples: usize,
    mode: TimingMode,
    mut run: F,
) -> Result<TimingStats, EvalError>
where
    F: FnMut() -> Result<(), EvalError>,
{
    if runs == 0 {
        return Err(EvalError::BadRuns);
    }
    for _ in 0..warmups {
        run()?;
    }
    let mut run_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        run()?;
        run_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = runs as f64;
    let mean_ms = run_ms.iter().sum::<f64>() / n;
    let stddev_ms = if runs > 1 {
        (run_ms.iter().map(|x| (x - mean_ms).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TimingStats {
        mode,
        runs,
        warmups,
        num_samples,
        mean_ms,
        stddev_ms,
        amortized_ms: mean_ms / num_samples.max(1) as f64,
        run_ms,
    })
}

/// External tool invoked through a shell-quoted command template. `{file}`
/// inside an argument is replaced by one path; an argument that is exactly
/// `{files}` expands to all paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandAdapter {
    argv: Vec<String>,
    pub timeout: Option<Duration>,
}

impl CommandAdapter {
    pub fn new(template: &str) -> Result<Self, EvalError> {
        let argv = shlex::split(template)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| EvalError::BadTemplate(template.to_owned()))?;
        if !argv.iter().any(|a| a.contains("{file}") || a == "{files}") {
            return Err(EvalError::BadTemplate(format!("{template}: no {{file}} or {{files}} placeholder")));
        }
        Ok(Self { argv, timeout: None })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn supports(&self, mode: TimingMode) -> bool {
        match mode {
            TimingMode::Single => self.argv.iter().any(|a| a.contains("{file}")),
            TimingMode::Batch => self.argv.iter().any(|a| a == "{files}"),
        }
    }

    /// Expanded argument vector for `files`.
    pub fn expand<P: AsRef<Path>>(&self, files: &[P]) -> Result<Vec<String>, EvalError> {
        let paths: Vec<String> = files.iter().map(|p| p.as_ref().to_string_lossy().into_owned()).collect();
        let mut out = Vec::new();
        for a in &self.argv {
            if a == "{files}" {
                out.extend(paths.iter().cloned());
            } else if a.contains("{file}") {
                match paths.as_slice() {
                    [one] => out.push(a.replace("{file}", one)),
                    _ => return Err(EvalError::BadTemplate("{file} needs exactly one path".into())),
                }
            } else {
                out.push(a.clone());
            }
        }
        Ok(out)
    }

    /// Runs the tool on `files` and returns its standard output.
    pub fn run<P: AsRef<Path>>(&self, files: &[P]) -> Result<String, EvalError> {
        let argv = self.expand(files)?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let drain = |mut r: Box<dyn Read + Send>| {
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = r.read_to_end(&mut buf);
                buf
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped")));
        let err = drain(Box::new(child.stderr.take().expect("piped")));
        let status = match self.timeout {
            Some(t) => match child.wait_timeout(t)? {
                Some(s) => s,
                None => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(EvalError::Timeout(t));
                }
            },
            None => child.wait()?,
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::ToolFailed {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&stderr).trim().to_owned(),
            });
        }
        Ok(String::from_utf8_lossy(&stdout).into_owned())
    }
}

/// Timing protocol for an external tool. A run processes every file once,
/// either with one invocation per file or with a single batch invocation.
pub fn time_tool<P: AsRef<Path>>(
    adapter: &CommandAdapter,
    files: &[P],
    runs: usize,
    warmups: usize,
    mode: TimingMode,
) -> Result<TimingStats, EvalError> {
    if !adapter.supports(mode) {
        return Err(EvalError::BadTemplate(format!("template has no placeholder for {mode:?} mode")));
    }
    time_runs(runs, warmups, files.len(), mode, || {
        match mode {
            TimingMode::Single => {
                for f in files {
                    adapter.run(std::slice::from_ref(f))?;
                }
            }
            TimingMode::Batch => {
                adapter.run(files)?;
            }
        }
        Ok(())
    })
}
