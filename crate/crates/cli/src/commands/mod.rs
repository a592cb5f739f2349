mod bench;
mod corpus;
mod detect;
mod eval;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byseer_core::{load_model, save_model, Detector, Model, Registry};

use crate::error::{io_at, CliError};

pub use bench::bench;
pub use corpus::corpus;
pub use detect::detect;
pub use eval::{calibrate, eval};
pub use train::train;

fn base_registry(path: Option<&Path>) -> Result<Registry, CliError> {
    Ok(match path {
        Some(p) => Registry::load(p)?,
        None => Registry::builtin(),
    })
}

fn read_model(path: &Path) -> Result<Model<f32>, CliError> {
    let file = File::open(path).map_err(|e| CliError::ModelLoad {
        path: path.to_owned(),
        source: e.into(),
    })?;
    load_model(BufReader::new(file)).map_err(|source| CliError::ModelLoad {
        path: path.to_owned(),
        source,
    })
}

fn write_model(model: &Model<f32>, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    save_model(model, &mut w)?;
    w.flush().map_err(io_at(path))
}

/// The registry restricted to the model's labels, in model order.
fn model_registry(model: &Model<f32>, registry: Option<&Path>) -> Result<Registry, CliError> {
    let labels: Vec<&str> = model.labels.iter().map(String::as_str).collect();
    Ok(base_registry(registry)?.subset(&labels)?)
}

fn load_detector(model: &Path, registry: Option<&Path>) -> Result<Detector, CliError> {
    let m = read_model(model)?;
    let reg = model_registry(&m, registry)?;
    Ok(Detector::new(m, reg)?)
}

/// Writes `text` to `path`, or to stdout without one.
fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_at(p)),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(io_at("<stdout>")),
    }
}

/// Files named directly plus every file under named directories, each
/// directory's contents in sorted order.
fn collect_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for e in walkdir::WalkDir::new(p).sort_by_file_name() {
                let e = e.map_err(|e| CliError::Io {
                    path: p.clone(),
                    source: e.into(),
                })?;
                if e.file_type().is_file() {
                    out.push(e.into_path());
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}
