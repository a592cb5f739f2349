//! Content-type detection from raw bytes.
//!
//! A file's leading, middle and trailing bytes become a fixed token vector
//! ([`features`]), a small network maps it to a probability per content type
//! ([`model`], built on the [`nn`] engine), and per-type thresholds turn the
//! top probability into a label or a `txt`/`unknown` fallback ([`calibrate`]).
//! [`trainer`], [`corpus`] and [`evalbench`] cover training, dataset
//! preparation and evaluation.
//!
//! ```
//! use byseer_core::{Arch, Detector, Model, Registry};
//!
//! let registry = Registry::builtin();
//! let model = Model::init(Arch::STANDARD, registry.labels(), 0).unwrap();
//! let detector = Detector::new(model, registry).unwrap();
//! let p = detector.predict(b"#!/bin/sh\necho hello\n");
//! assert_eq!(p.probabilities.len(), 113);
//! ```

pub mod calibrate;
pub mod corpus;
pub mod evalbench;
pub mod features;
pub mod nn;
pub mod model;
pub mod registry;
pub mod trainer;

pub use calibrate::{calibrate_thresholds, decide, Decision, ScoredSample, ThresholdTable};
pub use corpus::{Manifest, Sample, Split};
pub use features::{extract_features, FeatureVector};
pub use model::{load_model, save_model, Arch, Detector, Model, ModelError, Prediction};
pub use registry::{ContentType, Registry};
pub use trainer::{train, Example, TrainConfig, TrainHistory};
