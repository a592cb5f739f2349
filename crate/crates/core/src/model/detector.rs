use std::path::Path;

use super::{Model, ModelError};
use crate::calibrate::{argmax, decide};
use crate::features::{
    extract_features, extract_features_from_path, FeatureVector, FEATURE_LEN, VOCAB,
};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f32>,
    pub top_id: usize,
    pub top_score: f32,
    pub decided_label: String,
    pub fell_back: bool,
}

/// A model bound to the registry whose labels it predicts.
///
/// Immutable once built; share it freely across threads.
#[derive(Debug, Clone)]
pub struct Detector {
    model: Model<f32>,
    registry: Registry,
    thresholds: Vec<f32>,
}

impl Detector {
    pub fn new(model: Model<f32>, registry: Registry) -> Result<Self, ModelError> {
        if model.arch.tokens() != FEATURE_LEN || model.arch.vocab != VOCAB {
            return Err(ModelError::IncompatibleInput(format!("{:?}", model.arch)));
        }
        let labels = registry.labels();
        if labels.len() != model.labels.len() {
            return Err(ModelError::LabelMismatch(format!(
                "model has {} labels, registry has {}",
                model.labels.len(),
                labels.len()
            )));
        }
        if let Some((i, (m, r))) = model
            .labels
            .iter()
            .zip(&labels)
            .enumerate()
            .find(|(_, (m, r))| m.as_str() != r.as_str())
        {
            return Err(ModelError::LabelMismatch(format!(
                "id {i} is {m:?} in the model but {r:?} in the registry"
            )));
        }
        let thresholds = model.thresholds.clone();
        Ok(Self {
            model,
            registry,
            thresholds,
        })
    }

    /// Detector over the subset of the built-in registry named by the model.
    pub fn with_builtin_registry(model: Model<f32>) -> Result<Self, ModelError> {
        let labels: Vec<&str> = model.labels.iter().map(String::as_str).collect();
        let registry = Registry::builtin()
            .subset(&labels)
            .map_err(|e| ModelError::LabelMismatch(e.to_string()))?;
        Self::new(model, registry)
    }

    /// Ignore the calibrated thresholds and report the plain argmax.
    pub fn without_thresholds(mut self) -> Self {
        self.thresholds.fill(0.0);
        self
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn predict_features(&self, f: &FeatureVector) -> Prediction {
        let probabilities = self
            .model
            .probabilities(f)
            .expect("feature vectors always match the standard token count");
        let (top_id, top_score) = argmax(&probabilities);
        let d = decide(&probabilities, &self.thresholds, &self.registry);
        Prediction {
            probabilities,
            top_id,
            top_score,
            decided_label: d.label,
            fell_back: d.fell_back,
        }
    }

    pub fn predict(&self, data: &[u8]) -> Prediction {
        self.predict_features(&extract_features(data))
    }

    pub fn predict_path(&self, path: impl AsRef<Path>) -> std::io::Result<Prediction> {
        Ok(self.predict_features(&extract_features_from_path(path)?))
    }
}
