//! Deterministic training: soft-label cross-entropy, Adam, 1D CutMix and
//! type-balanced batches.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calibrate::argmax;
use crate::features::{FeatureVector, FEATURE_LEN};
use crate::model::{Model, Regularization};
use crate::nn::{cross_entropy, softmax, NnError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("parameter/gradient shape mismatch at tensor {0}")]
    ShapeMismatch(usize),
    #[error("type id {0} has no training samples")]
    EmptyType(usize),
    #[error("the {0} set is empty")]
    EmptySet(&'static str),
    #[error("label {label} out of range for {k} classes")]
    BadLabel { label: usize, k: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },
    #[error("epoch callback failed: {0}")]
    Callback(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub cutmix_rate: f64,
    pub seed: u64,
    pub dropout: f64,
    pub spatial_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            epochs: 30,
            cutmix_rate: 0.05,
            seed: 0,
            dropout: 0.1,
            spatial_dropout: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.cutmix_rate) {
            return bad("cutmix_rate must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        for r in [self.dropout, self.spatial_dropout] {
            if !(0.0..1.0).contains(&r) {
                return bad("dropout rates must be in [0, 1)");
            }
        }
        Ok(())
    }

    fn regularization(&self) -> Regularization {
        Regularization {
            spatial_dropout: self.spatial_dropout,
            dropout: self.dropout,
        }
    }
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor<f32>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update, `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step(
    params: &mut [&mut Tensor<f32>],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch(params.len().min(grads.len())));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TrainError::ShapeMismatch(i));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    // moments are stored in f32; the update itself is computed in f64
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(&mut state.v)) {
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &gv), (mv, vv)) in iter {
            let gv = gv as f64;
            let m_new = b1 * *mv as f64 + (1.0 - b1) * gv;
            let v_new = b2 * *vv as f64 + (1.0 - b2) * gv * gv;
            *mv = m_new as f32;
            *vv = v_new as f32;
            let step = cfg.lr * (m_new / c1) / ((v_new / c2).sqrt() + cfg.eps);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}

/// A featurized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: usize,
}

pub fn one_hot(k: usize, label: usize) -> Vec<f32> {
    let mut y = vec![0.0; k];
    y[label] = 1.0;
    y
}

/// Replaces `round((1 − λ)·len)` tokens of `a` starting at `start` with the
/// same span of `b`; the label becomes `λ·y_a + (1 − λ)·y_b`.
///
/// `start` is clamped so the span fits.
pub fn cutmix_span(
    a: &[u16],
    ya: &[f32],
    b: &[u16],
    yb: &[f32],
    lambda: f64,
    start: usize,
) -> (Vec<u16>, Vec<f32>) {
    let len = ((1.0 - lambda) * a.len() as f64).round() as usize;
    let start = start.min(a.len() - len);
    let mut tokens = a.to_vec();
    tokens[start..start + len].copy_from_slice(&b[start..start + len]);
    let lam = lambda as f32;
    let label = ya.iter().zip(yb).map(|(&p, &q)| lam * p + (1.0 - lam) * q).collect();
    (tokens, label)
}

/// CutMix with `λ ~ U(0, 1)` and a uniformly placed span.
pub fn cutmix(
    a: &[u16],
    ya: &[f32],
    b: &[u16],
    yb: &[f32],
    rng: &mut dyn RngCore,
) -> (Vec<u16>, Vec<f32>) {
    let lambda: f64 = rng.random();
    let len = ((1.0 - lambda) * a.len() as f64).round() as usize;
    let start = rng.random_range(0..=a.len() - len);
    cutmix_span(a, ya, b, yb, lambda, start)
}

/// Splits one epoch (`labels.len()` draws) into batches whose per-type
/// counts differ by at most one.
///
/// Each type draws from its own shuffled pool, reshuffled when exhausted;
/// the types receiving the remainder slots rotate randomly per batch, and
/// each batch is shuffled.
pub fn make_balanced_batches(
    labels: &[usize],
    k: usize,
    batch_size: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(TrainError::BadLabel { label: l, k });
        }
        pools[l].push(i);
    }
    if let Some(t) = pools.iter().position(Vec::is_empty) {
        return Err(TrainError::EmptyType(t));
    }
    for p in &mut pools {
        p.shuffle(rng);
    }
    let mut cursor = vec![0usize; k];
    let mut remaining = labels.len();
    let mut batches = Vec::with_capacity(labels.len().div_ceil(batch_size));
    let mut order: Vec<usize> = (0..k).collect();
    while remaining > 0 {
        let size = batch_size.min(remaining);
        remaining -= size;
        order.shuffle(rng);
        let mut counts = vec![size / k; k];
        for &t in &order[..size % k] {
            counts[t] += 1;
        }
        let mut batch = Vec::with_capacity(size);
        for (t, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                if cursor[t] == pools[t].len() {
                    pools[t].shuffle(rng);
                    cursor[t] = 0;
                }
                batch.push(pools[t][cursor[t]]);
                cursor[t] += 1;
            }
        }
        batch.shuffle(rng);
        batches.push(batch);
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
        out
    }
}

/// Mean hard-label cross-entropy and accuracy in eval mode.
pub fn evaluate(model: &Model<f32>, set: &[Example]) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let k = model.k();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in set {
        let p = softmax(&model.eval_logits(ex.features.tokens(), None)?);
        loss += cross_entropy(&p, &one_hot(k, ex.label))? as f64;
        correct += usize::from(argmax(p.data()).0 == ex.label);
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

const STREAM_BATCHES: u64 = 0;
const STREAM_AUGMENT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generator that drives [`make_balanced_batches`] inside [`train`].
pub fn batch_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, STREAM_BATCHES)
}

pub type EpochCallback<'a> = dyn FnMut(&EpochStats, &Model<f32>) -> std::io::Result<()> + 'a;

/// Trains for `cfg.epochs` epochs and reports validation metrics after each.
///
/// Batching, augmentation and dropout draw from three independent streams of
/// `cfg.seed`, so the run is a pure function of (model, data, config).
pub fn train(
    mut model: Model<f32>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<(Model<f32>, TrainHistory), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let k = model.k();
    for ex in train_set.iter().chain(val_set) {
        if ex.label >= k {
            return Err(TrainError::BadLabel { label: ex.label, k });
        }
        debug_assert_eq!(ex.features.tokens().len(), FEATURE_LEN);
    }
    let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
    let mut batch_rng = stream(cfg.seed, STREAM_BATCHES);
    let mut aug_rng = stream(cfg.seed, STREAM_AUGMENT);
    let mut drop_rng = stream(cfg.seed, STREAM_DROPOUT);
    let reg = cfg.regularization();
    let mut adam = AdamState::new(&model.params());
    let mut grads = model.zero_grads();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let batches = make_balanced_batches(&labels, k, cfg.batch_size, &mut batch_rng)?;
        let mut loss_sum = 0.0f64;
        for (bi, batch) in batches.iter().enumerate() {
            for g in &mut grads {
                g.data_mut().fill(0.0);
            }
            let scale = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let ex = &train_set[i];
                let y = one_hot(k, ex.label);
                let mixed;
                let (tokens, target) = if cfg.cutmix_rate > 0.0 && aug_rng.random::<f64>() < cfg.cutmix_rate {
                    let partner = &train_set[batch[aug_rng.random_range(0..batch.len())]];
                    mixed = cutmix(
                        ex.features.tokens(),
                        &y,
                        partner.features.tokens(),
                        &one_hot(k, partner.label),
                        &mut aug_rng,
                    );
                    (mixed.0.as_slice(), mixed.1.as_slice())
                } else {
                    (ex.features.tokens(), y.as_slice())
                };
                let (tape, _, loss) = model.forward_tape(tokens, target, reg, Some(&mut drop_rng))?;
                crate::nn::backward_into(&tape, &model.params(), scale, &mut grads)?;
                batch_loss += loss as f64;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::TrainingDiverged { epoch, batch: bi });
            }
            loss_sum += batch_loss;
            adam_step(&mut model.params_mut(), &grads, &mut adam, cfg)?;
        }
        let (val_loss, val_accuracy) = evaluate(&model, val_set)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / labels.len() as f64,
            val_loss,
            val_accuracy,
        };
        if !model.all_finite() {
            return Err(TrainError::TrainingDiverged { epoch, batch: batches.len() });
        }
        history.epochs.push(stats);
        on_epoch(&stats, &model)?;
    }
    Ok((model, history))
}
