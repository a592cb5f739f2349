use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, Regularization};
use crate::nn::{backward, cross_entropy, grad_check_coords, softmax, GradCheckReport, NnError};

/// Which parameters a model gradient check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSelection {
    All,
    /// Up to `per_tensor` random coordinates from each parameter tensor.
    Sampled { per_tensor: usize, seed: u64 },
}

/// Central-difference check of the full model's cross-entropy gradient in
/// eval mode. Coordinates whose probes change a max-pool winner are skipped.
pub fn model_grad_check(
    model: &Model<f64>,
    tokens: &[u16],
    target: &[f64],
    coords: CoordSelection,
    h: f64,
) -> Result<GradCheckReport, NnError> {
    let (tape, _, _) = model.forward_tape(tokens, target, Regularization::NONE, None)?;
    let grads = backward(&tape, &model.params(), 1.0)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let chosen: Vec<usize> = match coords {
        CoordSelection::All => (0..analytic.len()).collect(),
        CoordSelection::Sampled { per_tensor, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sizes
                .iter()
                .zip(&offsets)
                .flat_map(|(&n, &off)| {
                    let mut idx = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(move |i| off + i)
                })
                .collect()
        }
    };

    let mut work = model.clone();
    let mut failure = None;
    let report = grad_check_coords(
        |flat, delta| {
            let t = offsets.partition_point(|&o| o <= flat) - 1;
            let i = flat - offsets[t];
            let original = work.params()[t].data()[i];
            work.params_mut()[t].data_mut()[i] = original + delta;
            let mut argmax = Vec::new();
            let result = work
                .eval_logits(tokens, Some(&mut argmax))
                .and_then(|logits| cross_entropy(&softmax(&logits), target));
            work.params_mut()[t].data_mut()[i] = original;
            let mut hasher = DefaultHasher::new();
            argmax.hash(&mut hasher);
            match result {
                Ok(loss) => (loss, hasher.finish()),
                Err(e) => {
                    failure = Some(e);
                    (f64::NAN, 0)
                }
            }
        },
        &analytic,
        &chosen,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
