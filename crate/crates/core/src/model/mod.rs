//! The detector network: token embedding, two dense/layernorm/gelu blocks
//! over four-token chunks, global max pooling and a softmax head.

mod detector;
mod format;
mod gradcheck;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeatureVector, N_WINDOWS, VOCAB, WINDOW};
use crate::nn::{
    self, dense_forward, global_max_pool, softmax, DenseLayer, LayerNormParams, NnError,
    Scalar, Tape, Tensor,
};

pub use detector::{Detector, Prediction};
pub use format::{load_model, save_model, FORMAT_VERSION, MAGIC};
pub use gradcheck::{model_grad_check, CoordSelection};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("a model needs at least 2 output classes, got {0}")]
    BadK(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt model file: {0}")]
    CorruptShapes(String),
    #[error("non-finite value in {0}")]
    NonFiniteWeight(String),
    #[error("threshold for {label:?} is {value}, outside [0, 1]")]
    BadThreshold { label: String, value: f32 },
    #[error("model labels do not match the registry: {0}")]
    LabelMismatch(String),
    #[error("model architecture does not accept standard feature vectors: {0}")]
    IncompatibleInput(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
}

/// Architecture constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub windows: usize,
    pub window: usize,
    pub vocab: usize,
    pub embed_dim: usize,
    /// Tokens merged into one chunk row by the reshape.
    pub chunk: usize,
    pub hidden: usize,
}

impl Arch {
    pub const STANDARD: Arch = Arch {
        windows: N_WINDOWS,
        window: WINDOW,
        vocab: VOCAB,
        embed_dim: 128,
        chunk: 4,
        hidden: 256,
    };

    pub fn tokens(&self) -> usize {
        self.windows * self.window
    }

    pub fn n_chunks(&self) -> usize {
        self.tokens() / self.chunk
    }

    /// Width of a chunk row, the first hidden layer's input.
    pub fn chunk_width(&self) -> usize {
        self.chunk * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.windows, self.window, self.vocab, self.embed_dim, self.chunk, self.hidden];
        if dims.contains(&0) {
            return Err(ModelError::CorruptShapes(format!("zero dimension in {self:?}")));
        }
        if !self.tokens().is_multiple_of(self.chunk) {
            return Err(ModelError::CorruptShapes(format!(
                "{} tokens do not split into chunks of {}",
                self.tokens(),
                self.chunk
            )));
        }
        Ok(())
    }
}

impl Default for Arch {
    fn default() -> Self {
        Self::STANDARD
    }
}

fn reborrow<'b>(rng: &'b mut Option<&mut dyn RngCore>) -> Option<&'b mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Dropout rates applied in training mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// Channel dropout on the embedded token sequence.
    pub spatial_dropout: f64,
    /// Element dropout after each hidden block.
    pub dropout: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            spatial_dropout: 0.1,
            dropout: 0.1,
        }
    }
}

impl Regularization {
    pub const NONE: Regularization = Regularization {
        spatial_dropout: 0.0,
        dropout: 0.0,
    };
}

/// Parameter indices, in serialization order.
pub mod param {
    pub const EMBED_W: usize = 0;
    pub const EMBED_B: usize = 1;
    pub const H1_W: usize = 2;
    pub const H1_B: usize = 3;
    pub const LN1_GAMMA: usize = 4;
    pub const LN1_BETA: usize = 5;
    pub const H2_W: usize = 6;
    pub const H2_B: usize = 7;
    pub const LN2_GAMMA: usize = 8;
    pub const LN2_BETA: usize = 9;
    pub const OUT_W: usize = 10;
    pub const OUT_B: usize = 11;
    pub const COUNT: usize = 12;
    pub const NAMES: [&str; COUNT] = [
        "embed.W", "embed.b", "h1.W", "h1.b", "ln1.gamma", "ln1.beta", "h2.W", "h2.b",
        "ln2.gamma", "ln2.beta", "out.W", "out.b",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub params: usize,
    pub bytes_f32: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub arch: Arch,
    pub embed: DenseLayer<T>,
    pub h1: DenseLayer<T>,
    pub ln1: LayerNormParams<T>,
    pub h2: DenseLayer<T>,
    pub ln2: LayerNormParams<T>,
    pub out: DenseLayer<T>,
    pub labels: Vec<String>,
    /// Per-type confidence thresholds; all zero means plain argmax.
    pub thresholds: Vec<f32>,
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("shape matches")
}

fn glorot_dense<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> DenseLayer<T> {
    DenseLayer {
        w: glorot(rng, fan_in, fan_out),
        b: Tensor::zeros(&[fan_out]),
    }
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases, unit layer norms, zero thresholds.
    pub fn init(arch: Arch, labels: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let k = labels.len();
        if k < 2 {
            return Err(ModelError::BadK(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            embed: glorot_dense(&mut rng, arch.vocab, arch.embed_dim),
            h1: glorot_dense(&mut rng, arch.chunk_width(), arch.hidden),
            ln1: LayerNormParams::identity(arch.hidden),
            h2: glorot_dense(&mut rng, arch.hidden, arch.hidden),
            ln2: LayerNormParams::identity(arch.hidden),
            out: glorot_dense(&mut rng, arch.hidden, k),
            arch,
            labels,
            thresholds: vec![0.0; k],
        })
    }

    /// Model with every parameter zero (uniform output).
    pub fn zeros(arch: Arch, labels: Vec<String>) -> Result<Self, ModelError> {
        let mut m = Self::init(arch, labels, 0)?;
        for p in m.params_mut() {
            p.data_mut().fill(T::ZERO);
        }
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn params(&self) -> [&Tensor<T>; param::COUNT] {
        [
            &self.embed.w,
            &self.embed.b,
            &self.h1.w,
            &self.h1.b,
            &self.ln1.gamma,
            &self.ln1.beta,
            &self.h2.w,
            &self.h2.b,
            &self.ln2.gamma,
            &self.ln2.beta,
            &self.out.w,
            &self.out.b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; param::COUNT] {
        [
            &mut self.embed.w,
            &mut self.embed.b,
            &mut self.h1.w,
            &mut self.h1.b,
            &mut self.ln1.gamma,
            &mut self.ln1.beta,
            &mut self.h2.w,
            &mut self.h2.b,
            &mut self.ln2.gamma,
            &mut self.ln2.beta,
            &mut self.out.w,
            &mut self.out.b,
        ]
    }

    /// Expected shape of every parameter, derived from the architecture.
    pub fn expected_shapes(arch: &Arch, k: usize) -> [Vec<usize>; param::COUNT] {
        let (e, h, c) = (arch.embed_dim, arch.hidden, arch.chunk_width());
        [
            vec![arch.vocab, e],
            vec![e],
            vec![c, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, k],
            vec![k],
        ]
    }

    pub fn param_count(&self) -> ParamCount {
        let params = self.params().iter().map(|p| p.len()).sum::<usize>();
        ParamCount {
            params,
            bytes_f32: params * 4,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            embed: self.embed.cast(),
            h1: self.h1.cast(),
            ln1: self.ln1.cast(),
            h2: self.h2.cast(),
            ln2: self.ln2.cast(),
            out: self.out.cast(),
            labels: self.labels.clone(),
            thresholds: self.thresholds.clone(),
        }
    }

    fn check_tokens(&self, tokens: &[u16]) -> Result<(), NnError> {
        if tokens.len() != self.arch.tokens() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} tokens", self.arch.tokens()),
                found: format!("{}", tokens.len()),
            });
        }
        Ok(())
    }

    /// Eval-mode logits. `argmax` receives the pooling winners if given.
    pub(crate) fn eval_logits(
        &self,
        tokens: &[u16],
        argmax: Option<&mut Vec<usize>>,
    ) -> Result<Tensor<T>, NnError> {
        self.check_tokens(tokens)?;
        let a = &self.arch;
        let mut x = Tensor::zeros(&[a.n_chunks(), a.chunk_width()]);
        nn::embed_into(&self.embed, tokens, x.data_mut())?;
        let mut h = dense_forward(&self.h1, &x)?;
        nn::layernorm_rows(&self.ln1, &mut h, None)?;
        nn::gelu_in_place(h.data_mut());
        let mut h = dense_forward(&self.h2, &h)?;
        nn::layernorm_rows(&self.ln2, &mut h, None)?;
        nn::gelu_in_place(h.data_mut());
        let pooled = global_max_pool(&h)?;
        if let Some(out) = argmax {
            *out = pooled.argmax;
        }
        dense_forward(&self.out, &pooled.output)
    }

    /// Class probabilities for one feature vector.
    ///
    /// Eval mode is a pure function of weights and tokens. Train mode applies
    /// both dropouts with the default rates.
    pub fn forward(&self, f: &FeatureVector, mode: nn::Mode<'_>) -> Result<Tensor<T>, NnError> {
        self.forward_tokens(f.tokens(), mode)
    }

    pub fn forward_tokens(&self, tokens: &[u16], mode: nn::Mode<'_>) -> Result<Tensor<T>, NnError> {
        match mode {
            nn::Mode::Eval => Ok(softmax(&self.eval_logits(tokens, None)?)),
            nn::Mode::Train(rng) => {
                let uniform = vec![T::ZERO; self.k()];
                let (_, probs, _) =
                    self.forward_tape(tokens, &uniform, Regularization::default(), Some(rng))?;
                Ok(probs)
            }
        }
    }

    /// Records a forward pass ending in softmax cross-entropy against
    /// `target`. Without a generator the pass is eval-mode (no dropout).
    pub fn forward_tape(
        &self,
        tokens: &[u16],
        target: &[T],
        reg: Regularization,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tape<T>, Tensor<T>, T), NnError> {
        use param::*;
        self.check_tokens(tokens)?;
        let a = &self.arch;
        let mut tape = Tape::new();
        let x = tape.embedding(&self.embed, (EMBED_W, EMBED_B), tokens)?;
        let x = tape.spatial_dropout(x, reg.spatial_dropout, reborrow(&mut rng))?;
        let x = tape.reshape(x, &[a.n_chunks(), a.chunk_width()])?;
        let h = tape.dense(&self.h1, (H1_W, H1_B), x)?;
        let h = tape.layernorm(&self.ln1, (LN1_GAMMA, LN1_BETA), h)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, reg.dropout, reborrow(&mut rng))?;
        let h = tape.dense(&self.h2, (H2_W, H2_B), h)?;
        let h = tape.layernorm(&self.ln2, (LN2_GAMMA, LN2_BETA), h)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, reg.dropout, reborrow(&mut rng))?;
        let pooled = tape.global_max_pool(h)?;
        let logits = tape.dense(&self.out, (OUT_W, OUT_B), pooled)?;
        let (probs, loss) = tape.softmax_cross_entropy(logits, target)?;
        Ok((tape, probs, loss))
    }

    /// Loss and parameter gradients for one example.
    pub fn loss_and_grads(
        &self,
        tokens: &[u16],
        target: &[T],
        reg: Regularization,
        rng: Option<&mut dyn RngCore>,
        grads: &mut [Tensor<T>],
    ) -> Result<T, NnError> {
        let (tape, _, loss) = self.forward_tape(tokens, target, reg, rng)?;
        nn::backward_into(&tape, &self.params(), T::ONE, grads)?;
        Ok(loss)
    }

    /// Zeroed gradient buffers shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }
}

impl Model<f32> {
    /// Eval-mode probabilities as a plain vector.
    pub fn probabilities(&self, f: &FeatureVector) -> Result<Vec<f32>, NnError> {
        Ok(softmax(&self.eval_logits(f.tokens(), None)?).into_data())
    }
}
