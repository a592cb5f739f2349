use rand::RngCore;

use super::{gemm, shape_err, NnError, Scalar, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Numerical floor inside the logarithm of the cross-entropy.
const CE_EPS: f64 = 1e-12;

/// Whether stochastic layers are active.
pub enum Mode<'a> {
    Eval,
    /// Training mode; dropout masks are drawn from the supplied generator.
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Fully connected layer, `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(w: Tensor<T>, b: Tensor<T>) -> Result<Self, NnError> {
        if w.rank() != 2 || b.rank() != 1 || w.shape()[1] != b.shape()[0] {
            return Err(shape_err(
                "W [in, out] with b [out]",
                format!("W {:?}, b {:?}", w.shape(), b.shape()),
            ));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            w: self.w.cast(),
            b: self.b.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[dim], T::ONE),
            beta: Tensor::zeros(&[dim]),
            eps: LAYERNORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerNormParams<U> {
        LayerNormParams {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            eps: self.eps,
        }
    }
}

pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (input, output) = (layer.input_dim(), layer.output_dim());
    if x.last_dim() != input || x.rank() == 0 {
        return Err(shape_err(
            format!("last dim {input}"),
            format!("shape {:?}", x.shape()),
        ));
    }
    let rows = x.rows();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = output;
    let mut out = Tensor::zeros(&shape);
    let bias = layer.b.data();
    for row in out.data_mut().chunks_exact_mut(output) {
        row.copy_from_slice(bias);
    }
    gemm(rows, input, output, x.data(), layer.w.data(), out.data_mut(), true);
    Ok(out)
}

#[inline]
fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::ONE + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::ONE + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Exact (erf-based) gelu, `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    gelu_in_place(out.data_mut());
    out
}

pub(crate) fn gelu_in_place<T: Scalar>(xs: &mut [T]) {
    for v in xs {
        *v = gelu_scalar(*v);
    }
}

/// Layer normalization over the last axis.
pub fn layernorm_forward<T: Scalar>(
    p: &LayerNormParams<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let mut out = x.clone();
    layernorm_rows(p, &mut out, None)?;
    Ok(out)
}

/// Normalizes `x` in place; optionally records the per-row inverse std.
pub(crate) fn layernorm_rows<T: Scalar>(
    p: &LayerNormParams<T>,
    x: &mut Tensor<T>,
    mut inv_std_out: Option<&mut Vec<T>>,
) -> Result<(), NnError> {
    let d = p.dim();
    if x.last_dim() != d || x.rank() == 0 {
        return Err(shape_err(format!("last dim {d}"), format!("shape {:?}", x.shape())));
    }
    let eps = T::from_f64(p.eps);
    let inv_d = T::ONE / T::from_f64(d as f64);
    let (gamma, beta) = (p.gamma.data(), p.beta.data());
    for row in x.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv_std = T::ONE / (var + eps).sqrt();
        if let Some(buf) = inv_std_out.as_deref_mut() {
            buf.push(inv_std);
        }
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    Ok(())
}

/// Column-wise maximum of an `[n, d]` matrix together with the winning rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool<T> {
    pub output: Tensor<T>,
    /// Row index of the maximum per column; ties resolve to the lowest row.
    pub argmax: Vec<usize>,
}

pub fn global_max_pool<T: Scalar>(x: &Tensor<T>) -> Result<MaxPool<T>, NnError> {
    if x.rank() != 2 {
        return Err(shape_err("rank-2 [n, d]", format!("shape {:?}", x.shape())));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n == 0 {
        return Err(NnError::EmptyAxis);
    }
    let data = x.data();
    let mut best = data[..d].to_vec();
    let mut argmax = vec![0usize; d];
    for i in 1..n {
        let row = &data[i * d..(i + 1) * d];
        for j in 0..d {
            if row[j] > best[j] {
                best[j] = row[j];
                argmax[j] = i;
            }
        }
    }
    Ok(MaxPool {
        output: Tensor::from_vec(&[d], best)?,
        argmax,
    })
}

/// Softmax over the last axis with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let d = out.last_dim();
    if d == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(d) {
        let max = row
            .iter()
            .copied()
            .fold(row[0], |m, v| if v > m { v } else { m });
        let mut total = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::ONE / total;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// `-Σ target·ln(p + 1e-12)`; soft targets are allowed.
pub fn cross_entropy<T: Scalar>(p: &Tensor<T>, target: &[T]) -> Result<T, NnError> {
    if p.len() != target.len() {
        return Err(shape_err(
            format!("{} target entries", p.len()),
            format!("{}", target.len()),
        ));
    }
    let eps = T::from_f64(CE_EPS);
    Ok(p.data()
        .iter()
        .zip(target)
        .map(|(&pi, &ti)| -(ti * (pi + eps).ln()))
        .sum())
}

fn check_rate(rate: f64) -> Result<(), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::BadRate(rate));
    }
    Ok(())
}

/// Draws a keep/scale mask of `len` entries: 0 with probability `rate`,
/// `1/(1-rate)` otherwise. Each entry compares one uniform `u32` against
/// `rate · 2³²`.
pub(crate) fn draw_mask<T: Scalar>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let cutoff = (rate * 4_294_967_296.0) as u64;
    let mut bytes = vec![0u8; len * 4];
    rng.fill_bytes(&mut bytes);
    bytes
        .chunks_exact(4)
        .map(|w| {
            let u = u32::from_le_bytes([w[0], w[1], w[2], w[3]]) as u64;
            if u < cutoff {
                T::ZERO
            } else {
                scale
            }
        })
        .collect()
}

/// Inverted dropout. Identity in eval mode or at rate 0.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode<'_>) -> Result<Tensor<T>, NnError> {
    check_rate(rate)?;
    let mut out = x.clone();
    if let Mode::Train(rng) = mode {
        if rate > 0.0 {
            let mask = draw_mask::<T>(out.len(), rate, rng);
            for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                *v *= *m;
            }
        }
    }
    Ok(out)
}

/// Drops whole feature channels (columns of `[n, d]`) across every row.
pub fn spatial_dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode<'_>,
) -> Result<Tensor<T>, NnError> {
    check_rate(rate)?;
    let mut out = x.clone();
    if let Mode::Train(rng) = mode {
        if rate > 0.0 {
            let d = out.last_dim();
            let mask = draw_mask::<T>(d, rate, rng);
            apply_channel_mask(out.data_mut(), &mask);
        }
    }
    Ok(out)
}

pub(crate) fn apply_channel_mask<T: Scalar>(data: &mut [T], mask: &[T]) {
    for row in data.chunks_exact_mut(mask.len()) {
        for (v, m) in row.iter_mut().zip(mask) {
            *v *= *m;
        }
    }
}

pub(crate) fn validate_rate(rate: f64) -> Result<(), NnError> {
    check_rate(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    /// Φ(x) by composite Simpson quadrature of the normal density from -12.
    fn normal_cdf_quadrature(x: f64) -> f64 {
        let (a, n) = (-12.0, 200_000);
        let h = (x - a) / n as f64;
        let pdf = |z: f64| (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn dense_identity_and_hand_product() {
        let id = DenseLayer::new(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), t(&[2], &[0.0, 0.0])).unwrap();
        let y = dense_forward(&id, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);

        let l = DenseLayer::new(t(&[2, 2], &[1.0, 3.0, 2.0, 4.0]), t(&[2], &[0.0, 0.0])).unwrap();
        // y_j = Σ_i x_i W_ij: [1+2, 3+4]
        let y = dense_forward(&l, &t(&[2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);

        let err = dense_forward(&l, &t(&[3], &[1.0, 1.0, 1.0])).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }

    #[test]
    fn gelu_values_against_quadrature() {
        let g = gelu(&t(&[3], &[0.0, 1.0, -10.0]));
        assert_eq!(g.data()[0], 0.0);
        let oracle = normal_cdf_quadrature(1.0);
        assert!((oracle - 0.841_344_746).abs() < 1e-9);
        assert!((g.data()[1] - oracle).abs() < 1e-7);
        assert!((g.data()[1] - 0.841_344_7).abs() < 1e-7);
        assert!(g.data()[2].abs() < 1e-6);
        // f32 path agrees with the f64 oracle
        let g32 = gelu(&Tensor::<f32>::from_vec(&[1], vec![1.0]).unwrap());
        assert!((g32.data()[0] as f64 - oracle).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_at_zero_is_half() {
        assert_eq!(gelu_derivative(0.0f64), 0.5);
    }

    #[test]
    fn layernorm_cases() {
        let p = LayerNormParams::<f64>::identity(3);
        let y = layernorm_forward(&p, &t(&[3], &[2.0, 2.0, 2.0])).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));

        let mut p2 = LayerNormParams::<f64>::identity(2);
        p2.eps = 1e-15;
        let y = layernorm_forward(&p2, &t(&[2], &[1.0, -1.0])).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);

        let p3 = LayerNormParams {
            gamma: t(&[2], &[1.0, 1.0]),
            beta: t(&[2], &[5.0, 5.0]),
            eps: 1e-5,
        };
        let y = layernorm_forward(&p3, &t(&[2], &[7.0, 7.0])).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0]);

        assert!(layernorm_forward(&p3, &t(&[3], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn max_pool_cases() {
        let one = global_max_pool(&t(&[1, 2], &[4.0, -1.0])).unwrap();
        assert_eq!(one.output.data(), &[4.0, -1.0]);
        let two = global_max_pool(&t(&[2, 2], &[1.0, 5.0, 3.0, 2.0])).unwrap();
        assert_eq!(two.output.data(), &[3.0, 5.0]);
        assert_eq!(two.argmax, vec![1, 0]);
        let tie = global_max_pool(&t(&[3, 1], &[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(tie.argmax, vec![0]);
        assert_eq!(global_max_pool(&Tensor::<f64>::zeros(&[0, 2])), Err(NnError::EmptyAxis));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&t(&[4], &[0.3; 4]));
        assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = softmax(&t(&[2], &[0.0, 2f64.ln()]));
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let a = softmax(&t(&[3], &[1.0, 2.0, 3.0]));
        let b = softmax(&t(&[3], &[101.0, 102.0, 103.0]));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&t(&[2], &[1e300, -1e300]));
        assert!(big.all_finite());
    }

    #[test]
    fn cross_entropy_cases() {
        let onehot = t(&[3], &[0.0, 1.0, 0.0]);
        assert!(cross_entropy(&onehot, &[0.0, 1.0, 0.0]).unwrap().abs() < 1e-11);
        let uniform = t(&[4], &[0.25; 4]);
        let l = cross_entropy(&uniform, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-10);
        let p = t(&[2], &[0.6, 0.4]);
        let l = cross_entropy(&p, &[0.75, 0.25]).unwrap();
        let want = 0.75 * -(0.6f64.ln()) + 0.25 * -(0.4f64.ln());
        assert!((l - want).abs() < 1e-10);
    }

    #[test]
    fn dropout_modes_and_rates() {
        let x = Tensor::<f64>::filled(&[1_000_000], 1.0);
        assert_eq!(dropout(&x, 0.1, Mode::Eval).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&x, 0.0, Mode::Train(&mut rng)).unwrap(), x);
        let y = dropout(&x, 0.1, Mode::Train(&mut rng)).unwrap();
        let zeros = y.data().iter().filter(|v| **v == 0.0).count() as f64 / 1e6;
        // 3σ of Binomial(1e6, 0.1)/1e6 is 0.0009
        assert!((zeros - 0.1).abs() < 0.003, "zero fraction {zeros}");
        let survivors = y.data().iter().find(|v| **v != 0.0).unwrap();
        assert!((survivors - 1.0 / 0.9).abs() < 1e-12);
        assert_eq!(dropout(&x, 1.0, Mode::Eval), Err(NnError::BadRate(1.0)));
        assert_eq!(dropout(&x, -0.1, Mode::Eval), Err(NnError::BadRate(-0.1)));
    }

    #[test]
    fn spatial_dropout_drops_whole_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::filled(&[3, 10_000], 1.0);
        assert_eq!(spatial_dropout(&x, 0.1, Mode::Eval).unwrap(), x);
        let y = spatial_dropout(&x, 0.1, Mode::Train(&mut rng)).unwrap();
        let d = y.data();
        let mut dropped = 0;
        for j in 0..10_000 {
            let col = [d[j], d[10_000 + j], d[20_000 + j]];
            if col[0] == 0.0 {
                dropped += 1;
                assert!(col.iter().all(|v| *v == 0.0), "channel {j} partially dropped");
            } else {
                assert!(col.iter().all(|v| *v != 0.0));
            }
        }
        let frac = dropped as f64 / 1e4;
        assert!((frac - 0.1).abs() < 0.01, "dropped fraction {frac}");
        assert!(spatial_dropout(&x, 1.5, Mode::Eval).is_err());
    }
}
