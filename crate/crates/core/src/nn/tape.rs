//! Linear computation record and reverse-mode gradients.
//!
//! Forward ops executed through a [`Tape`] store exactly what their backward
//! needs. Parameters are referenced by index into the caller's parameter
//! list, so the tape never borrows the model.

use rand::RngCore;

use super::layers::{
    apply_channel_mask, draw_mask, gelu_derivative, gelu_in_place, layernorm_rows, validate_rate,
};
use super::{
    cross_entropy, gemm_nt, gemm_tn, global_max_pool, shape_err, softmax, DenseLayer,
    LayerNormParams, NnError, Scalar, Tensor,
};

/// One recorded operation.
#[derive(Debug, Clone)]
pub enum Node<T> {
    /// One-hot encoding followed by a dense layer, realized as a row lookup.
    Embedding {
        tokens: Vec<u16>,
        weight: usize,
        bias: usize,
    },
    Dense {
        input: Tensor<T>,
        weight: usize,
        bias: usize,
    },
    LayerNorm {
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        gamma: usize,
        beta: usize,
    },
    Gelu {
        input: Tensor<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    SpatialDropout {
        mask: Option<Vec<T>>,
    },
    Reshape {
        from: Vec<usize>,
    },
    MaxPool {
        argmax: Vec<usize>,
        rows: usize,
    },
    SoftmaxCrossEntropy {
        probs: Tensor<T>,
        target: Vec<T>,
    },
}

/// Single-use record of a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Embeds each token (`< vocab`) as `W[token] + b`, giving `[tokens, dim]`.
    pub fn embedding(
        &mut self,
        layer: &DenseLayer<T>,
        ids: (usize, usize),
        tokens: &[u16],
    ) -> Result<Tensor<T>, NnError> {
        let out = embed(layer, tokens)?;
        self.nodes.push(Node::Embedding {
            tokens: tokens.to_vec(),
            weight: ids.0,
            bias: ids.1,
        });
        Ok(out)
    }

    pub fn dense(
        &mut self,
        layer: &DenseLayer<T>,
        ids: (usize, usize),
        x: Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let y = super::dense_forward(layer, &x)?;
        self.nodes.push(Node::Dense {
            input: x,
            weight: ids.0,
            bias: ids.1,
        });
        Ok(y)
    }

    pub fn layernorm(
        &mut self,
        p: &LayerNormParams<T>,
        ids: (usize, usize),
        mut x: Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        // normalize with the identity affine first so x̂ can be kept
        let unit = LayerNormParams {
            gamma: Tensor::filled(p.gamma.shape(), T::ONE),
            beta: Tensor::zeros(p.beta.shape()),
            eps: p.eps,
        };
        let mut inv_std = Vec::with_capacity(x.rows());
        layernorm_rows(&unit, &mut x, Some(&mut inv_std))?;
        let normalized = x.clone();
        let (g, b) = (p.gamma.data(), p.beta.data());
        for row in x.data_mut().chunks_exact_mut(p.dim()) {
            for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        self.nodes.push(Node::LayerNorm {
            normalized,
            inv_std,
            gamma: ids.0,
            beta: ids.1,
        });
        Ok(x)
    }

    pub fn gelu(&mut self, x: Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        gelu_in_place(y.data_mut());
        self.nodes.push(Node::Gelu { input: x });
        y
    }

    pub fn dropout(
        &mut self,
        mut x: Tensor<T>,
        rate: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Tensor<T>, NnError> {
        validate_rate(rate)?;
        let mask = match rng {
            Some(rng) if rate > 0.0 => {
                let mask = draw_mask::<T>(x.len(), rate, rng);
                for (v, m) in x.data_mut().iter_mut().zip(&mask) {
                    *v *= *m;
                }
                Some(mask)
            }
            _ => None,
        };
        self.nodes.push(Node::Dropout { mask });
        Ok(x)
    }

    pub fn spatial_dropout(
        &mut self,
        mut x: Tensor<T>,
        rate: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Tensor<T>, NnError> {
        validate_rate(rate)?;
        let mask = match rng {
            Some(rng) if rate > 0.0 => {
                let mask = draw_mask::<T>(x.last_dim(), rate, rng);
                apply_channel_mask(x.data_mut(), &mask);
                Some(mask)
            }
            _ => None,
        };
        self.nodes.push(Node::SpatialDropout { mask });
        Ok(x)
    }

    pub fn reshape(&mut self, x: Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, NnError> {
        let from = x.shape().to_vec();
        let y = x.reshape(shape)?;
        self.nodes.push(Node::Reshape { from });
        Ok(y)
    }

    pub fn global_max_pool(&mut self, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let pooled = global_max_pool(&x)?;
        self.nodes.push(Node::MaxPool {
            argmax: pooled.argmax,
            rows: x.shape()[0],
        });
        Ok(pooled.output)
    }

    /// Terminal loss node. Returns the probabilities and the loss value.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Tensor<T>,
        target: &[T],
    ) -> Result<(Tensor<T>, T), NnError> {
        let probs = softmax(&logits);
        let loss = cross_entropy(&probs, target)?;
        self.nodes.push(Node::SoftmaxCrossEntropy {
            probs: probs.clone(),
            target: target.to_vec(),
        });
        Ok((probs, loss))
    }
}

pub(crate) fn embed<T: Scalar>(layer: &DenseLayer<T>, tokens: &[u16]) -> Result<Tensor<T>, NnError> {
    let (vocab, dim) = (layer.input_dim(), layer.output_dim());
    let mut out = Tensor::zeros(&[tokens.len(), dim]);
    embed_into(layer, tokens, out.data_mut())?;
    debug_assert!(vocab > 0);
    Ok(out)
}

pub(crate) fn embed_into<T: Scalar>(
    layer: &DenseLayer<T>,
    tokens: &[u16],
    out: &mut [T],
) -> Result<(), NnError> {
    let (vocab, dim) = (layer.input_dim(), layer.output_dim());
    let (w, b) = (layer.w.data(), layer.b.data());
    for (&tok, row) in tokens.iter().zip(out.chunks_exact_mut(dim)) {
        let tok = tok as usize;
        if tok >= vocab {
            return Err(shape_err(format!("token < {vocab}"), format!("token {tok}")));
        }
        for ((o, &wv), &bv) in row.iter_mut().zip(&w[tok * dim..(tok + 1) * dim]).zip(b) {
            *o = wv + bv;
        }
    }
    Ok(())
}

/// Routes each column's gradient to the row that won the max; other rows get 0.
pub(crate) fn max_pool_backward<T: Scalar>(argmax: &[usize], rows: usize, g: &[T]) -> Vec<T> {
    let d = argmax.len();
    let mut dx = vec![T::ZERO; rows * d];
    for (j, (&r, &v)) in argmax.iter().zip(g).enumerate() {
        dx[r * d + j] = v;
    }
    dx
}

/// Gradients of the loss with respect to every parameter, shaped like `params`.
pub fn backward<T: Scalar>(
    tape: &Tape<T>,
    params: &[&Tensor<T>],
    loss_grad: T,
) -> Result<Vec<Tensor<T>>, NnError> {
    let mut grads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    backward_into(tape, params, loss_grad, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into existing gradient buffers.
pub fn backward_into<T: Scalar>(
    tape: &Tape<T>,
    params: &[&Tensor<T>],
    loss_grad: T,
    grads: &mut [Tensor<T>],
) -> Result<(), NnError> {
    let Some(last) = tape.nodes.last() else {
        return Err(NnError::TapeEmpty);
    };
    let Node::SoftmaxCrossEntropy { probs, target } = last else {
        return Err(NnError::NoLoss);
    };
    let total: T = target.iter().copied().sum();
    // d/dlogits of -Σ t·ln softmax(l) is p·Σt - t
    let mut g: Vec<T> = probs
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p * total - t) * loss_grad)
        .collect();
    let mut shape: Vec<usize> = probs.shape().to_vec();

    for node in tape.nodes[..tape.nodes.len() - 1].iter().rev() {
        match node {
            Node::SoftmaxCrossEntropy { .. } => return Err(NnError::NoLoss),
            Node::Dense {
                input,
                weight,
                bias,
            } => {
                let w = params[*weight];
                let (k, n) = (w.shape()[0], w.shape()[1]);
                let m = input.rows();
                // db += Σ_rows dY
                let db = grads[*bias].data_mut();
                for row in g.chunks_exact(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                // dW += Xᵀ·dY
                gemm_tn(k, m, n, input.data(), &g, grads[*weight].data_mut(), true);
                // dX = dY·Wᵀ
                let mut dx = vec![T::ZERO; m * k];
                gemm_nt(m, n, k, &g, w.data(), &mut dx, false);
                g = dx;
                shape = input.shape().to_vec();
            }
            Node::Embedding {
                tokens,
                weight,
                bias,
            } => {
                let dim = params[*weight].shape()[1];
                {
                    let dw = grads[*weight].data_mut();
                    for (&tok, row) in tokens.iter().zip(g.chunks_exact(dim)) {
                        let dst = &mut dw[tok as usize * dim..(tok as usize + 1) * dim];
                        for (d, &v) in dst.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                let db = grads[*bias].data_mut();
                for row in g.chunks_exact(dim) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                // token inputs are discrete; nothing flows further back
                g.clear();
                shape.clear();
            }
            Node::LayerNorm {
                normalized,
                inv_std,
                gamma,
                beta,
            } => {
                let gam = params[*gamma].data();
                let d = gam.len();
                let inv_d = T::ONE / T::from_f64(d as f64);
                {
                    let dgamma = grads[*gamma].data_mut();
                    for (row, xh) in g.chunks_exact(d).zip(normalized.data().chunks_exact(d)) {
                        for j in 0..d {
                            dgamma[j] += row[j] * xh[j];
                        }
                    }
                }
                {
                    let dbeta = grads[*beta].data_mut();
                    for row in g.chunks_exact(d) {
                        for (b, &v) in dbeta.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                let mut dxh = vec![T::ZERO; d];
                for ((row, xh), &istd) in g
                    .chunks_exact_mut(d)
                    .zip(normalized.data().chunks_exact(d))
                    .zip(inv_std)
                {
                    let mut mean_dxh = T::ZERO;
                    let mut mean_dxh_xh = T::ZERO;
                    for j in 0..d {
                        dxh[j] = row[j] * gam[j];
                        mean_dxh += dxh[j];
                        mean_dxh_xh += dxh[j] * xh[j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for j in 0..d {
                        row[j] = istd * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
            Node::Gelu { input } => {
                for (gv, &x) in g.iter_mut().zip(input.data()) {
                    *gv *= gelu_derivative(x);
                }
            }
            Node::Dropout { mask } => {
                if let Some(mask) = mask {
                    for (gv, &m) in g.iter_mut().zip(mask) {
                        *gv *= m;
                    }
                }
            }
            Node::SpatialDropout { mask } => {
                if let Some(mask) = mask {
                    apply_channel_mask(&mut g, mask);
                }
            }
            Node::Reshape { from } => {
                shape = from.clone();
            }
            Node::MaxPool { argmax, rows } => {
                g = max_pool_backward(argmax, *rows, &g);
                shape = vec![*rows, argmax.len()];
            }
        }
    }
    let _ = shape;
    Ok(())
}
