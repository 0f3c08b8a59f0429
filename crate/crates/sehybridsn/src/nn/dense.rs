//! Fully connected layer: y = W x + b.

use crate::error::{Error, Result};
use crate::rng::mix;
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

use super::he_uniform;

#[derive(Clone, Debug)]
pub struct DenseLayer<T: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Tensor<T>, // (out, in)
    pub bias: Tensor<T>,    // (out)
}

impl<T: Scalar> DenseLayer<T> {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64, name: &str) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: he_uniform(&[out_dim, in_dim], in_dim, mix(seed, name, &[0])),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }
}

/// (B, in) -> (B, out).
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, layer: &DenseLayer<T>) -> Result<Tensor<T>> {
    if input.rank() != 2 || input.shape()[1] != layer.in_dim {
        return Err(Error::shape(format!(
            "dense: input {:?}, layer expects (B,{})",
            input.shape(),
            layer.in_dim
        )));
    }
    let b = input.shape()[0];
    let (o, i) = (layer.out_dim, layer.in_dim);
    let mut out = Tensor::zeros(&[b, o]);
    for bi in 0..b {
        let x = &input.data()[bi * i..(bi + 1) * i];
        let y = &mut out.data_mut()[bi * o..(bi + 1) * o];
        for oi in 0..o {
            let row = &layer.weights.data()[oi * i..(oi + 1) * i];
            let mut acc = layer.bias.data()[oi];
            for (&w, &xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            y[oi] = acc;
        }
    }
    debug_assert_finite(&out, "dense_forward");
    Ok(out)
}

/// Gradients of [`dense_forward`] given the forward input.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let b = input.shape()[0];
    let (o, i) = (layer.out_dim, layer.in_dim);
    if grad_out.shape() != [b, o] {
        return Err(Error::shape("dense_backward grad shape mismatch"));
    }
    let mut grad_in = Tensor::zeros(&[b, i]);
    let mut grad_w = Tensor::zeros(&[o, i]);
    let mut grad_b = Tensor::zeros(&[o]);
    for bi in 0..b {
        let x = &input.data()[bi * i..(bi + 1) * i];
        let go = &grad_out.data()[bi * o..(bi + 1) * o];
        for oi in 0..o {
            let g = go[oi];
            if g == T::ZERO {
                continue;
            }
            grad_b.data_mut()[oi] += g;
            let w_row = &layer.weights.data()[oi * i..(oi + 1) * i];
            let gw_row = &mut grad_w.data_mut()[oi * i..(oi + 1) * i];
            let gx = &mut grad_in.data_mut()[bi * i..(bi + 1) * i];
            for k in 0..i {
                gw_row[k] += g * x[k];
                gx[k] += g * w_row[k];
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}
