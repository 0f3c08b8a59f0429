//! Squeeze-and-excitation channel attention.
//!
//! Squeeze: global average pool each channel. Excitation: a two-layer
//! bottleneck (channels -> channels/r -> channels) ending in a sigmoid,
//! giving each channel a gate in (0,1). The output rescales the input
//! channelwise, so |out| <= |in| elementwise.

use crate::error::{Error, Result};
use crate::rng::mix;
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

use super::he_uniform;

#[derive(Clone, Debug)]
pub struct SeBlock<T: Scalar> {
    pub channels: usize,
    pub reduction: usize,
    pub w1: Tensor<T>, // (channels/r, channels)
    pub b1: Tensor<T>, // (channels/r)
    pub w2: Tensor<T>, // (channels, channels/r)
    pub b2: Tensor<T>, // (channels)
}

impl<T: Scalar> SeBlock<T> {
    pub fn init(channels: usize, reduction: usize, seed: u64, name: &str) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::shape(format!(
                "se reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(SeBlock {
            channels,
            reduction,
            w1: he_uniform(&[hidden, channels], channels, mix(seed, name, &[1])),
            b1: Tensor::zeros(&[hidden]),
            w2: he_uniform(&[channels, hidden], hidden, mix(seed, name, &[2])),
            b2: Tensor::zeros(&[channels]),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.numel() + self.b1.numel() + self.w2.numel() + self.b2.numel()
    }
}

/// Intermediates needed by the backward pass.
#[derive(Clone, Debug)]
pub struct SeCache<T: Scalar> {
    pub squeeze: Tensor<T>, // (B, C) channel means
    pub hidden: Tensor<T>,  // (B, C/r) post-ReLU bottleneck
    pub gate: Tensor<T>,    // (B, C) sigmoid output
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Applies channel attention to a (B, C, H, W) feature map.
pub fn se_forward<T: Scalar>(
    input: &Tensor<T>,
    block: &SeBlock<T>,
) -> Result<(Tensor<T>, SeCache<T>)> {
    let s = input.shape();
    if input.rank() != 4 {
        return Err(Error::shape(format!("se expects (B,C,H,W), got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if c != block.channels {
        return Err(Error::shape(format!(
            "se: input has {c} channels, block expects {}",
            block.channels
        )));
    }
    let hw = h * w;
    let inv_hw = T::from_f64(1.0 / hw as f64);
    let hidden_dim = c / block.reduction;

    let mut squeeze = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for ci in 0..c {
            let plane = &input.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            let mut acc = T::ZERO;
            for &v in plane {
                acc += v;
            }
            squeeze.data_mut()[bi * c + ci] = acc * inv_hw;
        }
    }

    let mut hidden = Tensor::zeros(&[b, hidden_dim]);
    for bi in 0..b {
        let s_row = &squeeze.data()[bi * c..(bi + 1) * c];
        let h_row = &mut hidden.data_mut()[bi * hidden_dim..(bi + 1) * hidden_dim];
        for hi in 0..hidden_dim {
            let w_row = &block.w1.data()[hi * c..(hi + 1) * c];
            let mut acc = block.b1.data()[hi];
            for (&wv, &sv) in w_row.iter().zip(s_row) {
                acc += wv * sv;
            }
            h_row[hi] = acc.maximum(T::ZERO);
        }
    }

    let mut gate = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        let h_row = &hidden.data()[bi * hidden_dim..(bi + 1) * hidden_dim];
        let g_row = &mut gate.data_mut()[bi * c..(bi + 1) * c];
        for ci in 0..c {
            let w_row = &block.w2.data()[ci * hidden_dim..(ci + 1) * hidden_dim];
            let mut acc = block.b2.data()[ci];
            for (&wv, &hv) in w_row.iter().zip(h_row) {
                acc += wv * hv;
            }
            g_row[ci] = sigmoid(acc);
        }
    }

    let mut out = input.clone();
    for bi in 0..b {
        for ci in 0..c {
            let g = gate.data()[bi * c + ci];
            let plane = &mut out.data_mut()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for v in plane.iter_mut() {
                *v *= g;
            }
        }
    }
    debug_assert_finite(&out, "se_forward");
    Ok((
        out,
        SeCache {
            squeeze,
            hidden,
            gate,
        },
    ))
}

/// Gradients of [`se_forward`]. The product rule contributes two input
/// paths: the identity branch (grad scaled by the gate) and the squeeze
/// branch (through the bottleneck back to the channel means).
pub fn se_backward<T: Scalar>(
    input: &Tensor<T>,
    block: &SeBlock<T>,
    cache: &SeCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SeGrads<T>)> {
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(Error::shape("se_backward shape mismatch"));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let inv_hw = T::from_f64(1.0 / hw as f64);
    let hidden_dim = c / block.reduction;

    let mut grad_in = Tensor::zeros(s);
    let mut grad_gate = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for ci in 0..c {
            let g = cache.gate.data()[bi * c + ci];
            let base = (bi * c + ci) * hw;
            let go = &grad_out.data()[base..base + hw];
            let x = &input.data()[base..base + hw];
            let gi = &mut grad_in.data_mut()[base..base + hw];
            let mut dot = T::ZERO;
            for k in 0..hw {
                gi[k] = go[k] * g;
                dot += go[k] * x[k];
            }
            grad_gate.data_mut()[bi * c + ci] = dot;
        }
    }

    // Through the sigmoid: dL/dpre2 = dL/dgate * g * (1 - g).
    let mut grad_pre2 = Tensor::zeros(&[b, c]);
    for i in 0..b * c {
        let g = cache.gate.data()[i];
        grad_pre2.data_mut()[i] = grad_gate.data()[i] * g * (T::ONE - g);
    }

    let mut grad_w2 = Tensor::zeros(&[c, hidden_dim]);
    let mut grad_b2 = Tensor::zeros(&[c]);
    let mut grad_hidden = Tensor::zeros(&[b, hidden_dim]);
    for bi in 0..b {
        let gp = &grad_pre2.data()[bi * c..(bi + 1) * c];
        let h_row = &cache.hidden.data()[bi * hidden_dim..(bi + 1) * hidden_dim];
        for ci in 0..c {
            let g = gp[ci];
            grad_b2.data_mut()[ci] += g;
            let w_row = &block.w2.data()[ci * hidden_dim..(ci + 1) * hidden_dim];
            let gw_row = &mut grad_w2.data_mut()[ci * hidden_dim..(ci + 1) * hidden_dim];
            let gh = &mut grad_hidden.data_mut()[bi * hidden_dim..(bi + 1) * hidden_dim];
            for k in 0..hidden_dim {
                gw_row[k] += g * h_row[k];
                gh[k] += g * w_row[k];
            }
        }
    }

    // Through the bottleneck ReLU.
    for i in 0..b * hidden_dim {
        if cache.hidden.data()[i] <= T::ZERO {
            grad_hidden.data_mut()[i] = T::ZERO;
        }
    }

    let mut grad_w1 = Tensor::zeros(&[hidden_dim, c]);
    let mut grad_b1 = Tensor::zeros(&[hidden_dim]);
    let mut grad_squeeze: Tensor<T> = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        let gh = &grad_hidden.data()[bi * hidden_dim..(bi + 1) * hidden_dim];
        let s_row = &cache.squeeze.data()[bi * c..(bi + 1) * c];
        for hi in 0..hidden_dim {
            let g = gh[hi];
            if g == T::ZERO {
                continue;
            }
            grad_b1.data_mut()[hi] += g;
            let w_row = &block.w1.data()[hi * c..(hi + 1) * c];
            let gw_row = &mut grad_w1.data_mut()[hi * c..(hi + 1) * c];
            let gs = &mut grad_squeeze.data_mut()[bi * c..(bi + 1) * c];
            for k in 0..c {
                gw_row[k] += g * s_row[k];
                gs[k] += g * w_row[k];
            }
        }
    }

    // Squeeze branch: each input position receives grad_squeeze / (H*W).
    for bi in 0..b {
        for ci in 0..c {
            let gs = grad_squeeze.data()[bi * c + ci] * inv_hw;
            let base = (bi * c + ci) * hw;
            let gi = &mut grad_in.data_mut()[base..base + hw];
            for v in gi.iter_mut() {
                *v += gs;
            }
        }
    }

    Ok((
        grad_in,
        SeGrads {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct SeGrads<T: Scalar> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}
