//! Depthwise-separable 2D convolution: one k x k kernel per input
//! channel (same-padded, no bias), followed by a 1x1 pointwise
//! convolution across channels (with bias). Parameter count is
//! C*k^2 + C*C' + C', strictly below a dense C -> C' convolution's
//! C*C'*k^2 + C' for k > 1.

use crate::error::{Error, Result};
use crate::rng::mix;
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

use super::he_uniform;

#[derive(Clone, Debug)]
pub struct DepthwiseSeparableConv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    pub depthwise: Tensor<T>,   // (in, k, k)
    pub pointwise_w: Tensor<T>, // (out, in)
    pub pointwise_b: Tensor<T>, // (out)
}

impl<T: Scalar> DepthwiseSeparableConv2d<T> {
    pub fn init(in_channels: usize, out_channels: usize, k: usize, seed: u64, name: &str) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::shape(format!("depthwise kernel must be odd, got {k}")));
        }
        Ok(DepthwiseSeparableConv2d {
            in_channels,
            out_channels,
            k,
            depthwise: he_uniform(&[in_channels, k, k], k * k, mix(seed, name, &[1])),
            pointwise_w: he_uniform(&[out_channels, in_channels], in_channels, mix(seed, name, &[2])),
            pointwise_b: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.depthwise.numel() + self.pointwise_w.numel() + self.pointwise_b.numel()
    }
}

/// Per-channel same-padded convolution; output spatial size equals the
/// input's.
fn depthwise_pass<T: Scalar>(
    input: &Tensor<T>,
    layer: &DepthwiseSeparableConv2d<T>,
) -> Tensor<T> {
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let k = layer.k;
    let half = (k / 2) as isize;
    let mut mid = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            let plane = &input.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let kernel = &layer.depthwise.data()[ci * k * k..(ci + 1) * k * k];
            let out_plane = &mut mid.data_mut()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = T::ZERO;
                    for ky in 0..k as isize {
                        let sy = y + ky - half;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k as isize {
                            let sx = x + kx - half;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += kernel[(ky * k as isize + kx) as usize]
                                * plane[(sy * w as isize + sx) as usize];
                        }
                    }
                    out_plane[(y * w as isize + x) as usize] = acc;
                }
            }
        }
    }
    mid
}

/// (B, C, H, W) -> (B, C', H, W).
pub fn depthwise_separable_forward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DepthwiseSeparableConv2d<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    if input.rank() != 4 || s[1] != layer.in_channels {
        return Err(Error::shape(format!(
            "separable conv: input {:?}, layer expects {} channels",
            s, layer.in_channels
        )));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mid = depthwise_pass(input, layer);

    let o = layer.out_channels;
    let hw = h * w;
    let mut out = Tensor::zeros(&[b, o, h, w]);
    for bi in 0..b {
        let mid_sample = &mid.data()[bi * c * hw..(bi + 1) * c * hw];
        let out_sample = &mut out.data_mut()[bi * o * hw..(bi + 1) * o * hw];
        for oi in 0..o {
            let row = &mut out_sample[oi * hw..(oi + 1) * hw];
            row.fill(layer.pointwise_b.data()[oi]);
            for ci in 0..c {
                let wv = layer.pointwise_w.data()[oi * c + ci];
                if wv == T::ZERO {
                    continue;
                }
                let m = &mid_sample[ci * hw..(ci + 1) * hw];
                for (r, &mv) in row.iter_mut().zip(m) {
                    *r += wv * mv;
                }
            }
        }
    }
    debug_assert_finite(&out, "depthwise_separable_forward");
    Ok((out, mid))
}

/// Gradients of the separable convolution. `mid` is the depthwise output
/// cached by the forward pass.
pub fn depthwise_separable_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DepthwiseSeparableConv2d<T>,
    mid: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = layer.out_channels;
    let hw = h * w;
    if grad_out.shape() != [b, o, h, w] {
        return Err(Error::shape("separable backward grad shape mismatch"));
    }

    let mut grad_pw = Tensor::zeros(&[o, c]);
    let mut grad_pb = Tensor::zeros(&[o]);
    let mut grad_mid: Tensor<T> = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        let mid_sample = &mid.data()[bi * c * hw..(bi + 1) * c * hw];
        let go_sample = &grad_out.data()[bi * o * hw..(bi + 1) * o * hw];
        for oi in 0..o {
            let go_row = &go_sample[oi * hw..(oi + 1) * hw];
            let mut acc = T::ZERO;
            for &g in go_row {
                acc += g;
            }
            grad_pb.data_mut()[oi] += acc;
            for ci in 0..c {
                let m = &mid_sample[ci * hw..(ci + 1) * hw];
                let mut dot = T::ZERO;
                for (&g, &mv) in go_row.iter().zip(m) {
                    dot += g * mv;
                }
                grad_pw.data_mut()[oi * c + ci] += dot;

                let wv = layer.pointwise_w.data()[oi * c + ci];
                if wv == T::ZERO {
                    continue;
                }
                let gm = &mut grad_mid.data_mut()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                for (gmv, &g) in gm.iter_mut().zip(go_row) {
                    *gmv += wv * g;
                }
            }
        }
    }

    // Depthwise backward through the same zero padding.
    let k = layer.k;
    let half = (k / 2) as isize;
    let mut grad_dw = Tensor::zeros(&[c, k, k]);
    let mut grad_in = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            let plane = &input.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            let kernel = &layer.depthwise.data()[ci * k * k..(ci + 1) * k * k];
            let gm = &grad_mid.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            let gdw = &mut grad_dw.data_mut()[ci * k * k..(ci + 1) * k * k];
            let gin = &mut grad_in.data_mut()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let g = gm[(y * w as isize + x) as usize];
                    if g == T::ZERO {
                        continue;
                    }
                    for ky in 0..k as isize {
                        let sy = y + ky - half;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k as isize {
                            let sx = x + kx - half;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let pidx = (sy * w as isize + sx) as usize;
                            let kidx = (ky * k as isize + kx) as usize;
                            gdw[kidx] += g * plane[pidx];
                            gin[pidx] += g * kernel[kidx];
                        }
                    }
                }
            }
        }
    }

    Ok((grad_in, grad_dw, grad_pw, grad_pb))
}
