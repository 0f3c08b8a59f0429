//! Network layers with hand-derived forward and backward passes.
//!
//! Convolutions use "valid" support; when a graph needs "same" spatial
//! size it applies explicit zero padding (the depthwise stage does this
//! internally). Every convolution computes pre-activations; the
//! activation is a separate composable op. Every backward here is held
//! to a central finite-difference contract: relative error at most 1e-4
//! at step 1e-5 in 64-bit arithmetic.

mod conv;
mod dense;
mod se;
mod separable;

pub use conv::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, Conv2dLayer, Conv3dLayer,
};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use se::{se_backward, se_forward, SeBlock, SeCache};
pub use separable::{
    depthwise_separable_backward, depthwise_separable_forward, DepthwiseSeparableConv2d,
};

use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

/// He-uniform initialization: weights uniform in +-sqrt(6 / fan_in),
/// deterministic per (shape, seed). Biases start at zero.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = Pcg32::new(seed, 0x5eed);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// max(0, x) elementwise.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let out = input.map(|x| x.maximum(T::ZERO));
    debug_assert_finite(&out, "relu");
    out
}

/// Gradient of ReLU given the forward *output* (the mask of positive
/// outputs equals the mask of positive inputs).
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward shape mismatch"));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Identifies one dropout application so its mask is reproducible:
/// (seed, epoch, batch index, layer id). `sample_offset` positions a
/// sub-batch inside its full batch, so sharded workers draw the same
/// per-sample streams the unsharded batch would.
#[derive(Clone, Copy, Debug)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
    pub layer: u64,
    pub sample_offset: u64,
}

impl DropoutKey {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        DropoutKey {
            seed,
            epoch,
            batch,
            layer: 0,
            sample_offset: 0,
        }
    }

    fn stream(&self, sample_in_batch: u64) -> Pcg32 {
        let sample = self.sample_offset + sample_in_batch;
        let s = crate::rng::mix(self.seed, "dropout", &[self.epoch, self.batch, self.layer, sample]);
        Pcg32::new(s, self.layer ^ (sample << 8))
    }
}

/// Inverted dropout over a (batch, features) tensor. In training, each
/// element is zeroed with probability `rate` and survivors are scaled by
/// 1/(1-rate); in inference it is exactly the identity. Returns the
/// applied elementwise scale so the backward pass replays it.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    key: DropoutKey,
    training: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::usage(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let b = input.shape()[0];
    let per_sample = input.numel() / b;
    let keep_scale = T::from_f64(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(input.shape());
    {
        let m = mask.data_mut();
        for s in 0..b {
            let mut rng = key.stream(s as u64);
            for v in m[s * per_sample..(s + 1) * per_sample].iter_mut() {
                if rng.next_f64() >= rate {
                    *v = keep_scale;
                }
            }
        }
    }
    let data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(
    mask: Option<&Tensor<T>>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.shape() != grad_out.shape() {
                return Err(Error::shape("dropout_backward shape mismatch"));
            }
            let data = grad_out
                .data()
                .iter()
                .zip(m.data())
                .map(|(&g, &m)| g * m)
                .collect();
            Tensor::from_vec(grad_out.shape(), data)
        }
    }
}

/// Row-wise softmax of a (batch, classes) tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let mut max = row[0];
        for &x in row.iter() {
            max = max.maximum(x);
        }
        let mut sum = T::ZERO;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    debug_assert_eq!(out.shape(), &[b, k]);
    out
}

/// Mean cross-entropy over the batch with a max-shifted log-softmax, plus
/// the gradient with respect to the logits: (softmax - onehot) / B.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax_cross_entropy expects (batch, classes)"));
    }
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    if targets.len() != b {
        return Err(Error::shape(format!(
            "{} targets for a batch of {b}",
            targets.len()
        )));
    }
    for &t in targets {
        if t >= k {
            return Err(Error::data(format!("target {t} out of range for {k} classes")));
        }
    }
    let probs = softmax(logits);
    let inv_b = T::from_f64(1.0 / b as f64);
    let mut loss = T::ZERO;
    let mut grad = probs.clone();
    {
        let g = grad.data_mut();
        for (s, &t) in targets.iter().enumerate() {
            let p = probs.data()[s * k + t];
            // p is strictly positive after a max-shifted softmax.
            loss -= p.ln();
            g[s * k + t] -= T::ONE;
        }
        for v in g.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Folds the kernel axis of a 5D (B, N, C, H, W) feature map into the
/// channel axis: element (b, n, c, h, w) maps to channel n*C + c. Pure
/// index arithmetic on a row-major buffer, hence a reshape.
pub fn reshape_merge_channels<T: Scalar>(input: Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 5 {
        return Err(Error::shape(format!(
            "reshape_merge_channels expects rank 5, got {:?}",
            input.shape()
        )));
    }
    let s = input.shape().to_vec();
    input.reshaped(&[s[0], s[1] * s[2], s[3], s[4]])
}

/// Inverse of [`reshape_merge_channels`].
pub fn reshape_split_channels<T: Scalar>(input: Tensor<T>, n: usize, c: usize) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::shape("reshape_split_channels expects rank 4"));
    }
    let s = input.shape().to_vec();
    if s[1] != n * c {
        return Err(Error::shape(format!(
            "cannot split {} channels into {n}x{c}",
            s[1]
        )));
    }
    input.reshaped(&[s[0], n, c, s[2], s[3]])
}

/// Center crop of a (B, C, D, H, W) tensor to the target (D, H, W).
/// Extent differences must be even, which valid odd kernels guarantee.
pub fn center_crop5<T: Scalar>(input: &Tensor<T>, d: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if input.rank() != 5 {
        return Err(Error::shape("center_crop5 expects rank 5"));
    }
    let (b, c, sd, sh, sw) = (s[0], s[1], s[2], s[3], s[4]);
    if d > sd || h > sh || w > sw {
        return Err(Error::shape(format!(
            "cannot crop {:?} to ({d},{h},{w})",
            input.shape()
        )));
    }
    if !(sd - d).is_multiple_of(2) || !(sh - h).is_multiple_of(2) || !(sw - w).is_multiple_of(2) {
        return Err(Error::shape("center crop offsets must be symmetric"));
    }
    if (sd, sh, sw) == (d, h, w) {
        return Ok(input.clone());
    }
    let (od, oh, ow) = ((sd - d) / 2, (sh - h) / 2, (sw - w) / 2);
    let mut out = Tensor::zeros(&[b, c, d, h, w]);
    {
        let dst = out.data_mut();
        let src = input.data();
        for bi in 0..b {
            for ci in 0..c {
                for zi in 0..d {
                    for yi in 0..h {
                        let src_off = ((((bi * c) + ci) * sd + (zi + od)) * sh + (yi + oh)) * sw + ow;
                        let dst_off = ((((bi * c) + ci) * d + zi) * h + yi) * w;
                        dst[dst_off..dst_off + w].copy_from_slice(&src[src_off..src_off + w]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`center_crop5`]: embeds a cropped gradient back into the
/// source extents, accumulating into `grad_src`.
pub fn center_crop5_backward<T: Scalar>(grad_src: &mut Tensor<T>, grad_crop: &Tensor<T>) -> Result<()> {
    let s = grad_src.shape().to_vec();
    let g = grad_crop.shape().to_vec();
    if s.len() != 5 || g.len() != 5 || s[0] != g[0] || s[1] != g[1] {
        return Err(Error::shape("center_crop5_backward shape mismatch"));
    }
    let (b, c) = (s[0], s[1]);
    let (sd, sh, sw) = (s[2], s[3], s[4]);
    let (d, h, w) = (g[2], g[3], g[4]);
    let (od, oh, ow) = ((sd - d) / 2, (sh - h) / 2, (sw - w) / 2);
    let dst = grad_src.data_mut();
    let src = grad_crop.data();
    for bi in 0..b {
        for ci in 0..c {
            for zi in 0..d {
                for yi in 0..h {
                    let dst_off = ((((bi * c) + ci) * sd + (zi + od)) * sh + (yi + oh)) * sw + ow;
                    let src_off = ((((bi * c) + ci) * d + zi) * h + yi) * w;
                    for xi in 0..w {
                        dst[dst_off + xi] += src[src_off + xi];
                    }
                }
            }
        }
    }
    Ok(())
}

/// Concatenates rank-5 tensors along the channel axis (axis 1). All
/// other extents must match.
pub fn concat_channels5<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::shape("concat of zero tensors"));
    }
    let first = parts[0].shape();
    if first.len() != 5 {
        return Err(Error::shape("concat_channels5 expects rank 5"));
    }
    let (b, d, h, w) = (first[0], first[2], first[3], first[4]);
    let mut channels = 0usize;
    for p in parts {
        let s = p.shape();
        if s.len() != 5 || s[0] != b || s[2] != d || s[3] != h || s[4] != w {
            return Err(Error::shape(format!(
                "concat_channels5 extent mismatch: {:?} vs {:?}",
                first,
                p.shape()
            )));
        }
        channels += s[1];
    }
    let inner = d * h * w;
    let mut out = Tensor::zeros(&[b, channels, d, h, w]);
    {
        let dst = out.data_mut();
        for bi in 0..b {
            let mut ch_off = 0usize;
            for p in parts {
                let pc = p.shape()[1];
                let src = &p.data()[bi * pc * inner..(bi + 1) * pc * inner];
                let off = (bi * channels + ch_off) * inner;
                dst[off..off + pc * inner].copy_from_slice(src);
                ch_off += pc;
            }
        }
    }
    Ok(out)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn concat_channels5_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    part_channels: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let s = grad_out.shape();
    if s.len() != 5 {
        return Err(Error::shape("concat backward expects rank 5"));
    }
    let (b, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    if part_channels.iter().sum::<usize>() != c {
        return Err(Error::shape("concat backward channel mismatch"));
    }
    let inner = d * h * w;
    let mut out = Vec::with_capacity(part_channels.len());
    for &pc in part_channels {
        out.push(Tensor::zeros(&[b, pc, d, h, w]));
    }
    for bi in 0..b {
        let mut ch_off = 0usize;
        for (pi, &pc) in part_channels.iter().enumerate() {
            let src_off = (bi * c + ch_off) * inner;
            let dst_off = bi * pc * inner;
            out[pi].data_mut()[dst_off..dst_off + pc * inner]
                .copy_from_slice(&grad_out.data()[src_off..src_off + pc * inner]);
            ch_off += pc;
        }
    }
    Ok(out)
}

/// Central finite-difference check of an analytic gradient.
///
/// Samples up to `samples` coordinates of `analytic`; for each, perturbs
/// the matching entry of `state` through `param_access`, re-evaluates
/// `loss`, and compares the numeric slope against the analytic entry.
/// Returns the worst relative error seen.
///
/// A coordinate whose +-step window straddles a ReLU kink makes the
/// central difference meaningless; such crossings announce themselves
/// through a discrete second difference far above smooth-function
/// curvature and are skipped. A wrong analytic gradient shows a slope
/// mismatch *without* that curvature spike, so skipping cannot hide one.
pub fn finite_difference_check<S, L, A>(
    state: &mut S,
    mut loss: L,
    mut param_access: A,
    analytic: &Tensor<f64>,
    samples: usize,
    step: f64,
    rng: &mut Pcg32,
) -> f64
where
    L: FnMut(&S) -> f64,
    A: FnMut(&mut S, usize, f64),
{
    let n = analytic.numel();
    let count = samples.min(n);
    let mut worst = 0.0f64;
    for s in 0..count {
        let idx = if n <= samples {
            s
        } else {
            rng.gen_range(n as u32) as usize
        };
        let mid = loss(state);
        param_access(state, idx, step);
        let up = loss(state);
        param_access(state, idx, -2.0 * step);
        let down = loss(state);
        param_access(state, idx, step);
        let numeric = (up - down) / (2.0 * step);
        let ana = analytic.data()[idx];
        // The second difference is computed from function values alone,
        // so this skip cannot depend on (and cannot protect) the
        // gradient under test: it only rejects coordinates where the
        // curvature inside the window rivals the slope signal itself.
        let second_diff = (up + down - 2.0 * mid).abs();
        if second_diff > 0.1 * step * (numeric.abs() + ana.abs() + 1e-6) {
            continue;
        }
        let rel = (numeric - ana).abs() / (numeric.abs() + ana.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
