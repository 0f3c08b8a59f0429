//! 2D and 3D convolution layers.
//!
//! The output at a position is the dot product of the kernel with the
//! input window plus a per-filter bias, summed over every input channel
//! and kernel offset; no activation is applied here. Support is "valid":
//! a k-extent kernel shrinks that axis by k-1.
//!
//! Internally each sample is lowered to a column matrix (im2col) and the
//! convolution becomes a (filters x K) by (K x positions) matrix
//! product, which keeps the inner loops on contiguous memory.

use crate::error::{Error, Result};
use crate::rng::mix;
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

use super::he_uniform;

/// 2D convolution: weights (out, in, kh, kw), bias per filter.
#[derive(Clone, Debug)]
pub struct Conv2dLayer<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn init(in_channels: usize, out_channels: usize, kh: usize, kw: usize, seed: u64, name: &str) -> Result<Self> {
        check_odd(&[kh, kw])?;
        let fan_in = in_channels * kh * kw;
        Ok(Conv2dLayer {
            in_channels,
            out_channels,
            kh,
            kw,
            weights: he_uniform(&[out_channels, in_channels, kh, kw], fan_in, mix(seed, name, &[0])),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }
}

/// 3D convolution: weights (out, in, kd, kh, kw) with kd the spectral
/// extent, bias per filter.
#[derive(Clone, Debug)]
pub struct Conv3dLayer<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kd: usize,
        kh: usize,
        kw: usize,
        seed: u64,
        name: &str,
    ) -> Result<Self> {
        check_odd(&[kd, kh, kw])?;
        let fan_in = in_channels * kd * kh * kw;
        Ok(Conv3dLayer {
            in_channels,
            out_channels,
            kd,
            kh,
            kw,
            weights: he_uniform(
                &[out_channels, in_channels, kd, kh, kw],
                fan_in,
                mix(seed, name, &[0]),
            ),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }
}

fn check_odd(extents: &[usize]) -> Result<()> {
    for &k in extents {
        if k == 0 || k % 2 == 0 {
            return Err(Error::shape(format!("kernel extents must be odd and >= 1, got {k}")));
        }
    }
    Ok(())
}

/// out[o][p] += sum_k w[o][k] * cols[k][p], out preloaded with bias.
fn gemm_acc<T: Scalar>(out: &mut [T], w: &[T], cols: &[T], o_count: usize, k_count: usize, p_count: usize) {
    for o in 0..o_count {
        let out_row = &mut out[o * p_count..(o + 1) * p_count];
        let w_row = &w[o * k_count..(o + 1) * k_count];
        for (k, &wk) in w_row.iter().enumerate() {
            if wk == T::ZERO {
                continue;
            }
            let col_row = &cols[k * p_count..(k + 1) * p_count];
            for (acc, &c) in out_row.iter_mut().zip(col_row) {
                *acc += wk * c;
            }
        }
    }
}

fn im2col_2d<T: Scalar>(
    sample: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    cols: &mut [T],
) {
    let oh = h - kh + 1;
    let ow = w - kw + 1;
    let p = oh * ow;
    for ci in 0..c {
        let chan = &sample[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let krow = ((ci * kh + ky) * kw + kx) * p;
                for y in 0..oh {
                    let src = (y + ky) * w + kx;
                    cols[krow + y * ow..krow + (y + 1) * ow]
                        .copy_from_slice(&chan[src..src + ow]);
                }
            }
        }
    }
}

/// Valid 2D convolution of a (B, C, H, W) batch.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &Conv2dLayer<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if input.rank() != 4 {
        return Err(Error::shape(format!("conv2d expects (B,C,H,W), got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if c != layer.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, layer expects {}",
            layer.in_channels
        )));
    }
    if h < layer.kh || w < layer.kw {
        return Err(Error::shape(format!(
            "conv2d: {h}x{w} input smaller than {}x{} kernel",
            layer.kh, layer.kw
        )));
    }
    let (oh, ow) = (h - layer.kh + 1, w - layer.kw + 1);
    let (o, p) = (layer.out_channels, oh * ow);
    let k = c * layer.kh * layer.kw;

    let mut out = Tensor::zeros(&[b, o, oh, ow]);
    let mut cols = vec![T::ZERO; k * p];
    for bi in 0..b {
        let sample = &input.data()[bi * c * h * w..(bi + 1) * c * h * w];
        im2col_2d(sample, c, h, w, layer.kh, layer.kw, &mut cols);
        let out_sample = &mut out.data_mut()[bi * o * p..(bi + 1) * o * p];
        for (oi, row) in out_sample.chunks_exact_mut(p).enumerate() {
            row.fill(layer.bias.data()[oi]);
        }
        gemm_acc(out_sample, layer.weights.data(), &cols, o, k, p);
    }
    debug_assert_finite(&out, "conv2d_forward");
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: d/d input, d/d weights, d/d bias.
/// `input` is the forward input (the only cached state a linear layer
/// needs).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv2dLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h - layer.kh + 1, w - layer.kw + 1);
    let (o, p) = (layer.out_channels, oh * ow);
    let k = c * layer.kh * layer.kw;
    if grad_out.shape() != [b, o, oh, ow] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [b, o, oh, ow]
        )));
    }

    let mut grad_in = Tensor::zeros(&[b, c, h, w]);
    let mut grad_w = Tensor::zeros(layer.weights.shape());
    let mut grad_b = Tensor::zeros(&[o]);
    let mut cols = vec![T::ZERO; k * p];
    let mut gcols = vec![T::ZERO; k * p];

    for bi in 0..b {
        let sample = &input.data()[bi * c * h * w..(bi + 1) * c * h * w];
        im2col_2d(sample, c, h, w, layer.kh, layer.kw, &mut cols);
        let go = &grad_out.data()[bi * o * p..(bi + 1) * o * p];

        for oi in 0..o {
            let go_row = &go[oi * p..(oi + 1) * p];
            let mut acc = T::ZERO;
            for &g in go_row {
                acc += g;
            }
            grad_b.data_mut()[oi] += acc;

            let gw_row = &mut grad_w.data_mut()[oi * k..(oi + 1) * k];
            for (ki, gw) in gw_row.iter_mut().enumerate() {
                let col_row = &cols[ki * p..(ki + 1) * p];
                let mut dot = T::ZERO;
                for (&g, &cv) in go_row.iter().zip(col_row) {
                    dot += g * cv;
                }
                *gw += dot;
            }
        }

        gcols.fill(T::ZERO);
        for oi in 0..o {
            let go_row = &go[oi * p..(oi + 1) * p];
            let w_row = &layer.weights.data()[oi * k..(oi + 1) * k];
            for (ki, &wk) in w_row.iter().enumerate() {
                if wk == T::ZERO {
                    continue;
                }
                let gcol_row = &mut gcols[ki * p..(ki + 1) * p];
                for (gc, &g) in gcol_row.iter_mut().zip(go_row) {
                    *gc += wk * g;
                }
            }
        }
        // col2im scatter-add.
        let gin = &mut grad_in.data_mut()[bi * c * h * w..(bi + 1) * c * h * w];
        for ci in 0..c {
            let chan = &mut gin[ci * h * w..(ci + 1) * h * w];
            for ky in 0..layer.kh {
                for kx in 0..layer.kw {
                    let krow = ((ci * layer.kh + ky) * layer.kw + kx) * p;
                    for y in 0..oh {
                        let dst = (y + ky) * w + kx;
                        let src = &gcols[krow + y * ow..krow + (y + 1) * ow];
                        for (d, &v) in chan[dst..dst + ow].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

#[allow(clippy::too_many_arguments)]
fn im2col_3d<T: Scalar>(
    sample: &[T],
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    cols: &mut [T],
) {
    let od = d - kd + 1;
    let oh = h - kh + 1;
    let ow = w - kw + 1;
    let p = od * oh * ow;
    for ci in 0..c {
        let chan = &sample[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let krow = (((ci * kd + kz) * kh + ky) * kw + kx) * p;
                    for z in 0..od {
                        for y in 0..oh {
                            let src = ((z + kz) * h + (y + ky)) * w + kx;
                            let dst = krow + (z * oh + y) * ow;
                            cols[dst..dst + ow].copy_from_slice(&chan[src..src + ow]);
                        }
                    }
                }
            }
        }
    }
}

/// Valid 3D convolution of a (B, C, D, H, W) batch; D is the spectral
/// axis.
pub fn conv3d_forward<T: Scalar>(input: &Tensor<T>, layer: &Conv3dLayer<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if input.rank() != 5 {
        return Err(Error::shape(format!("conv3d expects (B,C,D,H,W), got {:?}", s)));
    }
    let (b, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    if c != layer.in_channels {
        return Err(Error::shape(format!(
            "conv3d: input has {c} channels, layer expects {}",
            layer.in_channels
        )));
    }
    if d < layer.kd || h < layer.kh || w < layer.kw {
        return Err(Error::shape(format!(
            "conv3d: {d}x{h}x{w} input smaller than {}x{}x{} kernel",
            layer.kd, layer.kh, layer.kw
        )));
    }
    let (od, oh, ow) = (d - layer.kd + 1, h - layer.kh + 1, w - layer.kw + 1);
    let (o, p) = (layer.out_channels, od * oh * ow);
    let k = c * layer.kd * layer.kh * layer.kw;

    let mut out = Tensor::zeros(&[b, o, od, oh, ow]);
    let mut cols = vec![T::ZERO; k * p];
    for bi in 0..b {
        let sample = &input.data()[bi * c * d * h * w..(bi + 1) * c * d * h * w];
        im2col_3d(sample, c, d, h, w, layer.kd, layer.kh, layer.kw, &mut cols);
        let out_sample = &mut out.data_mut()[bi * o * p..(bi + 1) * o * p];
        for (oi, row) in out_sample.chunks_exact_mut(p).enumerate() {
            row.fill(layer.bias.data()[oi]);
        }
        gemm_acc(out_sample, layer.weights.data(), &cols, o, k, p);
    }
    debug_assert_finite(&out, "conv3d_forward");
    Ok(out)
}

/// Gradients of [`conv3d_forward`].
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv3dLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    let (b, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let (od, oh, ow) = (d - layer.kd + 1, h - layer.kh + 1, w - layer.kw + 1);
    let (o, p) = (layer.out_channels, od * oh * ow);
    let k = c * layer.kd * layer.kh * layer.kw;
    if grad_out.shape() != [b, o, od, oh, ow] {
        return Err(Error::shape(format!(
            "conv3d_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [b, o, od, oh, ow]
        )));
    }

    let mut grad_in = Tensor::zeros(&[b, c, d, h, w]);
    let mut grad_w = Tensor::zeros(layer.weights.shape());
    let mut grad_b = Tensor::zeros(&[o]);
    let mut cols = vec![T::ZERO; k * p];
    let mut gcols = vec![T::ZERO; k * p];

    for bi in 0..b {
        let sample = &input.data()[bi * c * d * h * w..(bi + 1) * c * d * h * w];
        im2col_3d(sample, c, d, h, w, layer.kd, layer.kh, layer.kw, &mut cols);
        let go = &grad_out.data()[bi * o * p..(bi + 1) * o * p];

        for oi in 0..o {
            let go_row = &go[oi * p..(oi + 1) * p];
            let mut acc = T::ZERO;
            for &g in go_row {
                acc += g;
            }
            grad_b.data_mut()[oi] += acc;

            let gw_row = &mut grad_w.data_mut()[oi * k..(oi + 1) * k];
            for (ki, gw) in gw_row.iter_mut().enumerate() {
                let col_row = &cols[ki * p..(ki + 1) * p];
                let mut dot = T::ZERO;
                for (&g, &cv) in go_row.iter().zip(col_row) {
                    dot += g * cv;
                }
                *gw += dot;
            }
        }

        gcols.fill(T::ZERO);
        for oi in 0..o {
            let go_row = &go[oi * p..(oi + 1) * p];
            let w_row = &layer.weights.data()[oi * k..(oi + 1) * k];
            for (ki, &wk) in w_row.iter().enumerate() {
                if wk == T::ZERO {
                    continue;
                }
                let gcol_row = &mut gcols[ki * p..(ki + 1) * p];
                for (gc, &g) in gcol_row.iter_mut().zip(go_row) {
                    *gc += wk * g;
                }
            }
        }
        let gin = &mut grad_in.data_mut()[bi * c * d * h * w..(bi + 1) * c * d * h * w];
        for ci in 0..c {
            let chan = &mut gin[ci * d * h * w..(ci + 1) * d * h * w];
            for kz in 0..layer.kd {
                for ky in 0..layer.kh {
                    for kx in 0..layer.kw {
                        let krow = (((ci * layer.kd + kz) * layer.kh + ky) * layer.kw + kx) * p;
                        for z in 0..od {
                            for y in 0..oh {
                                let dst = ((z + kz) * h + (y + ky)) * w + kx;
                                let src = &gcols[krow + (z * oh + y) * ow..krow + (z * oh + y + 1) * ow];
                                for (dv, &v) in chan[dst..dst + ow].iter_mut().zip(src) {
                                    *dv += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;
    use crate::rng::Pcg32;

    fn random_tensor(shape: &[usize], rng: &mut Pcg32) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct six-nested-loop 2D convolution, the independent oracle.
    fn conv2d_oracle(input: &Tensor<f64>, layer: &Conv2dLayer<f64>) -> Tensor<f64> {
        let s = input.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h - layer.kh + 1, w - layer.kw + 1);
        let mut out = Tensor::zeros(&[b, layer.out_channels, oh, ow]);
        for bi in 0..b {
            for o in 0..layer.out_channels {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = layer.bias.data()[o];
                        for ci in 0..c {
                            for ky in 0..layer.kh {
                                for kx in 0..layer.kw {
                                    let wv = layer.weights.at4(o, ci, ky, kx);
                                    let iv = input.at4(bi, ci, y + ky, x + kx);
                                    acc += wv * iv;
                                }
                            }
                        }
                        let idx = ((bi * layer.out_channels + o) * oh + y) * ow + x;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    /// Direct eight-nested-loop 3D convolution oracle.
    fn conv3d_oracle(input: &Tensor<f64>, layer: &Conv3dLayer<f64>) -> Tensor<f64> {
        let s = input.shape();
        let (b, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let (od, oh, ow) = (d - layer.kd + 1, h - layer.kh + 1, w - layer.kw + 1);
        let mut out = Tensor::zeros(&[b, layer.out_channels, od, oh, ow]);
        for bi in 0..b {
            for o in 0..layer.out_channels {
                for z in 0..od {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut acc = layer.bias.data()[o];
                            for ci in 0..c {
                                for kz in 0..layer.kd {
                                    for ky in 0..layer.kh {
                                        for kx in 0..layer.kw {
                                            let wv = layer.weights.at5(o, ci, kz, ky, kx);
                                            let iv = input.at5(bi, ci, z + kz, y + ky, x + kx);
                                            acc += wv * iv;
                                        }
                                    }
                                }
                            }
                            let idx = (((bi * layer.out_channels + o) * od + z) * oh + y) * ow + x;
                            out.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_all_ones_sums_kernel() {
        let input = Tensor::filled(&[1, 1, 3, 3], 1.0f64);
        let mut layer = Conv2dLayer::init(1, 1, 3, 3, 0, "t").unwrap();
        layer.weights = Tensor::filled(&[1, 1, 3, 3], 1.0);
        layer.bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = Pcg32::new(1, 1);
        let input = random_tensor(&[2, 1, 4, 5], &mut rng);
        let mut layer = Conv2dLayer::init(1, 1, 1, 1, 0, "t").unwrap();
        layer.weights = Tensor::filled(&[1, 1, 1, 1], 1.0);
        layer.bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut rng = Pcg32::new(21, 4);
        let input = random_tensor(&[2, 3, 8, 8], &mut rng);
        let mut layer = Conv2dLayer::init(3, 4, 3, 3, 7, "t").unwrap();
        for v in layer.bias.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
        let fast = conv2d_forward(&input, &layer).unwrap();
        let slow = conv2d_oracle(&input, &layer);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_random_shapes_match_oracle() {
        let mut rng = Pcg32::new(5150, 2);
        for trial in 0..25 {
            let c = 1 + rng.gen_range(3) as usize;
            let o = 1 + rng.gen_range(4) as usize;
            let kh = [1, 3, 5][rng.gen_range(3) as usize];
            let kw = [1, 3][rng.gen_range(2) as usize];
            let h = kh + rng.gen_range(5) as usize;
            let w = kw + rng.gen_range(5) as usize;
            let b = 1 + rng.gen_range(2) as usize;
            let input = random_tensor(&[b, c, h, w], &mut rng);
            let mut layer = Conv2dLayer::init(c, o, kh, kw, trial as u64, "t").unwrap();
            for v in layer.bias.data_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
            let fast = conv2d_forward(&input, &layer).unwrap();
            let slow = conv2d_oracle(&input, &layer);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_shape_errors() {
        let input = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let layer = Conv2dLayer::<f64>::init(3, 1, 3, 3, 0, "t").unwrap();
        assert!(conv2d_forward(&input, &layer).is_err());
        let small = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(conv2d_forward(&small, &layer).is_err());
        assert!(Conv2dLayer::<f64>::init(1, 1, 2, 3, 0, "t").is_err());
    }

    #[test]
    fn conv2d_linear_case_grad_w_is_input() {
        // Output = single position, loss = output. dL/dw = input window.
        let mut rng = Pcg32::new(2, 2);
        let input = random_tensor(&[1, 1, 3, 3], &mut rng);
        let layer = Conv2dLayer::init(1, 1, 3, 3, 1, "t").unwrap();
        let go = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let (_, gw, gb) = conv2d_backward(&input, &layer, &go).unwrap();
        assert_eq!(gw.data(), input.data());
        assert_eq!(gb.data()[0], 1.0);
    }

    #[test]
    fn conv2d_grad_b_is_spatial_batch_sum() {
        let mut rng = Pcg32::new(3, 3);
        let input = random_tensor(&[2, 2, 5, 5], &mut rng);
        let layer = Conv2dLayer::init(2, 3, 3, 3, 4, "t").unwrap();
        let go = random_tensor(&[2, 3, 3, 3], &mut rng);
        let (_, _, gb) = conv2d_backward(&input, &layer, &go).unwrap();
        for o in 0..3 {
            let mut expected = 0.0;
            for bi in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        expected += go.at4(bi, o, y, x);
                    }
                }
            }
            assert!((gb.data()[o] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_backward_matches_finite_differences() {
        let mut rng = Pcg32::new(11, 11);
        let input = random_tensor(&[2, 2, 6, 5], &mut rng);
        let layer = Conv2dLayer::init(2, 3, 3, 3, 5, "t").unwrap();
        // Scalarize through a fixed random projection.
        let proj = random_tensor(&[2, 3, 4, 3], &mut rng);
        let (gin, gw, gb) = conv2d_backward(&input, &layer, &proj).unwrap();

        let loss_in = |t: &Tensor<f64>, l: &Conv2dLayer<f64>| {
            let out = conv2d_forward(t, l).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut in_fd = input.clone();
        let worst = finite_difference_check(
            &mut in_fd,
            |t| loss_in(t, &layer),
            |t, i, d| t.data_mut()[i] += d,
            &gin,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv2d input grad rel err {worst}");

        let mut l_fd = layer.clone();
        let worst = finite_difference_check(
            &mut l_fd,
            |l| loss_in(&input, l),
            |l, i, d| l.weights.data_mut()[i] += d,
            &gw,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv2d weight grad rel err {worst}");

        let mut l_fd = layer.clone();
        let worst = finite_difference_check(
            &mut l_fd,
            |l| loss_in(&input, l),
            |l, i, d| l.bias.data_mut()[i] += d,
            &gb,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv2d bias grad rel err {worst}");
    }

    #[test]
    fn conv3d_all_ones_3x3x3_gives_27() {
        let input = Tensor::filled(&[1, 1, 3, 3, 3], 1.0f64);
        let mut layer = Conv3dLayer::init(1, 1, 3, 3, 3, 0, "t").unwrap();
        layer.weights = Tensor::filled(&[1, 1, 3, 3, 3], 1.0);
        layer.bias = Tensor::zeros(&[1]);
        let out = conv3d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(out.data()[0], 27.0);
    }

    #[test]
    fn conv3d_scaling_kernel() {
        let mut rng = Pcg32::new(8, 8);
        let input = random_tensor(&[1, 1, 3, 4, 4], &mut rng);
        let mut layer = Conv3dLayer::init(1, 1, 1, 1, 1, 0, "t").unwrap();
        layer.weights = Tensor::filled(&[1, 1, 1, 1, 1], 2.0);
        layer.bias = Tensor::zeros(&[1]);
        let out = conv3d_forward(&input, &layer).unwrap();
        for (o, i) in out.data().iter().zip(input.data()) {
            assert!((o - 2.0 * i).abs() < 1e-15);
        }
    }

    #[test]
    fn conv3d_matches_naive_oracle() {
        let mut rng = Pcg32::new(33, 1);
        let input = random_tensor(&[2, 2, 7, 7, 7], &mut rng);
        let mut layer = Conv3dLayer::init(2, 3, 3, 3, 3, 6, "t").unwrap();
        for v in layer.bias.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
        let fast = conv3d_forward(&input, &layer).unwrap();
        let slow = conv3d_oracle(&input, &layer);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv3d_random_shapes_match_oracle() {
        let mut rng = Pcg32::new(404, 9);
        for trial in 0..25 {
            let c = 1 + rng.gen_range(2) as usize;
            let o = 1 + rng.gen_range(3) as usize;
            let kd = [1, 3, 5][rng.gen_range(3) as usize];
            let kh = [1, 3][rng.gen_range(2) as usize];
            let kw = [1, 3][rng.gen_range(2) as usize];
            let d = kd + rng.gen_range(4) as usize;
            let h = kh + rng.gen_range(4) as usize;
            let w = kw + rng.gen_range(4) as usize;
            let input = random_tensor(&[1 + (trial % 2), c, d, h, w], &mut rng);
            let mut layer = Conv3dLayer::init(c, o, kd, kh, kw, trial as u64, "t").unwrap();
            for v in layer.bias.data_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
            let fast = conv3d_forward(&input, &layer).unwrap();
            let slow = conv3d_oracle(&input, &layer);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv3d_linear_case_and_bias_sum() {
        let mut rng = Pcg32::new(12, 12);
        let input = random_tensor(&[1, 1, 3, 3, 3], &mut rng);
        let layer = Conv3dLayer::init(1, 1, 3, 3, 3, 2, "t").unwrap();
        let go = Tensor::filled(&[1, 1, 1, 1, 1], 1.0);
        let (_, gw, gb) = conv3d_backward(&input, &layer, &go).unwrap();
        assert_eq!(gw.data(), input.data());
        assert_eq!(gb.data()[0], 1.0);

        let input = random_tensor(&[2, 1, 4, 4, 4], &mut rng);
        let go = random_tensor(&[2, 2, 2, 2, 2], &mut rng);
        let layer = Conv3dLayer::init(1, 2, 3, 3, 3, 3, "t").unwrap();
        let (_, _, gb) = conv3d_backward(&input, &layer, &go).unwrap();
        for o in 0..2 {
            let mut expected = 0.0;
            for bi in 0..2 {
                for z in 0..2 {
                    for y in 0..2 {
                        for x in 0..2 {
                            expected += go.at5(bi, o, z, y, x);
                        }
                    }
                }
            }
            assert!((gb.data()[o] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_backward_matches_finite_differences() {
        let mut rng = Pcg32::new(19, 19);
        let input = random_tensor(&[2, 2, 5, 4, 4], &mut rng);
        let layer = Conv3dLayer::init(2, 2, 3, 3, 3, 14, "t").unwrap();
        let proj = random_tensor(&[2, 2, 3, 2, 2], &mut rng);
        let (gin, gw, gb) = conv3d_backward(&input, &layer, &proj).unwrap();

        let loss = |t: &Tensor<f64>, l: &Conv3dLayer<f64>| {
            let out = conv3d_forward(t, l).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut in_fd = input.clone();
        let worst = finite_difference_check(
            &mut in_fd,
            |t| loss(t, &layer),
            |t, i, d| t.data_mut()[i] += d,
            &gin,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv3d input grad rel err {worst}");

        let mut l_fd = layer.clone();
        let worst = finite_difference_check(
            &mut l_fd,
            |l| loss(&input, l),
            |l, i, d| l.weights.data_mut()[i] += d,
            &gw,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv3d weight grad rel err {worst}");

        let mut l_fd = layer.clone();
        let worst = finite_difference_check(
            &mut l_fd,
            |l| loss(&input, l),
            |l, i, d| l.bias.data_mut()[i] += d,
            &gb,
            24,
            1e-5,
            &mut rng,
        );
        assert!(worst <= 1e-4, "conv3d bias grad rel err {worst}");
    }

    #[test]
    fn conv3d_with_full_spectral_kernel_equals_stacked_conv2d() {
        // When D equals the spectral kernel extent, D' collapses to 1 and
        // the 3D conv equals a 2D conv over the spectrally-stacked input
        // with correspondingly stacked kernels.
        let mut rng = Pcg32::new(88, 3);
        let (c, kd) = (2usize, 3usize);
        let input = random_tensor(&[2, c, kd, 6, 6], &mut rng);
        let mut l3 = Conv3dLayer::init(c, 4, kd, 3, 3, 1, "t").unwrap();
        for v in l3.bias.data_mut() {
            *v = rng.uniform(-0.2, 0.2);
        }

        let stacked = input
            .clone()
            .reshaped(&[2, c * kd, 6, 6])
            .unwrap();
        let mut l2 = Conv2dLayer::init(c * kd, 4, 3, 3, 1, "t").unwrap();
        l2.weights = l3.weights.clone().reshaped(&[4, c * kd, 3, 3]).unwrap();
        l2.bias = l3.bias.clone();

        let out3 = conv3d_forward(&input, &l3).unwrap();
        let out2 = conv2d_forward(&stacked, &l2).unwrap();
        assert_eq!(out3.shape(), &[2, 4, 1, 4, 4]);
        for (a, b) in out3.data().iter().zip(out2.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
