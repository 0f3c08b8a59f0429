//! Built-in verification suite: gradient checks for every layer, an
//! independent eigen-oracle for PCA, a marginal-enumeration oracle for
//! kappa, reshape round-trips and a whole-model gradient check.
//!
//! The CLI `selfcheck` command runs these on demand; tests also inject
//! deliberate faults to prove failures are detected and named.

use crate::data_io::HyperspectralCube;
use crate::metrics::ConfusionMatrix;
use crate::model::{Network, SeHybridSnConfig, SeHybridSnModel};
use crate::nn::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, depthwise_separable_backward, depthwise_separable_forward, dropout_backward,
    dropout_forward, finite_difference_check, reshape_merge_channels, reshape_split_channels,
    se_backward, se_forward, softmax_cross_entropy, Conv2dLayer, Conv3dLayer, DenseLayer,
    DepthwiseSeparableConv2d, DropoutKey, SeBlock,
};
use crate::preprocess::fit_pca;
use crate::rng::Pcg32;
use crate::tensor::Tensor;

/// Deliberate defects a test can inject to prove detection works.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Conv3dBackward,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

fn random_tensor(shape: &[usize], rng: &mut Pcg32) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

const GRAD_TOL: f64 = 1e-4;

/// Runs every check; `fault` corrupts the named computation so callers
/// can verify failures surface.
pub fn run(fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        check_conv2d_backward(),
        check_conv3d_backward(fault == Some(Fault::Conv3dBackward)),
        check_separable_backward(),
        check_se_backward(),
        check_dense_backward(),
        check_softmax_ce(),
        check_dropout(),
        check_whole_model(),
        check_pca_oracle(),
        check_kappa_oracle(),
        check_reshape_roundtrip(),
    ]
}

fn grad_result(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst relative error {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn check_conv2d_backward() -> CheckResult {
    let mut rng = Pcg32::new(1001, 1);
    let input = random_tensor(&[2, 2, 6, 5], &mut rng);
    let layer = Conv2dLayer::init(2, 3, 3, 3, 1001, "selfcheck").unwrap();
    let proj = random_tensor(&[2, 3, 4, 3], &mut rng);
    let (gin, gw, gb) = conv2d_backward(&input, &layer, &proj).unwrap();
    let loss = |t: &Tensor<f64>, l: &Conv2dLayer<f64>| {
        conv2d_forward(t, l)
            .unwrap()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    worst = worst.max(finite_difference_check(&mut x, |t| loss(t, &layer), |t, i, d| t.data_mut()[i] += d, &gin, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.weights.data_mut()[i] += d, &gw, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.bias.data_mut()[i] += d, &gb, 20, 1e-5, &mut rng));
    grad_result("conv2d_backward", worst, GRAD_TOL)
}

fn check_conv3d_backward(inject_fault: bool) -> CheckResult {
    let mut rng = Pcg32::new(1002, 1);
    let input = random_tensor(&[2, 2, 5, 4, 4], &mut rng);
    let layer = Conv3dLayer::init(2, 2, 3, 3, 3, 1002, "selfcheck").unwrap();
    let proj = random_tensor(&[2, 2, 3, 2, 2], &mut rng);
    let (gin, mut gw, gb) = conv3d_backward(&input, &layer, &proj).unwrap();
    if inject_fault {
        // Fault fixture: perturb the analytic weight gradient.
        gw.data_mut()[0] += 0.5;
    }
    let loss = |t: &Tensor<f64>, l: &Conv3dLayer<f64>| {
        conv3d_forward(t, l)
            .unwrap()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    worst = worst.max(finite_difference_check(&mut x, |t| loss(t, &layer), |t, i, d| t.data_mut()[i] += d, &gin, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    // Cover the (possibly corrupted) first coordinate plus random ones.
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.weights.data_mut()[i] += d, &gw, gw.numel(), 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.bias.data_mut()[i] += d, &gb, 20, 1e-5, &mut rng));
    grad_result("conv3d_backward", worst, GRAD_TOL)
}

fn check_separable_backward() -> CheckResult {
    let mut rng = Pcg32::new(1003, 1);
    let input = random_tensor(&[2, 3, 4, 4], &mut rng);
    let layer = DepthwiseSeparableConv2d::init(3, 4, 3, 1003, "selfcheck").unwrap();
    let proj = random_tensor(&[2, 4, 4, 4], &mut rng);
    let (_, mid) = depthwise_separable_forward(&input, &layer).unwrap();
    let (gin, gdw, gpw, gpb) = depthwise_separable_backward(&input, &layer, &mid, &proj).unwrap();
    let loss = |x: &Tensor<f64>, l: &DepthwiseSeparableConv2d<f64>| {
        depthwise_separable_forward(x, l)
            .unwrap()
            .0
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    worst = worst.max(finite_difference_check(&mut x, |t| loss(t, &layer), |t, i, d| t.data_mut()[i] += d, &gin, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.depthwise.data_mut()[i] += d, &gdw, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.pointwise_w.data_mut()[i] += d, &gpw, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.pointwise_b.data_mut()[i] += d, &gpb, 20, 1e-5, &mut rng));
    grad_result("separable_backward", worst, GRAD_TOL)
}

fn check_se_backward() -> CheckResult {
    let mut rng = Pcg32::new(1004, 1);
    let input = random_tensor(&[2, 6, 3, 3], &mut rng);
    let block = SeBlock::init(6, 3, 1004, "selfcheck").unwrap();
    let proj = random_tensor(&[2, 6, 3, 3], &mut rng);
    let (_, cache) = se_forward(&input, &block).unwrap();
    let (gin, grads) = se_backward(&input, &block, &cache, &proj).unwrap();
    let loss = |x: &Tensor<f64>, b: &SeBlock<f64>| {
        se_forward(x, b)
            .unwrap()
            .0
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    worst = worst.max(finite_difference_check(&mut x, |t| loss(t, &block), |t, i, d| t.data_mut()[i] += d, &gin, 20, 1e-5, &mut rng));
    let mut b = block.clone();
    worst = worst.max(finite_difference_check(&mut b, |b| loss(&input, b), |b, i, d| b.w1.data_mut()[i] += d, &grads.w1, 20, 1e-5, &mut rng));
    let mut b = block.clone();
    worst = worst.max(finite_difference_check(&mut b, |b| loss(&input, b), |b, i, d| b.w2.data_mut()[i] += d, &grads.w2, 20, 1e-5, &mut rng));
    grad_result("se_backward", worst, GRAD_TOL)
}

fn check_dense_backward() -> CheckResult {
    let mut rng = Pcg32::new(1005, 1);
    let input = random_tensor(&[3, 5], &mut rng);
    let layer = DenseLayer::init(5, 4, 1005, "selfcheck");
    let proj = random_tensor(&[3, 4], &mut rng);
    let (gin, gw, gb) = dense_backward(&input, &layer, &proj).unwrap();
    let loss = |x: &Tensor<f64>, l: &DenseLayer<f64>| {
        dense_forward(x, l)
            .unwrap()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    worst = worst.max(finite_difference_check(&mut x, |t| loss(t, &layer), |t, i, d| t.data_mut()[i] += d, &gin, 15, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.weights.data_mut()[i] += d, &gw, 20, 1e-5, &mut rng));
    let mut l = layer.clone();
    worst = worst.max(finite_difference_check(&mut l, |l| loss(&input, l), |l, i, d| l.bias.data_mut()[i] += d, &gb, 4, 1e-5, &mut rng));
    grad_result("dense_backward", worst, GRAD_TOL)
}

fn check_softmax_ce() -> CheckResult {
    let mut rng = Pcg32::new(1006, 1);
    let logits = random_tensor(&[4, 6], &mut rng);
    let targets = vec![1usize, 5, 0, 3];
    let (_, grad) = softmax_cross_entropy(&logits, &targets).unwrap();
    let mut l = logits.clone();
    let worst = finite_difference_check(
        &mut l,
        |l| softmax_cross_entropy(l, &targets).unwrap().0,
        |l, i, d| l.data_mut()[i] += d,
        &grad,
        24,
        1e-6,
        &mut rng,
    );
    grad_result("softmax_cross_entropy", worst, 1e-6)
}

fn check_dropout() -> CheckResult {
    // Fixed-mask contract: with the mask held fixed, the op is a linear
    // elementwise scale, so the backward is the same scale; inference is
    // exactly the identity.
    let mut rng = Pcg32::new(1007, 1);
    let x = random_tensor(&[2, 10], &mut rng);
    let key = DropoutKey::new(7, 3, 9);
    let (y, mask) = dropout_forward(&x, 0.4, key, true).unwrap();
    let mask = mask.unwrap();
    let mut ok = true;
    let mut detail = String::from("fixed-mask linearity and inference identity hold");
    for i in 0..x.numel() {
        if (y.data()[i] - x.data()[i] * mask.data()[i]).abs() > 1e-15 {
            ok = false;
            detail = format!("forward mismatch at {i}");
        }
    }
    let go = random_tensor(&[2, 10], &mut rng);
    let gi = dropout_backward(Some(&mask), &go).unwrap();
    for i in 0..go.numel() {
        if (gi.data()[i] - go.data()[i] * mask.data()[i]).abs() > 1e-15 {
            ok = false;
            detail = format!("backward mismatch at {i}");
        }
    }
    let (y_inf, m_inf) = dropout_forward(&x, 0.4, key, false).unwrap();
    if y_inf != x || m_inf.is_some() {
        ok = false;
        detail = "inference mode is not the identity".into();
    }
    CheckResult {
        name: "dropout_fixed_mask",
        passed: ok,
        detail,
    }
}

fn check_whole_model() -> CheckResult {
    let cfg = SeHybridSnConfig::tiny(1008);
    let model = SeHybridSnModel::<f64>::build(cfg.clone()).unwrap();
    let mut rng = Pcg32::new(1008, 2);
    let shape = [2, 1, cfg.pca_k, cfg.window, cfg.window];
    let x = random_tensor(&shape, &mut rng);
    let targets = vec![0usize, 1];
    let key = DropoutKey::new(0, 0, 0);
    let (logits, cache) = model.forward_train(&x, key).unwrap();
    let (_, grad_logits) = softmax_cross_entropy(&logits, &targets).unwrap();
    let grads = model.backward(&cache, &grad_logits).unwrap();

    let mut model_fd = SeHybridSnModel::<f64>::build(cfg).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, analytic) in grads.iter().enumerate() {
        let samples = 2.min(analytic.numel());
        worst = worst.max(finite_difference_check(
            &mut model_fd,
            |m| {
                let logits = m.forward_train(&x, key).unwrap().0;
                softmax_cross_entropy(&logits, &targets).unwrap().0
            },
            |m, i, d| {
                let mut params = m.parameters_mut();
                params[pi].data_mut()[i] += d;
            },
            analytic,
            samples,
            1e-5,
            &mut rng,
        ));
    }
    grad_result("whole_model_backward", worst, 1e-3)
}

/// Power iteration with deflation: an eigen-solver sharing nothing with
/// the Jacobi path.
fn power_iteration(matrix: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for comp in 0..k {
        let mut v: Vec<f64> = (0..n).map(|i| ((i + 7 * comp + 1) as f64).sin()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        let mut lambda = 0.0f64;
        for _ in 0..20000 {
            let mut w = vec![0.0f64; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += a[i * n + j] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for x in &mut w {
                *x /= norm;
            }
            let mut new_lambda = 0.0;
            for i in 0..n {
                let mut av = 0.0;
                for j in 0..n {
                    av += a[i * n + j] * w[j];
                }
                new_lambda += w[i] * av;
            }
            let done = (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs().max(1.0);
            v = w;
            lambda = new_lambda;
            if done {
                break;
            }
        }
        values.push(lambda);
        vectors.extend_from_slice(&v);
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] -= lambda * v[i] * v[j];
            }
        }
    }
    (values, vectors)
}

fn check_pca_oracle() -> CheckResult {
    let mut rng = Pcg32::new(1009, 1);
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let d = 6 + trial;
        let n_px = 50;
        let mut data = Vec::with_capacity(n_px * d);
        for _ in 0..n_px * d {
            data.push(rng.uniform(-2.0, 2.0));
        }
        let cube = HyperspectralCube::new(1, n_px, d, data).unwrap();
        let model = fit_pca(&cube, d).unwrap();

        let mut mean = vec![0.0f64; d];
        for px in 0..n_px {
            for b in 0..d {
                mean[b] += cube.get(0, px, b);
            }
        }
        for m in &mut mean {
            *m /= n_px as f64;
        }
        let mut cov = vec![0.0f64; d * d];
        for px in 0..n_px {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (cube.get(0, px, i) - mean[i]) * (cube.get(0, px, j) - mean[j]);
                }
            }
        }
        for c in &mut cov {
            *c /= n_px as f64;
        }
        let (oracle_vals, oracle_vecs) = power_iteration(&cov, d, 3);
        for c in 0..3 {
            worst = worst.max((model.eigenvalues[c] - oracle_vals[c]).abs() / oracle_vals[0].max(1.0));
            let dot: f64 = model
                .component(c)
                .iter()
                .zip(&oracle_vecs[c * d..(c + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            worst = worst.max((dot.abs() - 1.0).abs());
        }
    }
    CheckResult {
        name: "pca_eigen_oracle",
        passed: worst <= 1e-6,
        detail: format!("worst eigen deviation {worst:.3e} (tolerance 1e-6)"),
    }
}

fn check_kappa_oracle() -> CheckResult {
    let mut rng = Pcg32::new(1010, 1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 40 {
        let k = 2 + (rng.gen_range(4) as usize);
        let mut cm = ConfusionMatrix::new(k);
        for t in 1..=k as u16 {
            for p in 1..=k as u16 {
                for _ in 0..rng.gen_range(9) {
                    cm.accumulate(t, p).unwrap();
                }
            }
        }
        if cm.total() == 0 {
            continue;
        }
        let kappa = match cm.kappa() {
            Ok(v) => v,
            Err(_) => continue,
        };
        // Marginal enumeration.
        let total = cm.total() as f64;
        let p_o = cm.trace() as f64 / total;
        let mut p_e = 0.0;
        for c in 1..=k {
            p_e += (cm.row_sum(c) as f64 / total) * (cm.col_sum(c) as f64 / total);
        }
        let oracle = (p_o - p_e) / (1.0 - p_e);
        worst = worst.max((kappa - oracle).abs());
        checked += 1;
    }
    CheckResult {
        name: "kappa_marginal_oracle",
        passed: worst <= 1e-12,
        detail: format!("worst deviation {worst:.3e} (tolerance 1e-12)"),
    }
}

fn check_reshape_roundtrip() -> CheckResult {
    let mut rng = Pcg32::new(1011, 1);
    let mut ok = true;
    for _ in 0..10 {
        let shape = [
            1 + rng.gen_range(3) as usize,
            1 + rng.gen_range(4) as usize,
            1 + rng.gen_range(4) as usize,
            1 + rng.gen_range(3) as usize,
            1 + rng.gen_range(3) as usize,
        ];
        let x = random_tensor(&shape, &mut rng);
        let merged = reshape_merge_channels(x.clone()).unwrap();
        let back = reshape_split_channels(merged, shape[1], shape[2]).unwrap();
        if back != x {
            ok = false;
        }
    }
    CheckResult {
        name: "reshape_merge_roundtrip",
        passed: ok,
        detail: if ok {
            "merge/split identity holds on random rank-5 shapes".into()
        } else {
            "round trip mismatch".into()
        },
    }
}
