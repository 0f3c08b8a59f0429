//! Mini-batch training with validation-based model selection, plus the
//! repeated-run protocol that reports mean and standard deviation of
//! every accuracy index.
//!
//! Determinism: the epoch shuffle, dropout masks and weight init are all
//! keyed off explicit seeds, and batch gradients are accumulated over
//! fixed-size sample chunks reduced in chunk order, so a run produces
//! byte-identical results for any `--threads` setting.

use crate::data_io::{GroundTruthMap, HyperspectralCube};
use crate::error::{Error, Result};
use crate::json::Writer;
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::{batch_from_pixels, Network};
use crate::nn::{softmax_cross_entropy, DropoutKey};
use crate::parallel;
use crate::preprocess::{stratified_split, Role, SplitAssignment};
use crate::rng::{mix, Pcg32};
use crate::tensor::{Scalar, Tensor};
use std::time::Instant;

/// Samples per gradient chunk. Fixed (not derived from the worker
/// count) so the reduction tree never depends on `--threads`.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::usage(format!("unknown optimizer '{other}'"))),
        }
    }
    pub fn tag(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience, in epochs without a validation-OA improvement.
    pub patience: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 150,
            patience: 30,
            seed: 42,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be non-negative and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::usage("repeats must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::usage("max epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Per-parameter-tensor Adam moments.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &[&Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction:
/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} states",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one_minus_b1 = T::from_f64(1.0 - beta1);
    let one_minus_b2 = T::from_f64(1.0 - beta2);
    let inv_bc1 = T::from_f64(1.0 / (1.0 - beta1.powi(t)));
    let inv_bc2 = T::from_f64(1.0 / (1.0 - beta2.powi(t)));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(epsilon);

    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::shape(format!(
                "adam: parameter {i} shape {:?} vs grad {:?}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + one_minus_b1 * g[j];
            v[j] = b2 * v[j] + one_minus_b2 * g[j] * g[j];
            let m_hat = m[j] * inv_bc1;
            let v_hat = v[j] * inv_bc2;
            p[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent: p <- p - lr g.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("sgd: parameter/gradient count mismatch"));
    }
    let lr_t = T::from_f64(lr);
    for i in 0..params.len() {
        let p = params[i].data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            p[j] -= lr_t * g[j];
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStat {
    pub loss: f64,
    pub val_oa: f64,
}

/// What one training run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStat>,
    /// Epoch (0-based) whose parameters were kept: the best validation
    /// OA, earliest on ties.
    pub selected_epoch: usize,
    pub wall_seconds: f64,
    pub seed: u64,
    pub test_report: Option<MetricsReport>,
}

impl TrainReport {
    pub fn best_val_oa(&self) -> f64 {
        self.epochs
            .get(self.selected_epoch)
            .map(|e| e.val_oa)
            .unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        let mut w = Writer::new();
        w.begin_object()
            .key("seed")
            .uint(self.seed)
            .key("selected_epoch")
            .uint(self.selected_epoch as u64)
            .key("wall_seconds")
            .float(self.wall_seconds)
            .key("epochs")
            .begin_array();
        for e in &self.epochs {
            w.begin_object()
                .key("loss")
                .float(e.loss)
                .key("val_oa")
                .float(e.val_oa)
                .end_object();
        }
        w.end_array();
        w.key("test");
        match &self.test_report {
            Some(r) => {
                // Inline the already-serialized metrics object.
                let mut s = w.finish();
                s.push_str(&r.to_json());
                s.push('}');
                return s;
            }
            None => {
                w.bool(false);
            }
        }
        w.end_object();
        w.finish()
    }

    /// Per-epoch curve as CSV: epoch, loss, val_oa.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_oa\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", e.loss, e.val_oa));
        }
        out
    }
}

/// Pixel lists for one role, resolved once per run.
fn role_pixels(
    gt: &GroundTruthMap,
    split: &SplitAssignment,
    role: Role,
) -> Vec<(usize, usize, u16)> {
    split.pixels_with_role(gt, role)
}

/// Argmax predictions for a pixel list, sharded deterministically.
pub fn predict_pixels<T: Scalar, N: Network<T> + Sync>(
    model: &N,
    cube: &HyperspectralCube,
    pixels: &[(usize, usize, u16)],
) -> Result<Vec<u16>> {
    let window = model.window();
    let k = model.num_classes();
    let chunks = parallel::map_chunks(pixels.len(), 64, |_, range| {
        let coords: Vec<(usize, usize)> = pixels[range].iter().map(|&(r, c, _)| (r, c)).collect();
        let batch = batch_from_pixels::<T>(cube, &coords, window)?;
        let logits = model.forward(&batch)?;
        let mut preds = Vec::with_capacity(coords.len());
        for i in 0..coords.len() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push((best + 1) as u16);
        }
        Ok::<Vec<u16>, Error>(preds)
    });
    let mut out = Vec::with_capacity(pixels.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Confusion-matrix evaluation over exactly the pixels of one role.
pub fn evaluate<T: Scalar, N: Network<T> + Sync>(
    model: &N,
    cube: &HyperspectralCube,
    gt: &GroundTruthMap,
    split: &SplitAssignment,
    role: Role,
) -> Result<MetricsReport> {
    if !model.parameters().iter().all(|p| p.all_finite()) {
        return Err(Error::numeric("model parameters are not finite"));
    }
    let pixels = role_pixels(gt, split, role);
    if pixels.is_empty() {
        return Err(Error::data(format!("no pixels with role {role:?} to evaluate")));
    }
    let preds = predict_pixels(model, cube, &pixels)?;
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for (&(_, _, label), &pred) in pixels.iter().zip(&preds) {
        cm.accumulate(label, pred)?;
    }
    cm.report()
}

fn validation_oa<T: Scalar, N: Network<T> + Sync>(
    model: &N,
    cube: &HyperspectralCube,
    pixels: &[(usize, usize, u16)],
) -> Result<f64> {
    let preds = predict_pixels(model, cube, pixels)?;
    let correct = pixels
        .iter()
        .zip(&preds)
        .filter(|(&(_, _, l), &p)| l == p)
        .count();
    Ok(correct as f64 / pixels.len() as f64)
}

/// Trains in place: seeded per-epoch shuffles, mini-batch gradient
/// steps, per-epoch validation OA, and early stopping on patience. The
/// parameters kept are those of the best validation epoch. The returned
/// report includes the test-set metrics of the selected parameters.
pub fn train<T: Scalar, N: Network<T> + Sync>(
    model: &mut N,
    cube: &HyperspectralCube,
    gt: &GroundTruthMap,
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let train_pixels = role_pixels(gt, split, Role::Train);
    let val_pixels = role_pixels(gt, split, Role::Validation);
    if train_pixels.is_empty() {
        return Err(Error::data("split has no training pixels"));
    }
    if val_pixels.is_empty() {
        return Err(Error::data("split has no validation pixels"));
    }

    let mut adam = AdamState::for_params(&model.parameters());
    let mut stats: Vec<EpochStat> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_oa = f64::NEG_INFINITY;
    let mut best_params: Vec<Tensor<T>> = model.parameters().iter().map(|&p| p.clone()).collect();

    let mut order: Vec<usize> = (0..train_pixels.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let mut rng = Pcg32::new(mix(cfg.seed, "epoch-shuffle", &[epoch as u64]), 17);
        rng.shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(model, cube, &train_pixels, batch, cfg, epoch, batch_idx, &mut adam)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged: loss {loss} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        let val_oa = validation_oa(model, cube, &val_pixels)?;
        stats.push(EpochStat {
            loss: mean_loss,
            val_oa,
        });

        if val_oa > best_oa {
            best_oa = val_oa;
            best_epoch = epoch;
            for (keep, p) in best_params.iter_mut().zip(model.parameters()) {
                *keep = p.clone();
            }
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    // Restore the selected epoch's parameters.
    {
        let mut params = model.parameters_mut();
        for (p, keep) in params.iter_mut().zip(&best_params) {
            **p = keep.clone();
        }
    }

    let test_report = if role_pixels(gt, split, Role::Test).is_empty() {
        None
    } else {
        Some(evaluate(model, cube, gt, split, Role::Test)?)
    };

    Ok(TrainReport {
        epochs: stats,
        selected_epoch: best_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        test_report,
    })
}

/// One optimizer step over a batch. Gradients are computed per fixed
/// sample chunk and reduced in chunk order.
#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar, N: Network<T> + Sync>(
    model: &mut N,
    cube: &HyperspectralCube,
    train_pixels: &[(usize, usize, u16)],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch_idx: usize,
    adam: &mut AdamState<T>,
) -> Result<f64> {
    let b = batch.len();
    let chunk_results = parallel::map_chunks(b, GRAD_CHUNK, |_, range| {
        let offset = range.start;
        let coords: Vec<(usize, usize)> = range
            .clone()
            .map(|i| {
                let (r, c, _) = train_pixels[batch[i]];
                (r, c)
            })
            .collect();
        let targets: Vec<usize> = range
            .clone()
            .map(|i| (train_pixels[batch[i]].2 - 1) as usize)
            .collect();
        let input = batch_from_pixels::<T>(cube, &coords, model.window())?;
        let key = DropoutKey {
            sample_offset: offset as u64,
            ..DropoutKey::new(cfg.seed, epoch as u64, batch_idx as u64)
        };
        let (logits, cache) = model.forward_train(&input, key)?;
        let (loss, mut grad_logits) = softmax_cross_entropy(&logits, &targets)?;
        // Rescale from chunk-mean to sample-sum so chunks combine into
        // an exact batch mean regardless of chunk boundaries.
        let m = T::from_f64(coords.len() as f64);
        grad_logits.scale(m);
        let grads = model.backward(&cache, &grad_logits)?;
        Ok::<(f64, usize, Vec<Tensor<T>>), Error>((loss.to_f64() * coords.len() as f64, coords.len(), grads))
    });

    let mut total_loss = 0.0f64;
    let mut total_grads: Option<Vec<Tensor<T>>> = None;
    for result in chunk_results {
        let (loss_sum, _count, grads) = result?;
        total_loss += loss_sum;
        match &mut total_grads {
            None => total_grads = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_scaled(g, T::ONE)?;
                }
            }
        }
    }
    let mut grads = total_grads.ok_or_else(|| Error::data("empty batch"))?;
    let inv_b = T::from_f64(1.0 / b as f64);
    for g in &mut grads {
        g.scale(inv_b);
    }

    match cfg.optimizer {
        OptimizerKind::Adam => adam_step(
            &mut model.parameters_mut(),
            &grads,
            adam,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.epsilon,
        )?,
        OptimizerKind::Sgd => sgd_step(&mut model.parameters_mut(), &grads, cfg.learning_rate)?,
    }
    // Catch divergence at the step boundary: non-finite parameters, or
    // magnitudes so large the next forward is guaranteed to overflow.
    let healthy = model.parameters().iter().all(|p| {
        p.data()
            .iter()
            .all(|v| v.is_finite() && v.abs().to_f64() < 1e12)
    });
    if !healthy {
        return Err(Error::numeric(format!(
            "training diverged: runaway parameters after epoch {epoch}, batch {batch_idx}"
        )));
    }
    Ok(total_loss / b as f64)
}

/// Mean and sample standard deviation (n-1 denominator) of each index
/// over the completed runs.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub runs: usize,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub aa_mean: f64,
    pub aa_std: f64,
    pub kappa_mean: f64,
    pub kappa_std: f64,
    pub per_class_mean: Vec<f64>,
    pub per_class_std: Vec<f64>,
    /// True when only one run contributed; stds are 0 by convention.
    pub single_run: bool,
    pub failures: Vec<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl AggregateReport {
    pub fn from_reports(reports: &[&MetricsReport], failures: Vec<String>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::data("no completed runs to aggregate"));
        }
        let k = reports[0].per_class.len();
        let (oa_mean, oa_std) = mean_std(&reports.iter().map(|r| r.oa).collect::<Vec<_>>());
        let (aa_mean, aa_std) = mean_std(&reports.iter().map(|r| r.aa).collect::<Vec<_>>());
        let (kappa_mean, kappa_std) = mean_std(&reports.iter().map(|r| r.kappa).collect::<Vec<_>>());
        let mut per_class_mean = Vec::with_capacity(k);
        let mut per_class_std = Vec::with_capacity(k);
        for c in 0..k {
            let vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.per_class[c])
                .collect();
            let (m, s) = mean_std(&vals);
            per_class_mean.push(m);
            per_class_std.push(s);
        }
        Ok(AggregateReport {
            runs: reports.len(),
            oa_mean,
            oa_std,
            aa_mean,
            aa_std,
            kappa_mean,
            kappa_std,
            per_class_mean,
            per_class_std,
            single_run: reports.len() == 1,
            failures,
        })
    }

    pub fn to_json(&self) -> String {
        let mut w = Writer::new();
        w.begin_object()
            .key("runs")
            .uint(self.runs as u64)
            .key("single_run")
            .bool(self.single_run)
            .key("oa_mean")
            .float(self.oa_mean)
            .key("oa_std")
            .float(self.oa_std)
            .key("aa_mean")
            .float(self.aa_mean)
            .key("aa_std")
            .float(self.aa_std)
            .key("kappa_mean")
            .float(self.kappa_mean)
            .key("kappa_std")
            .float(self.kappa_std)
            .key("per_class_mean")
            .begin_array();
        for &v in &self.per_class_mean {
            w.float(v);
        }
        w.end_array().key("per_class_std").begin_array();
        for &v in &self.per_class_std {
            w.float(v);
        }
        w.end_array().key("failures").begin_array();
        for f in &self.failures {
            w.str(f);
        }
        w.end_array().end_object();
        w.finish()
    }

    /// Summary in the usual mean +- std layout, percentages with two
    /// decimals.
    pub fn render(&self) -> String {
        format!(
            "runs {}\nOA (%)  {:6.2} \u{00b1} {:.2}\nAA (%)  {:6.2} \u{00b1} {:.2}\nKAPPA   {:6.4} \u{00b1} {:.4}\n",
            self.runs,
            self.oa_mean * 100.0,
            self.oa_std * 100.0,
            self.aa_mean * 100.0,
            self.aa_std * 100.0,
            self.kappa_mean,
            self.kappa_std,
        )
    }
}

/// Runs the full protocol `cfg.repeats` times. Run i draws a fresh
/// stratified split and a fresh model, both seeded `base_seed + i`, so
/// run-to-run spread reflects split resampling as well as
/// reinitialization. Failed runs are recorded and skipped in the
/// aggregate, with a warning.
pub fn run_repeated<T, N, B>(
    build: B,
    cube: &HyperspectralCube,
    gt: &GroundTruthMap,
    train_frac: f64,
    val_frac: f64,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<(AggregateReport, Vec<TrainReport>)>
where
    T: Scalar,
    N: Network<T> + Sync,
    B: Fn(u64) -> Result<N>,
{
    cfg.validate()?;
    let mut reports: Vec<TrainReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for i in 0..cfg.repeats {
        let run_seed = base_seed + i as u64;
        let run = (|| -> Result<TrainReport> {
            let split = stratified_split(gt, train_frac, val_frac, run_seed)?;
            let mut model = build(run_seed)?;
            let mut run_cfg = cfg.clone();
            run_cfg.seed = run_seed;
            train(&mut model, cube, gt, &split, &run_cfg)
        })();
        match run {
            Ok(report) => reports.push(report),
            Err(e) => {
                eprintln!("warning: run {i} (seed {run_seed}) failed: {e}");
                failures.push(format!("run {i} (seed {run_seed}): {e}"));
            }
        }
    }
    let metric_refs: Vec<&MetricsReport> = reports
        .iter()
        .filter_map(|r| r.test_report.as_ref())
        .collect();
    let aggregate = AggregateReport::from_reports(&metric_refs, failures)?;
    Ok((aggregate, reports))
}
