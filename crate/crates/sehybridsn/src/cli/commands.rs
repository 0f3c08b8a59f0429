//! The five pipeline commands: prepare, train, eval, map, selfcheck.

use super::config::{Precision, RunConfig};
use crate::data_io::{
    self, load_ground_truth, load_raw_cube_at, render_class_map, write_raw_cube, DatasetManifest,
    GroundTruthMap, HyperspectralCube,
};
use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, predict_scene, save_checkpoint, AnyModel, HybridSnBaseline, HybridSnConfig,
    ModelVariant, Network, SeHybridSnConfig, SeHybridSnModel,
};
use crate::data_io::discard_bands;
use crate::preprocess::{
    apply_pca, fit_pca, standardize_bands, stratified_split, Role, SplitAssignment,
};
use crate::selfcheck;
use crate::tensor::Scalar;
use crate::train::{evaluate, train, AggregateReport, TrainReport};
use std::fs;
use std::path::{Path, PathBuf};

fn cube_path(out_dir: &Path) -> PathBuf {
    out_dir.join("pca_cube.bin")
}
fn sidecar_path(out_dir: &Path) -> PathBuf {
    out_dir.join("pca_cube.bin.json")
}
fn split_path(out_dir: &Path) -> PathBuf {
    out_dir.join("split.json")
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    DatasetManifest::load(&cfg.manifest_path)
}

fn load_gt(manifest: &DatasetManifest) -> Result<GroundTruthMap> {
    load_ground_truth(
        &manifest.ground_truth,
        manifest.lines,
        manifest.samples,
        manifest.num_classes() as u16,
    )
}

/// Per-class split table in the usual report layout.
pub fn split_summary(
    gt: &GroundTruthMap,
    split: &SplitAssignment,
    class_names: &[String],
) -> String {
    let counts = split.per_class_counts(gt);
    let mut s = String::new();
    s.push_str("Number  Class                          Training  Validation  Testing    Total\n");
    let (mut tt, mut tv, mut te) = (0usize, 0usize, 0usize);
    for (i, &(t, v, e)) in counts.iter().enumerate() {
        let name = class_names.get(i).map(|n| n.as_str()).unwrap_or("(unnamed)");
        s.push_str(&format!(
            "{:6}  {:28} {:9} {:11} {:8} {:8}\n",
            i + 1,
            name,
            t,
            v,
            e,
            t + v + e
        ));
        tt += t;
        tv += v;
        te += e;
    }
    s.push_str(&format!(
        "{:6}  {:28} {:9} {:11} {:8} {:8}\n",
        "",
        "Total",
        tt,
        tv,
        te,
        tt + tv + te
    ));
    s
}

/// Loads the manifest's cube, discards water-absorption bands,
/// standardizes, and reduces with PCA.
fn preprocess_cube(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<HyperspectralCube> {
    let cube = data_io::load_cube(manifest)?;
    if cube.height != manifest.lines || cube.width != manifest.samples || cube.bands != manifest.bands
    {
        return Err(Error::data(format!(
            "cube is {}x{}x{} but manifest declares {}x{}x{}",
            cube.height, cube.width, cube.bands, manifest.lines, manifest.samples, manifest.bands
        )));
    }
    let cube = discard_bands(&cube, &manifest.bands_to_discard)?;
    let cube = standardize_bands(&cube);
    let pca = fit_pca(&cube, cfg.pca_k)?;
    apply_pca(&cube, &pca)
}

/// `prepare`: standardized + PCA cube, pinned split, per-class summary.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let gt = load_gt(&manifest)?;
    let cube = preprocess_cube(cfg, &manifest)?;

    fs::create_dir_all(&cfg.out_dir)?;
    write_raw_cube(&cube, &cube_path(&cfg.out_dir), &sidecar_path(&cfg.out_dir))?;

    let split = stratified_split(&gt, cfg.train_frac, cfg.val_frac, cfg.train.seed)?;
    split.save(&split_path(&cfg.out_dir))?;

    let summary = split_summary(&gt, &split, &manifest.class_names);
    fs::write(cfg.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    let (t, v, e) = split.counts();
    println!("prepared '{}': cube {}x{}x{}, split ({t}, {v}, {e})", manifest.name, cube.height, cube.width, cube.bands);
    Ok(())
}

/// Builds a fresh model of the configured variant.
pub fn build_model<T: Scalar>(cfg: &RunConfig, num_classes: usize, seed: u64) -> Result<AnyModel<T>> {
    let mut fc_dims = cfg.fc_hidden.clone();
    fc_dims.push(num_classes);
    match cfg.variant {
        ModelVariant::SeHybridSn => {
            let mut c = SeHybridSnConfig::default_for(num_classes, cfg.window, cfg.pca_k, seed);
            if let Some(specs) = &cfg.conv3d_specs {
                c.conv3d_specs = specs.clone();
            }
            if let Some(p) = cfg.conv2d_spec {
                c.conv2d_spec = p;
            }
            if let Some(p) = cfg.sep_conv_spec {
                c.sep_conv_spec = p;
            }
            c.se_reduction = cfg.se_reduction;
            c.dropout_rate = cfg.dropout_rate;
            c.fc_dims = fc_dims;
            Ok(AnyModel::Se(SeHybridSnModel::build(c)?))
        }
        ModelVariant::HybridSn => {
            let mut c = HybridSnConfig::default_for(num_classes, cfg.window, cfg.pca_k, seed);
            if let Some(specs) = &cfg.conv3d_specs {
                c.conv3d_specs = specs.clone();
            }
            if let Some(p) = cfg.conv2d_spec {
                c.conv2d_spec = p;
            }
            c.dropout_rate = cfg.dropout_rate;
            c.fc_dims = fc_dims;
            Ok(AnyModel::Baseline(HybridSnBaseline::build(c)?))
        }
    }
}

fn require_prepared(cfg: &RunConfig) -> Result<(DatasetManifest, GroundTruthMap, HyperspectralCube)> {
    let manifest = load_manifest(cfg)?;
    let gt = load_gt(&manifest)?;
    let cube_file = cube_path(&cfg.out_dir);
    if !cube_file.exists() {
        return Err(Error::data(format!(
            "{} not found; run `prepare` first",
            cube_file.display()
        )));
    }
    let cube = load_raw_cube_at(&cube_file, &sidecar_path(&cfg.out_dir))?;
    if cube.bands != cfg.pca_k {
        return Err(Error::data(format!(
            "prepared cube has {} components but the config asks for {}; re-run `prepare`",
            cube.bands, cfg.pca_k
        )));
    }
    Ok((manifest, gt, cube))
}

fn run_train<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let (manifest, gt, cube) = require_prepared(cfg)?;
    let k = manifest.num_classes();
    let repeats = cfg.train.repeats;
    let mut reports: Vec<TrainReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    for i in 0..repeats {
        let run_seed = cfg.train.seed + i as u64;
        let outcome = (|| -> Result<TrainReport> {
            // A single run honors the pinned split from `prepare`;
            // repeated runs resample the split with the run seed.
            let split = if repeats == 1 {
                SplitAssignment::load(&split_path(&cfg.out_dir))?
            } else {
                stratified_split(&gt, cfg.train_frac, cfg.val_frac, run_seed)?
            };
            let mut model = build_model::<T>(cfg, k, run_seed)?;
            let mut run_cfg = cfg.train.clone();
            run_cfg.seed = run_seed;
            let report = train(&mut model, &cube, &gt, &split, &run_cfg)?;
            let suffix = if repeats == 1 {
                String::new()
            } else {
                format!("_{i}")
            };
            save_checkpoint(&model, &cfg.out_dir.join(format!("checkpoint{suffix}.ckpt")))?;
            fs::write(
                cfg.out_dir.join(format!("report{suffix}.json")),
                report.to_json(),
            )?;
            fs::write(
                cfg.out_dir.join(format!("curves{suffix}.csv")),
                report.curves_csv(),
            )?;
            Ok(report)
        })();
        match outcome {
            Ok(report) => {
                if let Some(test) = &report.test_report {
                    println!(
                        "run {i} (seed {run_seed}): {} epochs, selected {}, test OA {:.2}%",
                        report.epochs.len(),
                        report.selected_epoch,
                        test.oa * 100.0
                    );
                }
                reports.push(report);
            }
            Err(e) => {
                eprintln!("warning: run {i} (seed {run_seed}) failed: {e}");
                failures.push(format!("run {i} (seed {run_seed}): {e}"));
            }
        }
    }

    let metric_refs: Vec<_> = reports.iter().filter_map(|r| r.test_report.as_ref()).collect();
    let aggregate = AggregateReport::from_reports(&metric_refs, failures)?;
    fs::write(cfg.out_dir.join("aggregate.json"), aggregate.to_json())?;
    print!("{}", aggregate.render());
    Ok(())
}

/// `train`: one or more seeded runs, each leaving a checkpoint and
/// JSON/CSV reports; aggregate statistics over all of them.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_train::<f32>(cfg),
        Precision::F64 => run_train::<f64>(cfg),
    }
}

fn checkpoint_arg(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.checkpoint
        .clone()
        .or_else(|| {
            let default = cfg.out_dir.join("checkpoint.ckpt");
            default.exists().then_some(default)
        })
        .ok_or_else(|| Error::usage("no checkpoint: pass --checkpoint or train first"))
}

fn run_eval<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let (manifest, gt, cube) = require_prepared(cfg)?;
    let model: AnyModel<T> = load_checkpoint(&checkpoint_arg(cfg)?)?;
    if model.num_classes() != manifest.num_classes() {
        return Err(Error::data(format!(
            "checkpoint has {} classes but manifest '{}' declares {}",
            model.num_classes(),
            manifest.name,
            manifest.num_classes()
        )));
    }
    if model.input_bands() != cube.bands || model.window() != cfg.window {
        return Err(Error::data(format!(
            "checkpoint expects {} bands / window {}, prepared data has {} / {}",
            model.input_bands(),
            model.window(),
            cube.bands,
            cfg.window
        )));
    }
    let split = SplitAssignment::load(&split_path(&cfg.out_dir))?;
    let report = evaluate(&model, &cube, &gt, &split, Role::Test)?;
    fs::write(cfg.out_dir.join("metrics.json"), report.to_json())?;
    print!("{}", report.render_table(&manifest.class_names));
    Ok(())
}

/// `eval`: test-set metrics of a checkpoint, printed per class.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_eval::<f32>(cfg),
        Precision::F64 => run_eval::<f64>(cfg),
    }
}

fn run_map<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let (manifest, gt, cube) = require_prepared(cfg)?;
    let model: AnyModel<T> = load_checkpoint(&checkpoint_arg(cfg)?)?;
    if model.input_bands() != cube.bands {
        return Err(Error::data(format!(
            "checkpoint expects {} bands, prepared cube has {}",
            model.input_bands(),
            cube.bands
        )));
    }
    let prediction = predict_scene(&model, &cube, &gt, cfg.classify_all)?;
    let out = cfg.out_dir.join("map.ppm");
    render_class_map(&prediction, &manifest.palette, &out)?;
    println!(
        "wrote {} ({}x{} pixels, {})",
        out.display(),
        prediction.width,
        prediction.height,
        if cfg.classify_all {
            "all pixels"
        } else {
            "labeled pixels"
        }
    );
    Ok(())
}

/// `map`: full-scene classification map as a binary PPM.
pub fn cmd_map(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_map::<f32>(cfg),
        Precision::F64 => run_map::<f64>(cfg),
    }
}

/// `selfcheck`: gradient, oracle and round-trip verification.
pub fn cmd_selfcheck() -> Result<()> {
    let results = selfcheck::run(None);
    for r in &results {
        println!(
            "check {:28} {}  ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    if selfcheck::all_passed(&results) {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(Error::numeric("selfcheck failed"))
    }
}
