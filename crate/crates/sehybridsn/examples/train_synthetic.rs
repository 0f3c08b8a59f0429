//! The whole pipeline in miniature, on a generated scene: standardize,
//! PCA, stratified split, train a small SE-HybridSN, score the test
//! split and write the classification map.
//!
//! ```bash
//! cargo run --release --example train_synthetic
//! ```

use sehybridsn::data_io::render_class_map;
use sehybridsn::model::{predict_scene, Conv3dSpec, SeHybridSnConfig, SeHybridSnModel};
use sehybridsn::preprocess::{apply_pca, fit_pca, standardize_bands, stratified_split};
use sehybridsn::synthetic::{generate_scene, SceneSpec};
use sehybridsn::train::{train, TrainConfig};

fn main() -> sehybridsn::Result<()> {
    let (cube, gt) = generate_scene(&SceneSpec {
        height: 30,
        width: 30,
        bands: 20,
        num_classes: 4,
        noise: 0.35,
        unlabeled_frac: 0.15,
        seed: 5,
    })?;
    println!(
        "scene: {}x{}x{} with {} labeled pixels",
        cube.height,
        cube.width,
        cube.bands,
        gt.labeled_count()
    );

    let cube = standardize_bands(&cube);
    let pca = fit_pca(&cube, 10)?;
    let cube = apply_pca(&cube, &pca)?;
    let split = stratified_split(&gt, 0.2, 0.1, 9)?;
    let (t, v, e) = split.counts();
    println!("split: {t} train / {v} validation / {e} test");

    let config = SeHybridSnConfig {
        window: 9,
        pca_k: 10,
        num_classes: 4,
        conv3d_specs: vec![
            Conv3dSpec::new(4, 3, 3, 3),
            Conv3dSpec::new(6, 3, 1, 1),
            Conv3dSpec::new(6, 3, 1, 1),
            Conv3dSpec::new(6, 1, 3, 3),
        ],
        conv2d_spec: (8, 3),
        sep_conv_spec: (12, 3),
        se_reduction: 2,
        fc_dims: vec![32, 16, 4],
        dropout_rate: 0.3,
        seed: 9,
        se_enabled: true,
    };
    let mut model = SeHybridSnModel::<f32>::build(config)?;

    let train_cfg = TrainConfig {
        max_epochs: 20,
        patience: 20,
        batch_size: 32,
        seed: 9,
        ..Default::default()
    };
    let report = train(&mut model, &cube, &gt, &split, &train_cfg)?;
    println!(
        "trained {} epochs, selected epoch {} (validation OA {:.1}%)",
        report.epochs.len(),
        report.selected_epoch,
        report.best_val_oa() * 100.0
    );

    let test = report.test_report.as_ref().expect("test metrics");
    println!(
        "test: OA {:.2}%  AA {:.2}%  kappa {:.4}",
        test.oa * 100.0,
        test.aa * 100.0,
        test.kappa
    );

    let prediction = predict_scene(&model, &cube, &gt, true)?;
    let palette = [
        [0u8, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
    ];
    let out = std::env::temp_dir().join("sehybridsn_synthetic_map.ppm");
    render_class_map(&prediction, &palette, &out)?;
    println!("classification map written to {}", out.display());
    Ok(())
}
