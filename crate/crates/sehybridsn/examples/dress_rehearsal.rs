// Full-scale rehearsal on the synthetic Indian-Pines-shaped scene:
// default SE-HybridSN vs the HybridSN baseline, one seeded run each.
use sehybridsn::model::{HybridSnBaseline, HybridSnConfig, SeHybridSnConfig, SeHybridSnModel};
use sehybridsn::preprocess::{apply_pca, fit_pca, standardize_bands, stratified_split};
use sehybridsn::synthetic::{generate_scene, SceneSpec};
use sehybridsn::train::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let (cube, gt) = generate_scene(&SceneSpec::indian_pines_like(31)).unwrap();
    println!("labeled pixels: {}", gt.labeled_count());
    let cube = standardize_bands(&cube);
    let pca = fit_pca(&cube, 30).unwrap();
    let cube = apply_pca(&cube, &pca).unwrap();
    println!("preprocess: {:.1}s", t0.elapsed().as_secs_f64());

    let split = stratified_split(&gt, 0.05, 0.05, 5).unwrap();
    let (t, v, e) = split.counts();
    println!("split: {t}/{v}/{e}");

    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 12,
        ..Default::default()
    };

    let t1 = Instant::now();
    let mut se = SeHybridSnModel::<f32>::build(SeHybridSnConfig::default_for(16, 15, 30, 5)).unwrap();
    let se_report = train(&mut se, &cube, &gt, &split, &cfg).unwrap();
    let se_test = se_report.test_report.clone().unwrap();
    println!(
        "SE-HybridSN: {} epochs ({:.1}s), best val OA {:.2}%, test OA {:.2}% AA {:.2}% kappa {:.4}",
        se_report.epochs.len(),
        t1.elapsed().as_secs_f64(),
        se_report.best_val_oa() * 100.0,
        se_test.oa * 100.0,
        se_test.aa * 100.0,
        se_test.kappa
    );

    let t2 = Instant::now();
    let mut base = HybridSnBaseline::<f32>::build(HybridSnConfig::default_for(16, 15, 30, 5)).unwrap();
    let base_report = train(&mut base, &cube, &gt, &split, &cfg).unwrap();
    let base_test = base_report.test_report.clone().unwrap();
    println!(
        "HybridSN baseline: {} epochs ({:.1}s), best val OA {:.2}%, test OA {:.2}% AA {:.2}% kappa {:.4}",
        base_report.epochs.len(),
        t2.elapsed().as_secs_f64(),
        base_report.best_val_oa() * 100.0,
        base_test.oa * 100.0,
        base_test.aa * 100.0,
        base_test.kappa
    );
    println!("total: {:.1} min", t0.elapsed().as_secs_f64() / 60.0);
}
