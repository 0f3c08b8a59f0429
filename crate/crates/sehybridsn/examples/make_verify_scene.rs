// Writes a small synthetic scene + manifest for end-to-end CLI checks.
use sehybridsn::data_io::{write_ground_truth, write_raw_cube};
use sehybridsn::synthetic::{generate_scene, SceneSpec};
use std::path::PathBuf;

fn main() -> sehybridsn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).expect("usage: make_verify_scene DIR"));
    std::fs::create_dir_all(&dir)?;
    let (cube, gt) = generate_scene(&SceneSpec {
        height: 30,
        width: 30,
        bands: 18,
        num_classes: 4,
        noise: 0.3,
        unlabeled_frac: 0.15,
        seed: 1234,
    })?;
    write_raw_cube(&cube, &dir.join("scene.bin"), &dir.join("scene.bin.json"))?;
    write_ground_truth(&gt, &dir.join("scene_gt.bin"))?;
    std::fs::write(
        dir.join("manifest.json"),
        r#"{
  "name": "verify_scene",
  "cube": {"format": "raw", "data": "scene.bin"},
  "ground_truth": "scene_gt.bin",
  "lines": 30, "samples": 30, "bands": 18,
  "bands_to_discard": [17],
  "class_names": ["a", "b", "c", "d"],
  "palette": [[0,0,0],[255,0,0],[0,255,0],[0,0,255],[255,255,0]]
}"#,
    )?;
    println!("scene written to {}", dir.display());
    Ok(())
}
