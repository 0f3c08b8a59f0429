//! Checkpoint round trip: parameters come back bit-identical, forwards
//! match exactly, and corruption is caught by the content digest.
//!
//! ```bash
//! cargo run --example checkpoint_roundtrip
//! ```

use sehybridsn::model::{load_checkpoint, save_checkpoint, Network, SeHybridSnConfig, SeHybridSnModel};
use sehybridsn::rng::Pcg32;
use sehybridsn::tensor::Tensor;
use std::fs;

fn main() -> sehybridsn::Result<()> {
    let cfg = SeHybridSnConfig::tiny(21);
    let model = SeHybridSnModel::<f64>::build(cfg.clone())?;
    println!(
        "built a {}-parameter network ({} tensors)",
        model.parameter_count(),
        model.parameters().len()
    );

    let dir = std::env::temp_dir().join("sehybridsn_example_ckpt");
    fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    println!("checkpoint: {} bytes", fs::metadata(&path)?.len());

    let loaded = load_checkpoint::<f64>(&path)?;
    let mut rng = Pcg32::new(4, 4);
    let shape = [2usize, 1, cfg.pca_k, cfg.window, cfg.window];
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let a = model.forward(&x)?;
    let b = loaded.forward(&x)?;
    assert_eq!(a.data(), b.data());
    println!("forward passes agree bit for bit after the round trip");

    // Flip one payload byte: the digest rejects the file.
    let mut bytes = fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    let bad = dir.join("corrupted.ckpt");
    fs::write(&bad, &bytes)?;
    match load_checkpoint::<f64>(&bad) {
        Err(e) => println!("corrupted file rejected: {e}"),
        Ok(_) => panic!("corruption must not load"),
    }
    Ok(())
}
