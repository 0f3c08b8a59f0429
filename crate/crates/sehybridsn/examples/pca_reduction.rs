//! Spectral PCA on a synthetic scene: band standardization, the
//! variance captured per component, and the exactness of a full-rank
//! round trip.
//!
//! ```bash
//! cargo run --example pca_reduction
//! ```

#![allow(clippy::needless_range_loop)]

use sehybridsn::preprocess::{apply_pca, fit_pca, standardize_bands};
use sehybridsn::synthetic::{generate_scene, SceneSpec};

fn main() -> sehybridsn::Result<()> {
    let (cube, _) = generate_scene(&SceneSpec::small(7))?;
    println!("scene: {}x{} pixels, {} bands", cube.height, cube.width, cube.bands);

    let cube = standardize_bands(&cube);
    let model = fit_pca(&cube, cube.bands)?;

    let total: f64 = model.eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    println!("\ncomponent  eigenvalue   cumulative variance");
    for (i, &l) in model.eigenvalues.iter().take(8).enumerate() {
        cumulative += l;
        println!("{:9}  {:10.4}   {:6.2}%", i, l, 100.0 * cumulative / total);
    }

    // Project to 4 components and measure what a truncated
    // reconstruction loses.
    let k = 4;
    let reduced_model = fit_pca(&cube, k)?;
    let projected = apply_pca(&cube, &reduced_model)?;
    println!("\nreduced cube: {} bands -> {} components", cube.bands, projected.bands);

    let mut err = 0.0f64;
    let mut norm = 0.0f64;
    for px in 0..cube.pixels() {
        let y = &projected.data()[px * k..(px + 1) * k];
        for b in 0..cube.bands {
            let mut x = reduced_model.mean[b];
            for c in 0..k {
                x += reduced_model.component(c)[b] * y[c];
            }
            let orig = cube.data()[px * cube.bands + b];
            err += (x - orig) * (x - orig);
            norm += orig * orig;
        }
    }
    println!(
        "truncated reconstruction keeps {:.2}% of the signal energy",
        100.0 * (1.0 - err / norm)
    );

    // Full-rank PCA is an orthogonal change of basis: exact round trip.
    let full = fit_pca(&cube, cube.bands)?;
    let projected = apply_pca(&cube, &full)?;
    let mut worst = 0.0f64;
    for px in 0..cube.pixels().min(50) {
        let y = &projected.data()[px * cube.bands..(px + 1) * cube.bands];
        for b in 0..cube.bands {
            let mut x = full.mean[b];
            for c in 0..cube.bands {
                x += full.component(c)[b] * y[c];
            }
            worst = worst.max((x - cube.data()[px * cube.bands + b]).abs());
        }
    }
    println!("full-rank round-trip worst error: {worst:.2e}");
    Ok(())
}
