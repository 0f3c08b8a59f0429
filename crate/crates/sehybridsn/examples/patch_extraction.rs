//! Patch extraction: interior patches are literal sub-cubes, border
//! patches are zero-padded, and the center element always equals the
//! cube value at the requested pixel.
//!
//! ```bash
//! cargo run --example patch_extraction
//! ```

use sehybridsn::data_io::HyperspectralCube;
use sehybridsn::preprocess::extract_patch;

fn main() -> sehybridsn::Result<()> {
    let (rows, cols) = (5usize, 5usize);
    let data: Vec<f64> = (0..rows * cols).map(|i| i as f64).collect();
    let cube = HyperspectralCube::new(rows, cols, 1, data)?;

    println!("scene (single band):");
    for r in 0..rows {
        let row: Vec<String> = (0..cols).map(|c| format!("{:4.0}", cube.get(r, c, 0))).collect();
        println!("  {}", row.join(" "));
    }

    let show = |label: &str, row: usize, col: usize, window: usize| {
        let patch = extract_patch(&cube, row, col, window).unwrap();
        println!("\n{label}: window {window} centered at ({row},{col})");
        for pr in 0..window {
            let line: Vec<String> = (0..window)
                .map(|pc| format!("{:4.0}", patch.data[pr * window + pc]))
                .collect();
            println!("  {}", line.join(" "));
        }
        let center = patch.data[(window / 2) * window + window / 2];
        assert_eq!(center, cube.get(row, col, 0));
    };

    show("interior patch", 2, 2, 3);
    show("corner patch with zero padding", 0, 0, 5);
    show("edge patch", 4, 2, 3);

    println!("\nevery center element equals its source pixel");
    Ok(())
}
