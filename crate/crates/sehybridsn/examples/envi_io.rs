//! Reading ENVI cubes: the same logical scene stored as BSQ, BIL and
//! BIP loads to identical (row, col, band) data.
//!
//! ```bash
//! cargo run --example envi_io
//! ```

use sehybridsn::data_io::load_envi_cube;
use std::fs;

fn main() -> sehybridsn::Result<()> {
    let dir = std::env::temp_dir().join("sehybridsn_example_envi");
    fs::create_dir_all(&dir)?;

    // A 2x3 scene with 4 bands; value encodes (row, col, band).
    let logical = |r: usize, c: usize, b: usize| (100 * r + 10 * c + b) as f32;
    let (rows, cols, bands) = (2usize, 3usize, 4usize);

    let mut cubes = Vec::new();
    for interleave in ["bsq", "bil", "bip"] {
        let mut body: Vec<f32> = Vec::new();
        match interleave {
            "bsq" => {
                for b in 0..bands {
                    for r in 0..rows {
                        for c in 0..cols {
                            body.push(logical(r, c, b));
                        }
                    }
                }
            }
            "bil" => {
                for r in 0..rows {
                    for b in 0..bands {
                        for c in 0..cols {
                            body.push(logical(r, c, b));
                        }
                    }
                }
            }
            _ => {
                for r in 0..rows {
                    for c in 0..cols {
                        for b in 0..bands {
                            body.push(logical(r, c, b));
                        }
                    }
                }
            }
        }
        let header = format!(
            "ENVI\nsamples = {cols}\nlines = {rows}\nbands = {bands}\n\
             interleave = {interleave}\ndata type = 4\nbyte order = 0\n"
        );
        let hdr = dir.join(format!("scene_{interleave}.hdr"));
        let raw = dir.join(format!("scene_{interleave}.raw"));
        fs::write(&hdr, header)?;
        let bytes: Vec<u8> = body.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw, bytes)?;

        let cube = load_envi_cube(&hdr, &raw)?;
        println!(
            "{interleave}: loaded {}x{}x{}, spectrum at (1,2) = {:?}",
            cube.height,
            cube.width,
            cube.bands,
            cube.spectrum(1, 2)
        );
        cubes.push(cube);
    }

    assert_eq!(cubes[0], cubes[1]);
    assert_eq!(cubes[0], cubes[2]);
    println!("all three interleaves decode to the same cube");
    Ok(())
}
