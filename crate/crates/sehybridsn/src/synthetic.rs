//! Synthetic hyperspectral scenes for tests, examples and self-checks.
//!
//! Each class gets a smooth random spectral signature; pixels take the
//! signature of their class (assigned by nearest seed point, which gives
//! blob-like regions) plus Gaussian noise. The scenes are learnable but
//! not trivially separable at the default noise level.

use crate::data_io::{GroundTruthMap, HyperspectralCube};
use crate::error::Result;
use crate::rng::{mix, Pcg32};

pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: usize,
    /// Standard deviation of the per-sample Gaussian noise.
    pub noise: f64,
    /// Fraction of pixels left unlabeled (label 0).
    pub unlabeled_frac: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn small(seed: u64) -> Self {
        SceneSpec {
            height: 24,
            width: 24,
            bands: 16,
            num_classes: 4,
            noise: 0.35,
            unlabeled_frac: 0.2,
            seed,
        }
    }

    /// A scene with the extents of the Indian Pines campaign (145x145,
    /// 224 raw bands, 16 classes).
    pub fn indian_pines_like(seed: u64) -> Self {
        SceneSpec {
            height: 145,
            width: 145,
            bands: 224,
            num_classes: 16,
            noise: 0.4,
            unlabeled_frac: 0.48,
            seed,
        }
    }
}

/// Generates a (cube, ground truth) pair from the scene parameters,
/// deterministic in the seed.
pub fn generate_scene(spec: &SceneSpec) -> Result<(HyperspectralCube, GroundTruthMap)> {
    let SceneSpec {
        height,
        width,
        bands,
        num_classes,
        noise,
        unlabeled_frac,
        seed,
    } = *spec;
    let mut rng = Pcg32::new(mix(seed, "synthetic-scene", &[]), 1);

    // Smooth signatures: sums of a few random sinusoids over the band axis.
    let mut signatures = vec![vec![0.0f64; bands]; num_classes];
    for sig in signatures.iter_mut() {
        let terms: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.uniform(0.4, 1.4),
                    rng.uniform(0.5, 4.0),
                    rng.uniform(0.0, std::f64::consts::TAU),
                )
            })
            .collect();
        for (b, v) in sig.iter_mut().enumerate() {
            let t = b as f64 / bands as f64;
            *v = terms
                .iter()
                .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
        }
    }

    // Blob-shaped class regions: nearest seed point wins.
    let seeds_per_class = 3usize;
    let mut sites = Vec::new();
    for class in 0..num_classes {
        for _ in 0..seeds_per_class {
            sites.push((
                rng.gen_range(height as u32) as isize,
                rng.gen_range(width as u32) as isize,
                class,
            ));
        }
    }

    let mut data = Vec::with_capacity(height * width * bands);
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let mut best = usize::MAX;
            let mut best_d = isize::MAX;
            for &(sr, sc, class) in &sites {
                let d = (sr - r as isize).pow(2) + (sc - c as isize).pow(2);
                if d < best_d {
                    best_d = d;
                    best = class;
                }
            }
            let sig = &signatures[best];
            for &s in sig.iter() {
                data.push(s + noise * rng.normal());
            }
            let unlabeled = rng.next_f64() < unlabeled_frac;
            labels.push(if unlabeled { 0 } else { (best + 1) as u16 });
        }
    }

    // Guarantee every class keeps at least a few labeled pixels.
    let mut counts = vec![0usize; num_classes + 1];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    for class in 1..=num_classes {
        if counts[class] < 4 {
            let mut fixed = 0;
            for (i, l) in labels.iter_mut().enumerate() {
                let site_class = {
                    let (r, c) = (i / width, i % width);
                    let mut best = usize::MAX;
                    let mut best_d = isize::MAX;
                    for &(sr, sc, cl) in &sites {
                        let d = (sr - r as isize).pow(2) + (sc - c as isize).pow(2);
                        if d < best_d {
                            best_d = d;
                            best = cl;
                        }
                    }
                    best + 1
                };
                if site_class == class && *l == 0 {
                    *l = class as u16;
                    fixed += 1;
                    if counts[class] + fixed >= 4 {
                        break;
                    }
                }
            }
        }
    }

    let cube = HyperspectralCube::new(height, width, bands, data)?;
    let gt = GroundTruthMap::new(height, width, labels)?;
    Ok((cube, gt))
}
