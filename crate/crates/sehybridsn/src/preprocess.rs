//! Scene preprocessing: band standardization, PCA along the spectral
//! axis, padded patch extraction, and stratified train/validation/test
//! splits.
//!
//! Standardization and PCA are fit on the whole scene (labeled and
//! unlabeled pixels alike). Test pixels' *features* are part of the same
//! image, which is the usual transductive setup for scene-wise
//! hyperspectral classification; labels never leak.

use crate::data_io::{GroundTruthMap, HyperspectralCube};
use crate::error::{Error, Result};
use crate::json::{self, Writer};
use crate::parallel;
use crate::rng::{mix, Pcg32};
use std::path::Path;

/// Principal-component model fit along the spectral axis.
///
/// `components` rows are the principal axes (unit norm, orthonormal);
/// `eigenvalues` are the matching covariance eigenvalues, descending.
#[derive(Clone, Debug)]
pub struct PcaModel {
    pub input_dim: usize,
    pub k: usize,
    pub mean: Vec<f64>,
    pub components: Vec<f64>, // k x input_dim, row-major
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    #[inline]
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Standardizes every band to mean 0 and population std 1 over all
/// pixels. Zero-variance bands pass through mean-centered.
pub fn standardize_bands(cube: &HyperspectralCube) -> HyperspectralCube {
    let n = cube.pixels() as f64;
    let bands = cube.bands;
    let mut mean = vec![0.0f64; bands];
    for px in 0..cube.pixels() {
        let spec = &cube.data()[px * bands..(px + 1) * bands];
        for (m, &v) in mean.iter_mut().zip(spec) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0f64; bands];
    for px in 0..cube.pixels() {
        let spec = &cube.data()[px * bands..(px + 1) * bands];
        for (v, (&x, &m)) in var.iter_mut().zip(spec.iter().zip(mean.iter())) {
            let d = x - m;
            *v += d * d;
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();

    let mut out = cube.clone();
    let data = out.data_mut();
    for px in 0..cube.pixels() {
        let spec = &mut data[px * bands..(px + 1) * bands];
        for b in 0..bands {
            spec[b] = (spec[b] - mean[b]) * inv_std[b];
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), sorted descending.
/// Converges when every off-diagonal entry is below
/// `1e-12 * max diagonal`.
pub fn jacobi_eigen_sym(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n {
        return Err(Error::shape(format!(
            "jacobi: matrix length {} is not {n}x{n}",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    // v holds eigenvectors as columns during the iteration.
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let max_sweeps = 100;

    for _sweep in 0..max_sweeps {
        let mut off_max = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off_max = off_max.max(a[p * n + q].abs());
            }
        }
        if off_max <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e12 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of A.
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                // Accumulate the rotation into the eigenvector columns.
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = vec![0.0f64; n * n];
    for (row, &col) in order.iter().enumerate() {
        eigenvalues.push(a[col * n + col]);
        // Column `col` of v becomes row `row` of the output, sign-fixed
        // so the largest-magnitude entry is positive.
        let mut max_abs = 0.0f64;
        let mut sign = 1.0f64;
        for i in 0..n {
            let x = v[i * n + col];
            if x.abs() > max_abs {
                max_abs = x.abs();
                sign = if x >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for i in 0..n {
            eigenvectors[row * n + i] = sign * v[i * n + col];
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// Fits PCA on the band covariance of every pixel in the scene.
pub fn fit_pca(cube: &HyperspectralCube, k: usize) -> Result<PcaModel> {
    let d = cube.bands;
    if k == 0 || k > d {
        return Err(Error::usage(format!(
            "pca k must be in 1..={d}, got {k}"
        )));
    }
    let n_px = cube.pixels();
    if n_px < d {
        eprintln!(
            "warning: fitting PCA with {n_px} pixels over {d} bands; covariance will be rank-deficient"
        );
    }
    let n = n_px as f64;
    let mut mean = vec![0.0f64; d];
    for px in 0..n_px {
        let spec = &cube.data()[px * d..(px + 1) * d];
        for (m, &x) in mean.iter_mut().zip(spec) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    // Population covariance, accumulated in deterministic fixed-size
    // pixel chunks so the result is independent of thread count.
    let chunk = 4096;
    let partials = parallel::map_chunks(n_px, chunk, |_, range| {
        let mut c = vec![0.0f64; d * d];
        let mut centered = vec![0.0f64; d];
        for px in range {
            let spec = &cube.data()[px * d..(px + 1) * d];
            for b in 0..d {
                centered[b] = spec[b] - mean[b];
            }
            for i in 0..d {
                let ci = centered[i];
                let row = &mut c[i * d..(i + 1) * d];
                for (j, r) in row.iter_mut().enumerate() {
                    *r += ci * centered[j];
                }
            }
        }
        c
    });
    let mut cov = vec![0.0f64; d * d];
    for part in partials {
        for (a, b) in cov.iter_mut().zip(part) {
            *a += b;
        }
    }
    for c in &mut cov {
        *c /= n;
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen_sym(&cov, d)?;
    let components = eigenvectors[..k * d].to_vec();
    let eigenvalues: Vec<f64> = eigenvalues[..k].iter().map(|&l| l.max(0.0)).collect();
    Ok(PcaModel {
        input_dim: d,
        k,
        mean,
        components,
        eigenvalues,
    })
}

/// Projects every pixel's spectrum: y = components (x - mean).
pub fn apply_pca(cube: &HyperspectralCube, model: &PcaModel) -> Result<HyperspectralCube> {
    if cube.bands != model.input_dim {
        return Err(Error::shape(format!(
            "apply_pca: cube has {} bands but model expects {}",
            cube.bands, model.input_dim
        )));
    }
    let d = model.input_dim;
    let k = model.k;
    let n_px = cube.pixels();
    let chunks = parallel::map_chunks(n_px, 4096, |_, range| {
        let mut out = Vec::with_capacity(range.len() * k);
        let mut centered = vec![0.0f64; d];
        for px in range {
            let spec = &cube.data()[px * d..(px + 1) * d];
            for b in 0..d {
                centered[b] = spec[b] - model.mean[b];
            }
            for c in 0..k {
                let axis = model.component(c);
                let mut acc = 0.0;
                for b in 0..d {
                    acc += axis[b] * centered[b];
                }
                out.push(acc);
            }
        }
        out
    });
    let mut data = Vec::with_capacity(n_px * k);
    for chunk in chunks {
        data.extend_from_slice(&chunk);
    }
    HyperspectralCube::new(cube.height, cube.width, k, data)
}

/// A window x window x channels neighborhood centered on a pixel.
/// Out-of-image positions are zero-filled. The label is set by the
/// caller from the paired ground truth.
#[derive(Clone, Debug)]
pub struct Patch {
    pub window: usize,
    pub channels: usize,
    /// (row, col, channel) order, matching the cube layout.
    pub data: Vec<f64>,
    pub label: u16,
}

/// Extracts the window x window patch centered at (row, col).
pub fn extract_patch(
    cube: &HyperspectralCube,
    row: usize,
    col: usize,
    window: usize,
) -> Result<Patch> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(Error::usage(format!("patch window must be odd, got {window}")));
    }
    if row >= cube.height || col >= cube.width {
        return Err(Error::usage(format!(
            "patch center ({row},{col}) outside {}x{} scene",
            cube.height, cube.width
        )));
    }
    let half = (window / 2) as isize;
    let bands = cube.bands;
    let mut data = vec![0.0f64; window * window * bands];
    for pr in 0..window {
        let sr = row as isize + pr as isize - half;
        if sr < 0 || sr >= cube.height as isize {
            continue;
        }
        for pc in 0..window {
            let sc = col as isize + pc as isize - half;
            if sc < 0 || sc >= cube.width as isize {
                continue;
            }
            let dst = (pr * window + pc) * bands;
            data[dst..dst + bands].copy_from_slice(cube.spectrum(sr as usize, sc as usize));
        }
    }
    Ok(Patch {
        window,
        channels: bands,
        data,
        label: 0,
    })
}

/// Copies a patch into a model input buffer laid out (channel, row, col).
pub fn patch_into_chw(patch: &Patch, out: &mut [f64]) {
    let w = patch.window;
    let c = patch.channels;
    debug_assert_eq!(out.len(), w * w * c);
    for r in 0..w {
        for col in 0..w {
            let src = (r * w + col) * c;
            for ch in 0..c {
                out[(ch * w + r) * w + col] = patch.data[src + ch];
            }
        }
    }
}

/// Role of a labeled pixel in the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    fn code(self) -> char {
        match self {
            Role::Train => 'T',
            Role::Validation => 'V',
            Role::Test => 'E',
        }
    }
    fn from_code(c: char) -> Result<Self> {
        match c {
            'T' => Ok(Role::Train),
            'V' => Ok(Role::Validation),
            'E' => Ok(Role::Test),
            other => Err(Error::data(format!("unknown role code '{other}'"))),
        }
    }
}

/// Per-pixel train/validation/test designation over the labeled pixels
/// of a scene, in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    /// One role per labeled pixel, row-major over the ground truth.
    pub roles: Vec<Role>,
    /// Classes with fewer than 3 samples, which received train=1, val=0.
    pub flagged_classes: Vec<u16>,
}

impl SplitAssignment {
    /// Pixel coordinates and labels for one role, in row-major order.
    pub fn pixels_with_role(&self, gt: &GroundTruthMap, role: Role) -> Vec<(usize, usize, u16)> {
        let mut out = Vec::new();
        let mut li = 0usize;
        for r in 0..gt.height {
            for c in 0..gt.width {
                let l = gt.label(r, c);
                if l != 0 {
                    if self.roles[li] == role {
                        out.push((r, c, l));
                    }
                    li += 1;
                }
            }
        }
        out
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut t = 0;
        let mut v = 0;
        let mut e = 0;
        for role in &self.roles {
            match role {
                Role::Train => t += 1,
                Role::Validation => v += 1,
                Role::Test => e += 1,
            }
        }
        (t, v, e)
    }

    /// Per-class (train, val, test) counts given the paired ground truth.
    pub fn per_class_counts(&self, gt: &GroundTruthMap) -> Vec<(usize, usize, usize)> {
        let k = gt.max_label() as usize;
        let mut counts = vec![(0usize, 0usize, 0usize); k];
        let mut li = 0usize;
        for &l in &gt.labels {
            if l != 0 {
                let slot = &mut counts[l as usize - 1];
                match self.roles[li] {
                    Role::Train => slot.0 += 1,
                    Role::Validation => slot.1 += 1,
                    Role::Test => slot.2 += 1,
                }
                li += 1;
            }
        }
        counts
    }

    /// JSON form with the role sequence run-length encoded, e.g.
    /// `{"seed":7,"fractions":[0.05,0.05],"assignments":"3T2V41E...",...}`.
    pub fn to_json(&self) -> String {
        let mut rle = String::new();
        let mut iter = self.roles.iter();
        if let Some(&first) = iter.next() {
            let mut current = first;
            let mut count = 1usize;
            for &r in iter {
                if r == current {
                    count += 1;
                } else {
                    rle.push_str(&format!("{count}{}", current.code()));
                    current = r;
                    count = 1;
                }
            }
            rle.push_str(&format!("{count}{}", current.code()));
        }
        let mut w = Writer::new();
        w.begin_object()
            .key("seed")
            .uint(self.seed)
            .key("fractions")
            .begin_array()
            .float(self.train_frac)
            .float(self.val_frac)
            .end_array()
            .key("assignments")
            .str(&rle)
            .key("flagged_classes")
            .begin_array();
        for &c in &self.flagged_classes {
            w.uint(c as u64);
        }
        w.end_array().end_object();
        w.finish()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v = json::parse(text)?;
        let seed = v
            .field("seed")?
            .as_u64()
            .ok_or_else(|| Error::data("split seed must be an unsigned integer"))?;
        let fr = v.field("fractions")?.as_array().unwrap_or(&[]).to_vec();
        if fr.len() != 2 {
            return Err(Error::data("split fractions must have 2 entries"));
        }
        let train_frac = fr[0].as_f64().ok_or_else(|| Error::data("bad fraction"))?;
        let val_frac = fr[1].as_f64().ok_or_else(|| Error::data("bad fraction"))?;
        let rle = v
            .field("assignments")?
            .as_str()
            .ok_or_else(|| Error::data("assignments must be a string"))?;
        let mut roles = Vec::new();
        let mut count = 0usize;
        for ch in rle.chars() {
            if let Some(d) = ch.to_digit(10) {
                count = count * 10 + d as usize;
            } else {
                if count == 0 {
                    return Err(Error::data("RLE run with zero length"));
                }
                let role = Role::from_code(ch)?;
                roles.extend(std::iter::repeat_n(role, count));
                count = 0;
            }
        }
        if count != 0 {
            return Err(Error::data("trailing digits in RLE assignments"));
        }
        let mut flagged_classes = Vec::new();
        for item in v.field("flagged_classes")?.as_array().unwrap_or(&[]) {
            flagged_classes.push(
                item.as_u64()
                    .ok_or_else(|| Error::data("flagged class must be an integer"))? as u16,
            );
        }
        Ok(SplitAssignment {
            seed,
            train_frac,
            val_frac,
            roles,
            flagged_classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Largest-remainder apportionment of `target` items over class totals
/// weighted by `frac`, honoring per-class capacities and a minimum of 1
/// for eligible classes. Deterministic: remainder ties break toward the
/// lower class index.
fn apportion(
    totals: &[usize],
    capacity: &[usize],
    frac: f64,
    target: usize,
    min_one: &[bool],
) -> Vec<usize> {
    let k = totals.len();
    let mut alloc = vec![0usize; k];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(k);
    let mut assigned = 0usize;
    for c in 0..k {
        let exact = totals[c] as f64 * frac;
        let base = (exact.floor() as usize).min(capacity[c]);
        alloc[c] = base;
        assigned += base;
        remainders.push((c, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut idx = 0usize;
    while assigned < target && idx < remainders.len() * 2 {
        let c = remainders[idx % remainders.len()].0;
        if alloc[c] < capacity[c] {
            alloc[c] += 1;
            assigned += 1;
        }
        idx += 1;
    }
    while assigned > target {
        // Over-assignment can only come from capacity clamping earlier;
        // take back from the largest allocation.
        let c = (0..k).max_by_key(|&c| alloc[c]).unwrap();
        if alloc[c] == 0 {
            break;
        }
        alloc[c] -= 1;
        assigned -= 1;
    }
    // Minimum-one clamp, compensated from the largest allocation so the
    // global target holds.
    for c in 0..k {
        if min_one[c] && alloc[c] == 0 && capacity[c] > 0 {
            alloc[c] = 1;
            let donor = (0..k)
                .filter(|&d| d != c && alloc[d] > 1)
                .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)));
            if let Some(d) = donor {
                alloc[d] -= 1;
            }
        }
    }
    alloc
}

/// Splits the labeled pixels of a scene into train/validation/test,
/// stratified per class, deterministic in (gt, fractions, seed).
///
/// Global role sizes are floor(total x frac), apportioned over classes by
/// largest remainder, so a class's count is within one of its
/// proportional share. Classes with at least 3 pixels always receive at
/// least one train and one validation pixel; classes with fewer get
/// train=1, val=0 and are flagged.
pub fn stratified_split(
    gt: &GroundTruthMap,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(train_frac > 0.0 && train_frac.is_finite()) {
        return Err(Error::usage(format!(
            "train fraction must be positive and finite, got {train_frac}"
        )));
    }
    if val_frac < 0.0 {
        return Err(Error::usage(format!(
            "validation fraction must be non-negative, got {val_frac}"
        )));
    }
    if train_frac + val_frac >= 1.0 {
        return Err(Error::usage(format!(
            "train + validation fractions must be below 1, got {}",
            train_frac + val_frac
        )));
    }

    let k = gt.max_label() as usize;
    if k == 0 {
        return Err(Error::data("ground truth has no labeled pixels"));
    }

    // Labeled pixel indices per class, in row-major order.
    let mut class_pixels: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut labeled_index_of = vec![usize::MAX; gt.labels.len()];
    let mut li = 0usize;
    for (i, &l) in gt.labels.iter().enumerate() {
        if l != 0 {
            class_pixels[l as usize - 1].push(li);
            labeled_index_of[i] = li;
            li += 1;
        }
    }
    let total_labeled = li;
    let totals: Vec<usize> = class_pixels.iter().map(|p| p.len()).collect();

    let tiny: Vec<bool> = totals.iter().map(|&t| t > 0 && t < 3).collect();
    let mut flagged_classes: Vec<u16> = Vec::new();
    for (c, &is_tiny) in tiny.iter().enumerate() {
        if is_tiny {
            flagged_classes.push((c + 1) as u16);
        }
    }

    // Tiny classes take train=1, val=0 off the top.
    let tiny_train: usize = tiny.iter().filter(|&&t| t).count();
    let train_target = ((total_labeled as f64 * train_frac).floor() as usize)
        .max(tiny_train)
        .saturating_sub(tiny_train);
    let val_target = (total_labeled as f64 * val_frac).floor() as usize;

    let mut app_totals = totals.clone();
    let mut train_capacity = totals.clone();
    let min_one: Vec<bool> = totals
        .iter()
        .zip(tiny.iter())
        .map(|(&t, &is_tiny)| t >= 3 && !is_tiny)
        .collect();
    for c in 0..k {
        if tiny[c] {
            app_totals[c] = 0;
            train_capacity[c] = 0;
        }
    }
    let mut train_counts = apportion(&app_totals, &train_capacity, train_frac, train_target, &min_one);
    for c in 0..k {
        if tiny[c] {
            train_counts[c] = 1;
        }
    }

    let val_capacity: Vec<usize> = (0..k)
        .map(|c| if tiny[c] { 0 } else { totals[c] - train_counts[c] })
        .collect();
    let val_min_one: Vec<bool> = min_one.iter().map(|&m| m && val_frac > 0.0).collect();
    let val_counts = apportion(&app_totals, &val_capacity, val_frac, val_target, &val_min_one);

    // Shuffle each class with its own stream and deal roles.
    let mut roles = vec![Role::Test; total_labeled];
    for c in 0..k {
        if totals[c] == 0 {
            continue;
        }
        let mut pixels = class_pixels[c].clone();
        let mut rng = Pcg32::new(mix(seed, "stratified-split", &[(c + 1) as u64]), (c + 1) as u64);
        rng.shuffle(&mut pixels);
        for (i, &px) in pixels.iter().enumerate() {
            roles[px] = if i < train_counts[c] {
                Role::Train
            } else if i < train_counts[c] + val_counts[c] {
                Role::Validation
            } else {
                Role::Test
            };
        }
    }

    Ok(SplitAssignment {
        seed,
        train_frac,
        val_frac,
        roles,
        flagged_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_rows(rows: usize, cols: usize, bands: usize, f: impl Fn(usize, usize, usize) -> f64) -> HyperspectralCube {
        let mut data = Vec::with_capacity(rows * cols * bands);
        for r in 0..rows {
            for c in 0..cols {
                for b in 0..bands {
                    data.push(f(r, c, b));
                }
            }
        }
        HyperspectralCube::new(rows, cols, bands, data).unwrap()
    }

    #[test]
    fn standardize_means_and_stds() {
        // Band values {1,2,3,4}: mean 2.5, population std sqrt(1.25).
        let cube = cube_from_rows(2, 2, 1, |r, c, _| (r * 2 + c + 1) as f64);
        let out = standardize_bands(&cube);
        let vals: Vec<f64> = out.data().to_vec();
        let mean: f64 = vals.iter().sum::<f64>() / 4.0;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let expected0 = (1.0 - 2.5) / 1.25f64.sqrt();
        assert!((vals[0] - expected0).abs() < 1e-12);
    }

    #[test]
    fn standardize_constant_band_goes_to_zero() {
        let cube = cube_from_rows(1, 3, 1, |_, _, _| 5.0);
        let out = standardize_bands(&cube);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_is_idempotent() {
        let cube = cube_from_rows(3, 3, 4, |r, c, b| ((r * 31 + c * 7 + b * 3) % 11) as f64 - 5.0);
        let once = standardize_bands(&cube);
        let twice = standardize_bands(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_diagonal_matrix() {
        let m = vec![2.0, 0.0, 0.0, 1.0];
        let (vals, vecs) = jacobi_eigen_sym(&m, 2).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // Axes are +-e1 and +-e2; sign convention makes them positive.
        assert!((vecs[0].abs() - 1.0).abs() < 1e-12);
        assert!(vecs[1].abs() < 1e-12);
        assert!((vecs[3].abs() - 1.0).abs() < 1e-12);
    }

    /// Independent eigen oracle: power iteration with deflation.
    fn power_iteration_oracle(matrix: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = matrix.to_vec();
        let mut values = Vec::new();
        let mut vectors = Vec::new();
        for comp in 0..k {
            let mut v: Vec<f64> = (0..n).map(|i| ((i + comp * 7 + 1) as f64).sin()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            let mut lambda = 0.0;
            for _ in 0..20000 {
                let mut w = vec![0.0f64; n];
                for i in 0..n {
                    for j in 0..n {
                        w[i] += a[i * n + j] * v[j];
                    }
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-300 {
                    break;
                }
                for x in &mut w {
                    *x /= norm;
                }
                let mut new_lambda = 0.0;
                for i in 0..n {
                    let mut av = 0.0;
                    for j in 0..n {
                        av += a[i * n + j] * w[j];
                    }
                    new_lambda += w[i] * av;
                }
                let converged = (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs().max(1.0);
                v = w;
                lambda = new_lambda;
                if converged {
                    break;
                }
            }
            values.push(lambda);
            vectors.extend_from_slice(&v);
            // Deflate: A <- A - lambda v v^T.
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] -= lambda * v[i] * v[j];
                }
            }
        }
        (values, vectors)
    }

    #[test]
    fn pca_matches_power_iteration_oracle() {
        // Random problems with 6..=12 bands; positive semidefinite
        // covariance built from random data.
        let mut rng = Pcg32::new(2024, 1);
        for trial in 0..8 {
            let d = 6 + (trial % 7);
            let n_px = 60;
            let cube = {
                let mut data = Vec::with_capacity(n_px * d);
                for _ in 0..n_px * d {
                    data.push(rng.uniform(-2.0, 2.0));
                }
                HyperspectralCube::new(1, n_px, d, data).unwrap()
            };
            let model = fit_pca(&cube, d).unwrap();

            // Rebuild the covariance the same way for the oracle.
            let mut mean = vec![0.0f64; d];
            for px in 0..n_px {
                for b in 0..d {
                    mean[b] += cube.get(0, px, b);
                }
            }
            for m in &mut mean {
                *m /= n_px as f64;
            }
            let mut cov = vec![0.0f64; d * d];
            for px in 0..n_px {
                for i in 0..d {
                    for j in 0..d {
                        cov[i * d + j] +=
                            (cube.get(0, px, i) - mean[i]) * (cube.get(0, px, j) - mean[j]);
                    }
                }
            }
            for c in &mut cov {
                *c /= n_px as f64;
            }

            let (oracle_vals, oracle_vecs) = power_iteration_oracle(&cov, d, d.min(4));
            for c in 0..d.min(4) {
                assert!(
                    (model.eigenvalues[c] - oracle_vals[c]).abs() <= 1e-8 * oracle_vals[0].max(1.0),
                    "trial {trial} eigenvalue {c}: {} vs oracle {}",
                    model.eigenvalues[c],
                    oracle_vals[c]
                );
                let dot: f64 = model
                    .component(c)
                    .iter()
                    .zip(&oracle_vecs[c * d..(c + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(
                    (dot.abs() - 1.0).abs() <= 1e-6,
                    "trial {trial} axis {c} misaligned: |dot| = {}",
                    dot.abs()
                );
            }
        }
    }

    #[test]
    fn pca_components_orthonormal_and_eigenvalues_bounded() {
        let mut rng = Pcg32::new(7, 7);
        let d = 8;
        let cube = {
            let mut data = Vec::new();
            for _ in 0..100 * d {
                data.push(rng.normal());
            }
            HyperspectralCube::new(10, 10, d, data).unwrap()
        };
        let model = fit_pca(&cube, d).unwrap();
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = model
                    .component(i)
                    .iter()
                    .zip(model.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-8, "component {i}.{j} dot {dot}");
            }
        }
        for w in model.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert!(model.eigenvalues.iter().all(|&l| l >= 0.0));

        // Sum of all eigenvalues equals the covariance trace (k = d).
        let centered = standardize_bands(&cube);
        let _ = centered; // trace check below uses the model's own data
        let trace: f64 = {
            let n = cube.pixels() as f64;
            let mut mean = vec![0.0; d];
            for px in 0..cube.pixels() {
                for b in 0..d {
                    mean[b] += cube.data()[px * d + b];
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut t = 0.0;
            for b in 0..d {
                for px in 0..cube.pixels() {
                    let x = cube.data()[px * d + b] - mean[b];
                    t += x * x;
                }
            }
            t / n
        };
        let sum: f64 = model.eigenvalues.iter().sum();
        assert!((sum - trace).abs() <= 1e-8 * trace.max(1.0));
    }

    #[test]
    fn apply_pca_centering_and_round_trip() {
        let mut rng = Pcg32::new(11, 3);
        let d = 6;
        let cube = {
            let mut data = Vec::new();
            for _ in 0..40 * d {
                data.push(rng.uniform(0.0, 9.0));
            }
            HyperspectralCube::new(5, 8, d, data).unwrap()
        };
        let model = fit_pca(&cube, d).unwrap();
        let projected = apply_pca(&cube, &model).unwrap();

        // x = mean maps to the zero vector.
        let mean_cube = HyperspectralCube::new(1, 1, d, model.mean.clone()).unwrap();
        let zero = apply_pca(&mean_cube, &model).unwrap();
        assert!(zero.data().iter().all(|&v| v.abs() < 1e-9));

        // Orthonormal full-rank projection reconstructs exactly.
        for px in 0..cube.pixels() {
            let y = &projected.data()[px * d..(px + 1) * d];
            for b in 0..d {
                let mut x = model.mean[b];
                for c in 0..d {
                    x += model.component(c)[b] * y[c];
                }
                let orig = cube.data()[px * d + b];
                assert!((x - orig).abs() < 1e-8, "pixel {px} band {b}: {x} vs {orig}");
            }
        }

        // Pairwise distances preserved (orthogonal transform).
        for (a, b) in [(0usize, 7usize), (3, 21), (10, 39)] {
            let da: f64 = (0..d)
                .map(|i| (cube.data()[a * d + i] - cube.data()[b * d + i]).powi(2))
                .sum();
            let dp: f64 = (0..d)
                .map(|i| (projected.data()[a * d + i] - projected.data()[b * d + i]).powi(2))
                .sum();
            assert!((da.sqrt() - dp.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn pca_projection_on_eigen_axis_concentrates() {
        let model = PcaModel {
            input_dim: 2,
            k: 2,
            mean: vec![0.0, 0.0],
            components: vec![1.0, 0.0, 0.0, 1.0],
            eigenvalues: vec![2.0, 1.0],
        };
        let cube = HyperspectralCube::new(1, 1, 2, vec![3.0, 0.0]).unwrap();
        let y = apply_pca(&cube, &model).unwrap();
        assert_eq!(y.spectrum(0, 0), &[3.0, 0.0]);
    }

    #[test]
    fn pca_k_out_of_range() {
        let cube = cube_from_rows(2, 2, 3, |r, c, b| (r + c + b) as f64);
        assert!(fit_pca(&cube, 0).is_err());
        assert!(fit_pca(&cube, 4).is_err());
    }

    #[test]
    fn patch_window_one_is_single_spectrum() {
        let cube = cube_from_rows(3, 3, 2, |r, c, b| (100 * r + 10 * c + b) as f64);
        let p = extract_patch(&cube, 1, 2, 1).unwrap();
        assert_eq!(p.data, vec![120.0, 121.0]);
    }

    #[test]
    fn patch_interior_is_literal_subcube() {
        let cube = cube_from_rows(5, 5, 1, |r, c, _| (r * 5 + c) as f64);
        let p = extract_patch(&cube, 2, 2, 3).unwrap();
        assert_eq!(
            p.data,
            vec![6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]
        );
    }

    #[test]
    fn patch_corner_zero_fill() {
        // Center (0,0), window 5: patch rows/cols 0..1 fall outside and
        // must be zero; overlap anchored at patch (2,2).
        let cube = cube_from_rows(4, 4, 1, |r, c, _| (1 + r * 4 + c) as f64);
        let p = extract_patch(&cube, 0, 0, 5).unwrap();
        for pr in 0..5 {
            for pc in 0..5 {
                let v = p.data[pr * 5 + pc];
                if pr < 2 || pc < 2 {
                    assert_eq!(v, 0.0, "patch ({pr},{pc}) should be zero padding");
                } else {
                    assert_eq!(v, cube.get(pr - 2, pc - 2, 0));
                }
            }
        }
        // Center element equals the cube value at the center.
        assert_eq!(p.data[2 * 5 + 2], cube.get(0, 0, 0));
    }

    #[test]
    fn patch_rejects_bad_requests() {
        let cube = cube_from_rows(3, 3, 1, |_, _, _| 0.0);
        assert!(extract_patch(&cube, 0, 0, 2).is_err());
        assert!(extract_patch(&cube, 3, 0, 3).is_err());
    }

    fn synthetic_gt(counts: &[usize]) -> GroundTruthMap {
        let total: usize = counts.iter().sum();
        let side = (total as f64).sqrt().ceil() as usize + 1;
        let mut labels = vec![0u16; side * side];
        let mut i = 0;
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                labels[i] = (c + 1) as u16;
                i += 1;
            }
        }
        GroundTruthMap::new(side, side, labels).unwrap()
    }

    #[test]
    fn split_is_partition_and_deterministic() {
        let gt = synthetic_gt(&[50, 30, 20]);
        let a = stratified_split(&gt, 0.2, 0.1, 99).unwrap();
        let b = stratified_split(&gt, 0.2, 0.1, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.roles.len(), 100);
        let (t, v, e) = a.counts();
        assert_eq!(t + v + e, 100);
        assert_eq!(t, 20);
        assert_eq!(v, 10);

        let c = stratified_split(&gt, 0.2, 0.1, 100).unwrap();
        assert_ne!(a.roles, c.roles, "different seeds must differ");
    }

    #[test]
    fn split_single_class_ten_pixels() {
        let gt = synthetic_gt(&[10]);
        let s = stratified_split(&gt, 0.1, 0.1, 1).unwrap();
        let (t, v, e) = s.counts();
        assert_eq!((t, v, e), (1, 1, 8));
    }

    #[test]
    fn split_zero_fractions_forbidden() {
        let gt = synthetic_gt(&[10]);
        assert!(stratified_split(&gt, 0.0, 0.0, 1).is_err());
        assert!(stratified_split(&gt, 0.6, 0.4, 1).is_err());
    }

    #[test]
    fn split_tiny_class_flagged() {
        let gt = synthetic_gt(&[2, 40]);
        let s = stratified_split(&gt, 0.1, 0.1, 5).unwrap();
        assert_eq!(s.flagged_classes, vec![1]);
        let per = s.per_class_counts(&gt);
        assert_eq!(per[0].0, 1, "tiny class gets exactly one train pixel");
        assert_eq!(per[0].1, 0, "tiny class gets no validation pixel");
    }

    #[test]
    fn split_minimum_one_for_small_classes() {
        let gt = synthetic_gt(&[3, 1000]);
        let s = stratified_split(&gt, 0.05, 0.05, 3).unwrap();
        let per = s.per_class_counts(&gt);
        assert!(per[0].0 >= 1);
        assert!(per[0].1 >= 1);
    }

    #[test]
    fn split_json_round_trip() {
        let gt = synthetic_gt(&[30, 2, 25]);
        let s = stratified_split(&gt, 0.2, 0.1, 123).unwrap();
        let text = s.to_json();
        let back = SplitAssignment::from_json(&text).unwrap();
        assert_eq!(s, back);
    }
}
