//! Reading hyperspectral cubes and ground-truth maps, discarding
//! water-absorption bands, and rendering classification maps.
//!
//! On-disk formats:
//! - ENVI-style text header plus flat binary body (BSQ/BIL/BIP);
//! - raw binary cube described by a JSON sidecar;
//! - ground truth as raw little-endian u16, row-major;
//! - output maps as binary PPM (P6).

use crate::error::{Error, Result};
use crate::json::{self, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// An L×W×S reflectance cube. Values are stored as f64 in (row, col,
/// band) order; integer sample types are converted without scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperspectralCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    data: Vec<f64>,
}

impl HyperspectralCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::data(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::data(format!(
                "cube data length {} does not match {height}x{width}x{bands}",
                data.len()
            )));
        }
        Ok(HyperspectralCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::new(height, width, bands, vec![0.0; height * width * bands])
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: f64) {
        self.data[(row * self.width + col) * self.bands + band] = value;
    }

    /// Full spectrum at a pixel, contiguous.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel class ids: 0 = unlabeled background, 1..=K = classes.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl GroundTruthMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::data(format!(
                "ground truth length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(GroundTruthMap {
            height,
            width,
            labels,
        })
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// How a manifest points at its cube on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum CubeSource {
    Envi { header: PathBuf, data: PathBuf },
    Raw { data: PathBuf, sidecar: PathBuf },
}

/// Dataset description: file locations, band discard list, class names
/// and the rendering palette (entry 0 is the background color).
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub name: String,
    pub cube: CubeSource,
    pub ground_truth: PathBuf,
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub bands_to_discard: Vec<usize>,
    pub class_names: Vec<String>,
    pub palette: Vec<[u8; 3]>,
    /// Recorded verbatim from the source description; not used
    /// computationally.
    pub wavelength_range_nm: Option<(f64, f64)>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("reading manifest {}: {e}", path.display())))?;
        let v = json::parse(&text)
            .map_err(|e| Error::data(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));

        let name = v.field("name")?.as_str().unwrap_or("unnamed").to_string();
        let cube_v = v.field("cube")?;
        let format = cube_v.field("format")?.as_str().unwrap_or("");
        let resolve = |p: &str| -> PathBuf {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        let cube = match format {
            "envi" => CubeSource::Envi {
                header: resolve(
                    cube_v
                        .field("header")?
                        .as_str()
                        .ok_or_else(|| Error::data("manifest cube.header must be a string"))?,
                ),
                data: resolve(
                    cube_v
                        .field("data")?
                        .as_str()
                        .ok_or_else(|| Error::data("manifest cube.data must be a string"))?,
                ),
            },
            "raw" => {
                let data = resolve(
                    cube_v
                        .field("data")?
                        .as_str()
                        .ok_or_else(|| Error::data("manifest cube.data must be a string"))?,
                );
                let sidecar = match cube_v.as_object().and_then(|o| o.get("sidecar")) {
                    Some(s) => resolve(
                        s.as_str()
                            .ok_or_else(|| Error::data("manifest cube.sidecar must be a string"))?,
                    ),
                    None => {
                        let mut p = data.clone().into_os_string();
                        p.push(".json");
                        PathBuf::from(p)
                    }
                };
                CubeSource::Raw { data, sidecar }
            }
            other => {
                return Err(Error::data(format!(
                    "manifest cube.format must be 'envi' or 'raw', got '{other}'"
                )))
            }
        };

        let ground_truth = resolve(
            v.field("ground_truth")?
                .as_str()
                .ok_or_else(|| Error::data("manifest ground_truth must be a string"))?,
        );
        let lines = v
            .field("lines")?
            .as_usize()
            .ok_or_else(|| Error::data("manifest lines must be a positive integer"))?;
        let samples = v
            .field("samples")?
            .as_usize()
            .ok_or_else(|| Error::data("manifest samples must be a positive integer"))?;
        let bands = v
            .field("bands")?
            .as_usize()
            .ok_or_else(|| Error::data("manifest bands must be a positive integer"))?;

        let mut bands_to_discard = Vec::new();
        for item in v.field("bands_to_discard")?.as_array().unwrap_or(&[]) {
            bands_to_discard.push(
                item.as_usize()
                    .ok_or_else(|| Error::data("bands_to_discard entries must be integers"))?,
            );
        }

        let mut class_names = Vec::new();
        for item in v.field("class_names")?.as_array().unwrap_or(&[]) {
            class_names.push(
                item.as_str()
                    .ok_or_else(|| Error::data("class_names entries must be strings"))?
                    .to_string(),
            );
        }

        let mut palette = Vec::new();
        for item in v.field("palette")?.as_array().unwrap_or(&[]) {
            let trio = item
                .as_array()
                .ok_or_else(|| Error::data("palette entries must be [r,g,b] arrays"))?;
            if trio.len() != 3 {
                return Err(Error::data("palette entries must have exactly 3 components"));
            }
            let mut rgb = [0u8; 3];
            for (i, c) in trio.iter().enumerate() {
                let n = c
                    .as_u64()
                    .ok_or_else(|| Error::data("palette components must be integers"))?;
                if n > 255 {
                    return Err(Error::data("palette components must be in 0..=255"));
                }
                rgb[i] = n as u8;
            }
            palette.push(rgb);
        }

        let wavelength_range_nm = match v.as_object().and_then(|o| o.get("wavelength_range_nm")) {
            Some(Value::Array(a)) if a.len() == 2 => {
                match (a[0].as_f64(), a[1].as_f64()) {
                    (Some(lo), Some(hi)) => Some((lo, hi)),
                    _ => None,
                }
            }
            _ => None,
        };

        let manifest = DatasetManifest {
            name,
            cube,
            ground_truth,
            lines,
            samples,
            bands,
            bands_to_discard,
            class_names,
            palette,
            wavelength_range_nm,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.len() != self.class_names.len() + 1 {
            return Err(Error::data(format!(
                "manifest '{}': palette has {} entries, expected {} (classes + background)",
                self.name,
                self.palette.len(),
                self.class_names.len() + 1
            )));
        }
        let mut seen = vec![false; self.bands];
        for &b in &self.bands_to_discard {
            if b >= self.bands {
                return Err(Error::data(format!(
                    "manifest '{}': discard index {b} out of range for {} bands",
                    self.name, self.bands
                )));
            }
            if seen[b] {
                return Err(Error::data(format!(
                    "manifest '{}': duplicate discard index {b}",
                    self.name
                )));
            }
            seen[b] = true;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(Error::data(format!("unsupported interleave '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ElemType {
    U8,
    I16,
    U16,
    F32,
    F64,
}

impl ElemType {
    fn from_envi_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(ElemType::U8),
            2 => Ok(ElemType::I16),
            4 => Ok(ElemType::F32),
            5 => Ok(ElemType::F64),
            12 => Ok(ElemType::U16),
            other => Err(Error::data(format!("unsupported ENVI data type code {other}"))),
        }
    }

    fn from_name(name: &str) -> Result<Self> {
        match name {
            "u8" => Ok(ElemType::U8),
            "i16" => Ok(ElemType::I16),
            "u16" => Ok(ElemType::U16),
            "f32" => Ok(ElemType::F32),
            "f64" => Ok(ElemType::F64),
            other => Err(Error::data(format!("unsupported element type '{other}'"))),
        }
    }

    fn size(self) -> usize {
        match self {
            ElemType::U8 => 1,
            ElemType::I16 | ElemType::U16 => 2,
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        match self {
            ElemType::U8 => bytes[0] as f64,
            ElemType::I16 => {
                let raw = [bytes[0], bytes[1]];
                let v = if big_endian {
                    i16::from_be_bytes(raw)
                } else {
                    i16::from_le_bytes(raw)
                };
                v as f64
            }
            ElemType::U16 => {
                let raw = [bytes[0], bytes[1]];
                let v = if big_endian {
                    u16::from_be_bytes(raw)
                } else {
                    u16::from_le_bytes(raw)
                };
                v as f64
            }
            ElemType::F32 => {
                let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
                let v = if big_endian {
                    f32::from_be_bytes(raw)
                } else {
                    f32::from_le_bytes(raw)
                };
                v as f64
            }
            ElemType::F64 => {
                let raw: [u8; 8] = bytes[0..8].try_into().unwrap();
                if big_endian {
                    f64::from_be_bytes(raw)
                } else {
                    f64::from_le_bytes(raw)
                }
            }
        }
    }
}

struct CubeLayout {
    lines: usize,
    samples: usize,
    bands: usize,
    elem: ElemType,
    interleave: Interleave,
    big_endian: bool,
}

fn decode_cube(bytes: &[u8], layout: &CubeLayout, source: &str) -> Result<HyperspectralCube> {
    let CubeLayout {
        lines,
        samples,
        bands,
        elem,
        interleave,
        big_endian,
    } = *layout;
    let expected = lines * samples * bands * elem.size();
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{source}: file is {} bytes but {lines}x{samples}x{bands} {} samples need {expected}",
            bytes.len(),
            elem.size()
        )));
    }
    let es = elem.size();
    let mut data = vec![0.0f64; lines * samples * bands];
    // Normalize any interleave to (row, col, band) order.
    for r in 0..lines {
        for c in 0..samples {
            let out_base = (r * samples + c) * bands;
            for b in 0..bands {
                let src_index = match interleave {
                    Interleave::Bsq => (b * lines + r) * samples + c,
                    Interleave::Bil => (r * bands + b) * samples + c,
                    Interleave::Bip => (r * samples + c) * bands + b,
                };
                let off = src_index * es;
                data[out_base + b] = elem.decode(&bytes[off..off + es], big_endian);
            }
        }
    }
    HyperspectralCube::new(lines, samples, bands, data)
}

/// Reads an ENVI-style header: `key = value` lines with case-insensitive
/// keys; `{ ... }` blocks are skipped as a unit.
fn parse_envi_header(text: &str) -> Result<CubeLayout> {
    let mut samples = None;
    let mut lines_n = None;
    let mut bands = None;
    let mut interleave = None;
    let mut data_type = None;
    let mut byte_order = None;

    let mut rest = text;
    while !rest.is_empty() {
        let line_end = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
        let line = &rest[..line_end];
        rest = &rest[line_end..];
        let Some(eq) = line.find('=') else { continue };
        let key = line[..eq].trim().to_ascii_lowercase();
        let mut value = line[eq + 1..].trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            // Multi-line brace block; consume until the closing brace.
            while let Some(more_end) = rest.find('\n').map(|i| i + 1).or({
                if rest.is_empty() {
                    None
                } else {
                    Some(rest.len())
                }
            }) {
                let part = &rest[..more_end];
                value.push_str(part);
                rest = &rest[more_end..];
                if part.contains('}') {
                    break;
                }
            }
        }
        let parse_num = |v: &str, key: &str| -> Result<u32> {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::data(format!("unparsable ENVI header value for '{key}': '{v}'")))
        };
        match key.as_str() {
            "samples" => samples = Some(parse_num(&value, "samples")? as usize),
            "lines" => lines_n = Some(parse_num(&value, "lines")? as usize),
            "bands" => bands = Some(parse_num(&value, "bands")? as usize),
            "interleave" => interleave = Some(Interleave::parse(&value)?),
            "data type" => data_type = Some(ElemType::from_envi_code(parse_num(&value, "data type")?)?),
            "byte order" => byte_order = Some(parse_num(&value, "byte order")? == 1),
            _ => {}
        }
    }

    let need = |name: &str| Error::data(format!("missing ENVI header key '{name}'"));
    Ok(CubeLayout {
        lines: lines_n.ok_or_else(|| need("lines"))?,
        samples: samples.ok_or_else(|| need("samples"))?,
        bands: bands.ok_or_else(|| need("bands"))?,
        elem: data_type.ok_or_else(|| need("data type"))?,
        interleave: interleave.ok_or_else(|| need("interleave"))?,
        big_endian: byte_order.ok_or_else(|| need("byte order"))?,
    })
}

/// Loads an ENVI header + binary body pair into a cube with (row, col,
/// band) ordering. Integer sample types are converted to floating point
/// without scaling.
pub fn load_envi_cube(header_path: &Path, data_path: &Path) -> Result<HyperspectralCube> {
    let header = fs::read_to_string(header_path)
        .map_err(|e| Error::data(format!("reading {}: {e}", header_path.display())))?;
    let layout = parse_envi_header(&header)?;
    let bytes = fs::read(data_path)
        .map_err(|e| Error::data(format!("reading {}: {e}", data_path.display())))?;
    decode_cube(&bytes, &layout, &data_path.display().to_string())
}

fn parse_sidecar(text: &str) -> Result<CubeLayout> {
    let v = json::parse(text)?;
    let get = |name: &str| -> Result<usize> {
        v.field(name)?
            .as_usize()
            .ok_or_else(|| Error::data(format!("sidecar field '{name}' must be a positive integer")))
    };
    let dtype = v
        .field("dtype")?
        .as_str()
        .ok_or_else(|| Error::data("sidecar dtype must be a string"))?;
    let interleave = v
        .field("interleave")?
        .as_str()
        .ok_or_else(|| Error::data("sidecar interleave must be a string"))?;
    let byte_order = v
        .field("byte_order")?
        .as_str()
        .ok_or_else(|| Error::data("sidecar byte_order must be a string"))?;
    Ok(CubeLayout {
        lines: get("lines")?,
        samples: get("samples")?,
        bands: get("bands")?,
        elem: ElemType::from_name(dtype)?,
        interleave: Interleave::parse(interleave)?,
        big_endian: match byte_order {
            "le" => false,
            "be" => true,
            other => return Err(Error::data(format!("byte_order must be 'le' or 'be', got '{other}'"))),
        },
    })
}

/// Loads the raw-binary cube named by a manifest, described by its JSON
/// sidecar. Same output contract as [`load_envi_cube`].
pub fn load_raw_cube(manifest: &DatasetManifest) -> Result<HyperspectralCube> {
    let CubeSource::Raw { data, sidecar } = &manifest.cube else {
        return Err(Error::data(format!(
            "manifest '{}' does not describe a raw-binary cube",
            manifest.name
        )));
    };
    load_raw_cube_at(data, sidecar)
}

pub fn load_raw_cube_at(data_path: &Path, sidecar_path: &Path) -> Result<HyperspectralCube> {
    let sidecar = fs::read_to_string(sidecar_path)
        .map_err(|e| Error::data(format!("reading {}: {e}", sidecar_path.display())))?;
    let layout = parse_sidecar(&sidecar)?;
    let bytes = fs::read(data_path)
        .map_err(|e| Error::data(format!("reading {}: {e}", data_path.display())))?;
    decode_cube(&bytes, &layout, &data_path.display().to_string())
}

/// Loads whichever cube source the manifest names.
pub fn load_cube(manifest: &DatasetManifest) -> Result<HyperspectralCube> {
    match &manifest.cube {
        CubeSource::Envi { header, data } => load_envi_cube(header, data),
        CubeSource::Raw { .. } => load_raw_cube(manifest),
    }
}

/// Writes a cube as raw little-endian f64 in BIP order plus a JSON
/// sidecar, the crate's canonical intermediate format.
pub fn write_raw_cube(cube: &HyperspectralCube, data_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(cube.data().len() * 8);
    for &v in cube.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(data_path, &bytes)?;
    let mut w = json::Writer::new();
    w.begin_object()
        .key("lines")
        .uint(cube.height as u64)
        .key("samples")
        .uint(cube.width as u64)
        .key("bands")
        .uint(cube.bands as u64)
        .key("dtype")
        .str("f64")
        .key("interleave")
        .str("bip")
        .key("byte_order")
        .str("le")
        .end_object();
    fs::write(sidecar_path, w.finish())?;
    Ok(())
}

/// Reads a ground-truth map: raw little-endian u16, row-major. Labels
/// must lie in 0..=num_classes.
pub fn load_ground_truth(
    path: &Path,
    height: usize,
    width: usize,
    num_classes: u16,
) -> Result<GroundTruthMap> {
    let bytes = fs::read(path)
        .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
    let expected = height * width * 2;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{}: ground truth is {} bytes but {height}x{width} u16 needs {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(height * width);
    for chunk in bytes.chunks_exact(2) {
        let v = u16::from_le_bytes([chunk[0], chunk[1]]);
        if v > num_classes {
            return Err(Error::data(format!(
                "{}: label {v} exceeds declared class count {num_classes}",
                path.display()
            )));
        }
        labels.push(v);
    }
    GroundTruthMap::new(height, width, labels)
}

/// Writes a ground-truth map in the canonical raw u16 format.
pub fn write_ground_truth(gt: &GroundTruthMap, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(gt.labels.len() * 2);
    for &l in &gt.labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Removes the listed 0-based band indices, preserving the order and
/// values of the remaining bands.
pub fn discard_bands(cube: &HyperspectralCube, bands_to_discard: &[usize]) -> Result<HyperspectralCube> {
    let mut drop = vec![false; cube.bands];
    for &b in bands_to_discard {
        if b >= cube.bands {
            return Err(Error::data(format!(
                "discard index {b} out of range for {} bands",
                cube.bands
            )));
        }
        if drop[b] {
            return Err(Error::data(format!("duplicate discard index {b}")));
        }
        drop[b] = true;
    }
    let kept: Vec<usize> = (0..cube.bands).filter(|&b| !drop[b]).collect();
    if kept.is_empty() {
        return Err(Error::data("discard list removes every band"));
    }
    if kept.len() == cube.bands {
        return Ok(cube.clone());
    }
    let mut data = Vec::with_capacity(cube.pixels() * kept.len());
    for px in 0..cube.pixels() {
        let spectrum = &cube.data()[px * cube.bands..(px + 1) * cube.bands];
        for &b in &kept {
            data.push(spectrum[b]);
        }
    }
    HyperspectralCube::new(cube.height, cube.width, kept.len(), data)
}

/// Renders a label grid to a binary PPM (P6), one pixel per cell, using
/// palette entry `label` for each pixel (entry 0 is the background).
pub fn render_class_map(labels: &GroundTruthMap, palette: &[[u8; 3]], out_path: &Path) -> Result<()> {
    let bytes = encode_ppm(labels, palette)?;
    let mut file = fs::File::create(out_path)
        .map_err(|e| Error::data(format!("creating {}: {e}", out_path.display())))?;
    file.write_all(&bytes)?;
    Ok(())
}

/// P6 encoding of a label grid; exposed for tests and round-trips.
pub fn encode_ppm(labels: &GroundTruthMap, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.labels.len() * 3 + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", labels.width, labels.height).as_bytes());
    for &l in &labels.labels {
        let rgb = palette.get(l as usize).ok_or_else(|| {
            Error::data(format!("label {l} has no palette entry (palette has {})", palette.len()))
        })?;
        out.extend_from_slice(rgb);
    }
    Ok(out)
}

/// Parses a P6 file back into (width, height, rgb triples).
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\n' | b'\r' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::data("truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(bytes)?;
    if magic != "P6" {
        return Err(Error::data(format!("not a P6 PPM (magic '{magic}')")));
    }
    let width: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::data("bad PPM width"))?;
    let height: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::data("bad PPM height"))?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::data("bad PPM maxval"))?;
    if maxval != 255 {
        return Err(Error::data("only 8-bit PPM supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::data("PPM pixel data truncated"));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for chunk in bytes[pos..pos + need].chunks_exact(3) {
        pixels.push([chunk[0], chunk[1], chunk[2]]);
    }
    Ok((width, height, pixels))
}
