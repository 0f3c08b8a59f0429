//! Run configuration: a small TOML reader plus the resolved settings of
//! one pipeline run. Command-line flags override file values; every
//! default is materialized at resolution time so a printed config fully
//! describes the run.

use crate::error::{Error, Result};
use crate::model::{Conv3dSpec, ModelVariant};
use crate::train::{OptimizerKind, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// TOML subset: `[section]` headers and `key = value` lines with
/// strings, integers, floats, booleans and (nested) single-line arrays.
#[derive(Clone, Debug, PartialEq)]
pub enum TomlValue {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Array(Vec<TomlValue>),
}

impl TomlValue {
    fn type_name(&self) -> &'static str {
        match self {
            TomlValue::Str(_) => "string",
            TomlValue::Int(_) => "integer",
            TomlValue::Float(_) => "float",
            TomlValue::Bool(_) => "boolean",
            TomlValue::Array(_) => "array",
        }
    }
}

pub type TomlTable = BTreeMap<String, BTreeMap<String, TomlValue>>;

/// Strips a trailing comment that is not inside a string literal.
fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_string = !in_string,
            '#' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value(text: &str) -> Result<TomlValue> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::usage("empty TOML value"));
    }
    if let Some(inner) = t.strip_prefix('"') {
        let Some(end) = inner.find('"') else {
            return Err(Error::usage(format!("unterminated string: {t}")));
        };
        if !inner[end + 1..].trim().is_empty() {
            return Err(Error::usage(format!("trailing characters after string: {t}")));
        }
        return Ok(TomlValue::Str(inner[..end].to_string()));
    }
    if t == "true" {
        return Ok(TomlValue::Bool(true));
    }
    if t == "false" {
        return Ok(TomlValue::Bool(false));
    }
    if t.starts_with('[') {
        if !t.ends_with(']') {
            return Err(Error::usage(format!("unterminated array: {t}")));
        }
        let inner = &t[1..t.len() - 1];
        let mut items = Vec::new();
        let mut depth = 0usize;
        let mut start = 0usize;
        for (i, c) in inner.char_indices() {
            match c {
                '[' => depth += 1,
                ']' => depth -= 1,
                ',' if depth == 0 => {
                    let piece = inner[start..i].trim();
                    if !piece.is_empty() {
                        items.push(parse_value(piece)?);
                    }
                    start = i + 1;
                }
                _ => {}
            }
        }
        let piece = inner[start..].trim();
        if !piece.is_empty() {
            items.push(parse_value(piece)?);
        }
        return Ok(TomlValue::Array(items));
    }
    if t.contains('.') || t.contains('e') || t.contains('E') {
        if let Ok(f) = t.parse::<f64>() {
            return Ok(TomlValue::Float(f));
        }
    }
    if let Ok(i) = t.parse::<i64>() {
        return Ok(TomlValue::Int(i));
    }
    if let Ok(f) = t.parse::<f64>() {
        return Ok(TomlValue::Float(f));
    }
    Err(Error::usage(format!("cannot parse TOML value: {t}")))
}

pub fn parse_toml(text: &str) -> Result<TomlTable> {
    let mut table: TomlTable = BTreeMap::new();
    let mut section = String::new();
    table.entry(section.clone()).or_default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let Some(name) = header.strip_suffix(']') else {
                return Err(Error::usage(format!("line {}: malformed section header", lineno + 1)));
            };
            section = name.trim().to_string();
            table.entry(section.clone()).or_default();
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(Error::usage(format!("line {}: expected key = value", lineno + 1)));
        };
        let key = line[..eq].trim().to_string();
        let value = parse_value(&line[eq + 1..])
            .map_err(|e| Error::usage(format!("line {}: {e}", lineno + 1)))?;
        table.entry(section.clone()).or_default().insert(key, value);
    }
    Ok(table)
}

/// Numeric precision of the training and inference math.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::usage(format!("precision must be f32 or f64, got '{other}'"))),
        }
    }
    pub fn tag(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Everything one pipeline run needs, fully resolved.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub window: usize,
    pub pca_k: usize,
    /// None until dataset defaults are applied (IP 5%/5%, UP and SA
    /// 1%/1%).
    pub train_frac: f64,
    pub val_frac: f64,
    pub variant: ModelVariant,
    pub se_reduction: usize,
    pub dropout_rate: f64,
    pub conv3d_specs: Option<Vec<Conv3dSpec>>,
    pub conv2d_spec: Option<(usize, usize)>,
    pub sep_conv_spec: Option<(usize, usize)>,
    pub fc_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub precision: Precision,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub classify_all: bool,
    pub checkpoint: Option<PathBuf>,
}

/// Values a command line may override after the file is read.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub repeats: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub classify_all: bool,
}

fn get_usize(section: &BTreeMap<String, TomlValue>, key: &str) -> Result<Option<usize>> {
    match section.get(key) {
        None => Ok(None),
        Some(TomlValue::Int(i)) if *i >= 0 => Ok(Some(*i as usize)),
        Some(v) => Err(Error::usage(format!(
            "'{key}' must be a non-negative integer, got {}",
            v.type_name()
        ))),
    }
}

fn get_f64(section: &BTreeMap<String, TomlValue>, key: &str) -> Result<Option<f64>> {
    match section.get(key) {
        None => Ok(None),
        Some(TomlValue::Float(f)) => Ok(Some(*f)),
        Some(TomlValue::Int(i)) => Ok(Some(*i as f64)),
        Some(v) => Err(Error::usage(format!(
            "'{key}' must be a number, got {}",
            v.type_name()
        ))),
    }
}

fn get_str<'a>(section: &'a BTreeMap<String, TomlValue>, key: &str) -> Result<Option<&'a str>> {
    match section.get(key) {
        None => Ok(None),
        Some(TomlValue::Str(s)) => Ok(Some(s)),
        Some(v) => Err(Error::usage(format!(
            "'{key}' must be a string, got {}",
            v.type_name()
        ))),
    }
}

fn usize_array(v: &TomlValue, key: &str) -> Result<Vec<usize>> {
    let TomlValue::Array(items) = v else {
        return Err(Error::usage(format!("'{key}' must be an array")));
    };
    items
        .iter()
        .map(|i| match i {
            TomlValue::Int(n) if *n >= 0 => Ok(*n as usize),
            _ => Err(Error::usage(format!("'{key}' entries must be non-negative integers"))),
        })
        .collect()
}

impl RunConfig {
    /// Reads a TOML config file and applies flag overrides (flags win).
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("reading config {}: {e}", path.display())))?;
        let table = parse_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_table(&table, base, overrides)
    }

    fn from_table(table: &TomlTable, base: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let empty = BTreeMap::new();
        let dataset = table.get("dataset").unwrap_or(&empty);
        let preprocess = table.get("preprocess").unwrap_or(&empty);
        let model = table.get("model").unwrap_or(&empty);
        let train_sec = table.get("train").unwrap_or(&empty);
        let output = table.get("output").unwrap_or(&empty);

        let manifest_rel = get_str(dataset, "manifest")?
            .ok_or_else(|| Error::usage("config needs dataset.manifest"))?;
        let manifest_path = {
            let p = PathBuf::from(manifest_rel);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        // Fraction defaults depend on the dataset: 5%/5% for the Indian
        // Pines campaign, 1%/1% for Pavia University and Salinas.
        let manifest_name = manifest_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let (default_tf, default_vf) = if manifest_name.contains("pavia") || manifest_name.contains("salinas")
        {
            (0.01, 0.01)
        } else {
            (0.05, 0.05)
        };
        let (default_pca, default_window) = if manifest_name.contains("pavia") {
            (15usize, 15usize)
        } else {
            (30usize, 15usize)
        };

        let mut train = TrainConfig {
            optimizer: match get_str(train_sec, "optimizer")? {
                Some(s) => OptimizerKind::parse(s)?,
                None => OptimizerKind::Adam,
            },
            learning_rate: get_f64(train_sec, "learning_rate")?.unwrap_or(1e-3),
            beta1: get_f64(train_sec, "beta1")?.unwrap_or(0.9),
            beta2: get_f64(train_sec, "beta2")?.unwrap_or(0.999),
            epsilon: get_f64(train_sec, "epsilon")?.unwrap_or(1e-8),
            batch_size: get_usize(train_sec, "batch_size")?.unwrap_or(64),
            max_epochs: get_usize(train_sec, "max_epochs")?.unwrap_or(150),
            patience: get_usize(train_sec, "patience")?.unwrap_or(30),
            seed: get_usize(train_sec, "seed")?.unwrap_or(42) as u64,
            repeats: get_usize(train_sec, "repeats")?.unwrap_or(1),
        };
        if let Some(seed) = overrides.seed {
            train.seed = seed;
        }
        if let Some(repeats) = overrides.repeats {
            train.repeats = repeats;
        }
        train.validate()?;

        let conv3d_specs = match model.get("conv3d_specs") {
            None => None,
            Some(v) => {
                let TomlValue::Array(rows) = v else {
                    return Err(Error::usage("model.conv3d_specs must be an array of arrays"));
                };
                let mut specs = Vec::new();
                for row in rows {
                    let nums = usize_array(row, "conv3d_specs")?;
                    if nums.len() != 4 {
                        return Err(Error::usage("each conv3d spec is [out, kd, kh, kw]"));
                    }
                    specs.push(Conv3dSpec::new(nums[0], nums[1], nums[2], nums[3]));
                }
                Some(specs)
            }
        };
        let pair_field = |key: &str| -> Result<Option<(usize, usize)>> {
            match model.get(key) {
                None => Ok(None),
                Some(v) => {
                    let nums = usize_array(v, key)?;
                    if nums.len() != 2 {
                        return Err(Error::usage(format!("model.{key} is [out, k]")));
                    }
                    Ok(Some((nums[0], nums[1])))
                }
            }
        };
        let fc_hidden = match model.get("fc_dims") {
            None => vec![256, 128],
            Some(v) => usize_array(v, "fc_dims")?,
        };

        let out_dir = overrides
            .out
            .clone()
            .or_else(|| get_str(output, "dir").ok().flatten().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs/out"));

        Ok(RunConfig {
            manifest_path,
            window: get_usize(preprocess, "window")?.unwrap_or(default_window),
            pca_k: get_usize(preprocess, "pca_k")?.unwrap_or(default_pca),
            train_frac: get_f64(preprocess, "train_frac")?.unwrap_or(default_tf),
            val_frac: get_f64(preprocess, "val_frac")?.unwrap_or(default_vf),
            variant: match get_str(model, "variant")? {
                Some(s) => ModelVariant::from_tag(s)?,
                None => ModelVariant::SeHybridSn,
            },
            se_reduction: get_usize(model, "se_reduction")?.unwrap_or(8),
            dropout_rate: get_f64(model, "dropout_rate")?.unwrap_or(0.4),
            conv3d_specs,
            conv2d_spec: pair_field("conv2d")?,
            sep_conv_spec: pair_field("sep_conv")?,
            fc_hidden,
            train,
            precision: match get_str(train_sec, "precision")? {
                Some(s) => Precision::parse(s)?,
                None => Precision::F32,
            },
            out_dir,
            threads: overrides
                .threads
                .unwrap_or(get_usize(output, "threads")?.unwrap_or(0)),
            classify_all: overrides.classify_all,
            checkpoint: overrides.checkpoint.clone(),
        })
    }

    /// The fully resolved configuration, printable TOML.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[dataset]");
        let _ = writeln!(s, "manifest = \"{}\"", self.manifest_path.display());
        let _ = writeln!(s, "\n[preprocess]");
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "pca_k = {}", self.pca_k);
        let _ = writeln!(s, "train_frac = {}", self.train_frac);
        let _ = writeln!(s, "val_frac = {}", self.val_frac);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "variant = \"{}\"", self.variant.tag());
        let _ = writeln!(s, "se_reduction = {}", self.se_reduction);
        let _ = writeln!(s, "dropout_rate = {}", self.dropout_rate);
        if let Some(specs) = &self.conv3d_specs {
            let rows: Vec<String> = specs
                .iter()
                .map(|c| format!("[{}, {}, {}, {}]", c.out_channels, c.kd, c.kh, c.kw))
                .collect();
            let _ = writeln!(s, "conv3d_specs = [{}]", rows.join(", "));
        }
        if let Some((o, k)) = self.conv2d_spec {
            let _ = writeln!(s, "conv2d = [{o}, {k}]");
        }
        if let Some((o, k)) = self.sep_conv_spec {
            let _ = writeln!(s, "sep_conv = [{o}, {k}]");
        }
        let dims: Vec<String> = self.fc_hidden.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "fc_dims = [{}]", dims.join(", "));
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "optimizer = \"{}\"", self.train.optimizer.tag());
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "epsilon = {}", self.train.epsilon);
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.train.max_epochs);
        let _ = writeln!(s, "patience = {}", self.train.patience);
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "repeats = {}", self.train.repeats);
        let _ = writeln!(s, "precision = \"{}\"", self.precision.tag());
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = \"{}\"", self.out_dir.display());
        let _ = writeln!(s, "threads = {}", self.threads);
        s
    }
}
