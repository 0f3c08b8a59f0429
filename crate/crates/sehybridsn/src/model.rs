//! The SE-HybridSN network and its HybridSN-style baseline.
//!
//! SE-HybridSN stacks a densely connected block of four 3D convolutions
//! (each followed by ReLU and, over the merged kernel x spectral
//! channels, a squeeze-excite gate), a 2D stage of one standard and one
//! depthwise-separable convolution (each with ReLU + squeeze-excite),
//! and a fully connected classifier head -- six convolutional layers in
//! total. Dense connectivity means convolution l consumes the
//! channel-axis concatenation of every earlier block output, center
//! cropped so extents align.
//!
//! The baseline keeps the plain 3D-3D-3D-2D + classifier layout with no
//! attention and no dense reuse; it exists for like-for-like accuracy
//! and parameter-count comparisons.

use crate::data_io::{GroundTruthMap, HyperspectralCube};
use crate::error::{Error, Result};
use crate::json::{self, Writer};
use crate::nn::{
    concat_channels5, concat_channels5_backward, center_crop5, center_crop5_backward,
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, depthwise_separable_backward, depthwise_separable_forward, dropout_backward,
    dropout_forward, relu_backward, relu_forward, reshape_merge_channels, reshape_split_channels,
    se_backward, se_forward, Conv2dLayer, Conv3dLayer, DenseLayer, DepthwiseSeparableConv2d,
    DropoutKey, SeBlock, SeCache,
};
use crate::parallel;
use crate::preprocess::{extract_patch, patch_into_chw};
use crate::rng::fnv1a64;
use crate::tensor::{Scalar, Tensor};
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// One 3D convolution in a config: output channels and kernel extents
/// (spectral, spatial, spatial).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub out_channels: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv3dSpec {
    pub fn new(out_channels: usize, kd: usize, kh: usize, kw: usize) -> Self {
        Conv3dSpec {
            out_channels,
            kd,
            kh,
            kw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelVariant {
    SeHybridSn,
    HybridSn,
}

impl ModelVariant {
    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::SeHybridSn => "se-hybridsn",
            ModelVariant::HybridSn => "hybridsn",
        }
    }
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "se-hybridsn" => Ok(ModelVariant::SeHybridSn),
            "hybridsn" => Ok(ModelVariant::HybridSn),
            other => Err(Error::usage(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Full hyperparameter set of the SE-HybridSN network.
#[derive(Clone, Debug, PartialEq)]
pub struct SeHybridSnConfig {
    pub window: usize,
    pub pca_k: usize,
    pub num_classes: usize,
    /// Exactly four entries: the dense block.
    pub conv3d_specs: Vec<Conv3dSpec>,
    /// (out_channels, kernel) of the standard 2D convolution.
    pub conv2d_spec: (usize, usize),
    /// (out_channels, kernel) of the depthwise-separable convolution.
    pub sep_conv_spec: (usize, usize),
    pub se_reduction: usize,
    /// Fully connected output dims; the last entry must equal
    /// `num_classes`.
    pub fc_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
    pub se_enabled: bool,
}

impl SeHybridSnConfig {
    /// The pinned default layout: 3D block 8@7x3x3, 16@5x3x3, 16@3x3x3,
    /// 16@3x3x3; 2D stage 64@3x3 then separable 128@3x3; heads 256/128.
    pub fn default_for(num_classes: usize, window: usize, pca_k: usize, seed: u64) -> Self {
        SeHybridSnConfig {
            window,
            pca_k,
            num_classes,
            conv3d_specs: vec![
                Conv3dSpec::new(8, 7, 3, 3),
                Conv3dSpec::new(16, 5, 3, 3),
                Conv3dSpec::new(16, 3, 3, 3),
                Conv3dSpec::new(16, 3, 3, 3),
            ],
            conv2d_spec: (64, 3),
            sep_conv_spec: (128, 3),
            se_reduction: 8,
            fc_dims: vec![256, 128, num_classes],
            dropout_rate: 0.4,
            seed,
            se_enabled: true,
        }
    }

    /// A geometrically minimal configuration (window 5, 8 spectral
    /// components, 2 classes) for whole-model gradient verification.
    pub fn tiny(seed: u64) -> Self {
        SeHybridSnConfig {
            window: 5,
            pca_k: 8,
            num_classes: 2,
            conv3d_specs: vec![
                Conv3dSpec::new(3, 3, 3, 3),
                Conv3dSpec::new(4, 3, 1, 1),
                Conv3dSpec::new(4, 3, 1, 1),
                Conv3dSpec::new(4, 1, 3, 3),
            ],
            conv2d_spec: (4, 1),
            sep_conv_spec: (6, 1),
            se_reduction: 2,
            fc_dims: vec![8, 4, 2],
            dropout_rate: 0.0,
            seed,
            se_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::usage(format!("window must be odd, got {}", self.window)));
        }
        if self.conv3d_specs.len() != 4 {
            return Err(Error::usage(format!(
                "the dense block holds exactly 4 3D convolutions, got {}",
                self.conv3d_specs.len()
            )));
        }
        if self.fc_dims.last() != Some(&self.num_classes) {
            return Err(Error::usage(format!(
                "fc_dims must end in num_classes ({}), got {:?}",
                self.num_classes, self.fc_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::usage("dropout rate must be in [0,1)"));
        }
        BlockPlan::for_se(self).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        let mut w = Writer::new();
        w.begin_object()
            .key("window")
            .uint(self.window as u64)
            .key("pca_k")
            .uint(self.pca_k as u64)
            .key("num_classes")
            .uint(self.num_classes as u64)
            .key("conv3d_specs")
            .begin_array();
        for s in &self.conv3d_specs {
            w.begin_array()
                .uint(s.out_channels as u64)
                .uint(s.kd as u64)
                .uint(s.kh as u64)
                .uint(s.kw as u64)
                .end_array();
        }
        w.end_array()
            .key("conv2d_spec")
            .begin_array()
            .uint(self.conv2d_spec.0 as u64)
            .uint(self.conv2d_spec.1 as u64)
            .end_array()
            .key("sep_conv_spec")
            .begin_array()
            .uint(self.sep_conv_spec.0 as u64)
            .uint(self.sep_conv_spec.1 as u64)
            .end_array()
            .key("se_reduction")
            .uint(self.se_reduction as u64)
            .key("fc_dims")
            .begin_array();
        for &d in &self.fc_dims {
            w.uint(d as u64);
        }
        w.end_array()
            .key("dropout_rate")
            .float(self.dropout_rate)
            .key("seed")
            .uint(self.seed)
            .key("se_enabled")
            .bool(self.se_enabled)
            .end_object();
        w.finish()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v = json::parse(text)?;
        let usize_field = |name: &str| -> Result<usize> {
            v.field(name)?
                .as_usize()
                .ok_or_else(|| Error::data(format!("config field '{name}' must be an integer")))
        };
        let mut conv3d_specs = Vec::new();
        for item in v.field("conv3d_specs")?.as_array().unwrap_or(&[]) {
            let a = item
                .as_array()
                .ok_or_else(|| Error::data("conv3d spec must be an array"))?;
            if a.len() != 4 {
                return Err(Error::data("conv3d spec must be [out, kd, kh, kw]"));
            }
            conv3d_specs.push(Conv3dSpec::new(
                a[0].as_usize().unwrap_or(0),
                a[1].as_usize().unwrap_or(0),
                a[2].as_usize().unwrap_or(0),
                a[3].as_usize().unwrap_or(0),
            ));
        }
        let pair = |name: &str| -> Result<(usize, usize)> {
            let a = v
                .field(name)?
                .as_array()
                .ok_or_else(|| Error::data(format!("{name} must be an array")))?;
            if a.len() != 2 {
                return Err(Error::data(format!("{name} must be [out, k]")));
            }
            Ok((a[0].as_usize().unwrap_or(0), a[1].as_usize().unwrap_or(0)))
        };
        let mut fc_dims = Vec::new();
        for item in v.field("fc_dims")?.as_array().unwrap_or(&[]) {
            fc_dims.push(
                item.as_usize()
                    .ok_or_else(|| Error::data("fc_dims entries must be integers"))?,
            );
        }
        let cfg = SeHybridSnConfig {
            window: usize_field("window")?,
            pca_k: usize_field("pca_k")?,
            num_classes: usize_field("num_classes")?,
            conv3d_specs,
            conv2d_spec: pair("conv2d_spec")?,
            sep_conv_spec: pair("sep_conv_spec")?,
            se_reduction: usize_field("se_reduction")?,
            fc_dims,
            dropout_rate: v
                .field("dropout_rate")?
                .as_f64()
                .ok_or_else(|| Error::data("dropout_rate must be a number"))?,
            seed: v
                .field("seed")?
                .as_u64()
                .ok_or_else(|| Error::data("seed must be an unsigned integer"))?,
            se_enabled: matches!(v.field("se_enabled")?, json::Value::Bool(true)),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Baseline HybridSN configuration: three 3D convolutions, one 2D
/// convolution, classifier head; no attention, no dense reuse.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridSnConfig {
    pub window: usize,
    pub pca_k: usize,
    pub num_classes: usize,
    pub conv3d_specs: Vec<Conv3dSpec>,
    pub conv2d_spec: (usize, usize),
    pub fc_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl HybridSnConfig {
    pub fn default_for(num_classes: usize, window: usize, pca_k: usize, seed: u64) -> Self {
        HybridSnConfig {
            window,
            pca_k,
            num_classes,
            conv3d_specs: vec![
                Conv3dSpec::new(8, 7, 3, 3),
                Conv3dSpec::new(16, 5, 3, 3),
                Conv3dSpec::new(32, 3, 3, 3),
            ],
            conv2d_spec: (64, 3),
            fc_dims: vec![256, 128, num_classes],
            dropout_rate: 0.4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::usage("window must be odd"));
        }
        if self.conv3d_specs.len() != 3 {
            return Err(Error::usage("baseline uses exactly 3 3D convolutions"));
        }
        if self.fc_dims.last() != Some(&self.num_classes) {
            return Err(Error::usage("fc_dims must end in num_classes"));
        }
        BlockPlan::for_baseline(self).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        let mut w = Writer::new();
        w.begin_object()
            .key("window")
            .uint(self.window as u64)
            .key("pca_k")
            .uint(self.pca_k as u64)
            .key("num_classes")
            .uint(self.num_classes as u64)
            .key("conv3d_specs")
            .begin_array();
        for s in &self.conv3d_specs {
            w.begin_array()
                .uint(s.out_channels as u64)
                .uint(s.kd as u64)
                .uint(s.kh as u64)
                .uint(s.kw as u64)
                .end_array();
        }
        w.end_array()
            .key("conv2d_spec")
            .begin_array()
            .uint(self.conv2d_spec.0 as u64)
            .uint(self.conv2d_spec.1 as u64)
            .end_array()
            .key("fc_dims")
            .begin_array();
        for &d in &self.fc_dims {
            w.uint(d as u64);
        }
        w.end_array()
            .key("dropout_rate")
            .float(self.dropout_rate)
            .key("seed")
            .uint(self.seed)
            .end_object();
        w.finish()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v = json::parse(text)?;
        let usize_field = |name: &str| -> Result<usize> {
            v.field(name)?
                .as_usize()
                .ok_or_else(|| Error::data(format!("config field '{name}' must be an integer")))
        };
        let mut conv3d_specs = Vec::new();
        for item in v.field("conv3d_specs")?.as_array().unwrap_or(&[]) {
            let a = item
                .as_array()
                .ok_or_else(|| Error::data("conv3d spec must be an array"))?;
            conv3d_specs.push(Conv3dSpec::new(
                a[0].as_usize().unwrap_or(0),
                a[1].as_usize().unwrap_or(0),
                a[2].as_usize().unwrap_or(0),
                a[3].as_usize().unwrap_or(0),
            ));
        }
        let a = v
            .field("conv2d_spec")?
            .as_array()
            .ok_or_else(|| Error::data("conv2d_spec must be an array"))?;
        let mut fc_dims = Vec::new();
        for item in v.field("fc_dims")?.as_array().unwrap_or(&[]) {
            fc_dims.push(item.as_usize().unwrap_or(0));
        }
        let cfg = HybridSnConfig {
            window: usize_field("window")?,
            pca_k: usize_field("pca_k")?,
            num_classes: usize_field("num_classes")?,
            conv3d_specs,
            conv2d_spec: (a[0].as_usize().unwrap_or(0), a[1].as_usize().unwrap_or(0)),
            fc_dims,
            dropout_rate: v
                .field("dropout_rate")?
                .as_f64()
                .ok_or_else(|| Error::data("dropout_rate must be a number"))?,
            seed: v
                .field("seed")?
                .as_u64()
                .ok_or_else(|| Error::data("seed must be an unsigned integer"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolved layer geometry: what every stage consumes and produces.
#[derive(Clone, Debug)]
struct BlockPlan {
    /// Per 3D conv: input channel count.
    conv_in_channels: Vec<usize>,
    /// Per 3D conv: (D, H, W) of its input.
    conv_in_dims: Vec<(usize, usize, usize)>,
    /// Per 3D conv: (D, H, W) of its output.
    conv_out_dims: Vec<(usize, usize, usize)>,
    /// Per 3D conv: merged channel count (kernels x spectral) seen by SE.
    merged_channels: Vec<usize>,
    conv2d_in_channels: usize,
    conv2d_out_hw: (usize, usize),
    sep_out_hw: (usize, usize),
    flatten_dim: usize,
}

impl BlockPlan {
    fn block_geometry(
        window: usize,
        pca_k: usize,
        specs: &[Conv3dSpec],
        dense: bool,
    ) -> Result<(Vec<usize>, Vec<(usize, usize, usize)>, Vec<(usize, usize, usize)>)> {
        let mut conv_in_channels = Vec::new();
        let mut conv_in_dims = Vec::new();
        let mut conv_out_dims = Vec::new();
        let mut dims = (pca_k, window, window);
        let mut channel_sum = 0usize;
        for (l, s) in specs.iter().enumerate() {
            if s.out_channels == 0 {
                return Err(Error::usage(format!("3D conv {l} has zero output channels")));
            }
            for k in [s.kd, s.kh, s.kw] {
                if k == 0 || k % 2 == 0 {
                    return Err(Error::usage(format!(
                        "3D conv {l} kernel extents must be odd, got {}x{}x{}",
                        s.kd, s.kh, s.kw
                    )));
                }
            }
            let in_channels = if l == 0 {
                1
            } else if dense {
                channel_sum
            } else {
                specs[l - 1].out_channels
            };
            if s.kd > dims.0 {
                return Err(Error::usage(format!(
                    "3D conv {l}: spectral kernel {} larger than remaining depth {}",
                    s.kd, dims.0
                )));
            }
            if s.kh > dims.1 || s.kw > dims.2 {
                return Err(Error::usage(format!(
                    "3D conv {l}: spatial kernel {}x{} larger than remaining extent {}x{}",
                    s.kh, s.kw, dims.1, dims.2
                )));
            }
            conv_in_channels.push(in_channels);
            conv_in_dims.push(dims);
            dims = (dims.0 - s.kd + 1, dims.1 - s.kh + 1, dims.2 - s.kw + 1);
            conv_out_dims.push(dims);
            channel_sum += s.out_channels;
        }
        Ok((conv_in_channels, conv_in_dims, conv_out_dims))
    }

    fn finish_2d(
        conv_out_dims: &[(usize, usize, usize)],
        last_channels: usize,
        conv2d_spec: (usize, usize),
        sep_spec: Option<(usize, usize)>,
    ) -> Result<(usize, (usize, usize), (usize, usize), usize)> {
        let (d, h, w) = *conv_out_dims.last().unwrap();
        let merged = last_channels * d;
        let (c2, k2) = conv2d_spec;
        if k2 == 0 || k2 % 2 == 0 {
            return Err(Error::usage("2D kernel extents must be odd"));
        }
        if k2 > h || k2 > w {
            return Err(Error::usage(format!(
                "2D conv kernel {k2} larger than remaining spatial extent {h}x{w}"
            )));
        }
        let hw2 = (h - k2 + 1, w - k2 + 1);
        match sep_spec {
            Some((cs, ks)) => {
                if ks == 0 || ks % 2 == 0 {
                    return Err(Error::usage("separable kernel must be odd"));
                }
                // Depthwise stage is same-padded, spatial size unchanged.
                Ok((merged, hw2, hw2, cs * hw2.0 * hw2.1))
            }
            None => Ok((merged, hw2, hw2, c2 * hw2.0 * hw2.1)),
        }
    }

    fn for_se(cfg: &SeHybridSnConfig) -> Result<BlockPlan> {
        let (conv_in_channels, conv_in_dims, conv_out_dims) =
            Self::block_geometry(cfg.window, cfg.pca_k, &cfg.conv3d_specs, true)?;
        let merged_channels: Vec<usize> = cfg
            .conv3d_specs
            .iter()
            .zip(&conv_out_dims)
            .map(|(s, d)| s.out_channels * d.0)
            .collect();
        for (l, &mc) in merged_channels.iter().enumerate() {
            if cfg.se_reduction == 0 || mc % cfg.se_reduction != 0 {
                return Err(Error::usage(format!(
                    "se reduction {} must divide merged channels {mc} after 3D conv {l}",
                    cfg.se_reduction
                )));
            }
        }
        let (conv2d_in_channels, conv2d_out_hw, sep_out_hw, flatten_dim) = Self::finish_2d(
            &conv_out_dims,
            cfg.conv3d_specs.last().unwrap().out_channels,
            cfg.conv2d_spec,
            Some(cfg.sep_conv_spec),
        )?;
        for (what, c) in [("2D conv", cfg.conv2d_spec.0), ("separable conv", cfg.sep_conv_spec.0)] {
            if cfg.se_reduction == 0 || c % cfg.se_reduction != 0 {
                return Err(Error::usage(format!(
                    "se reduction {} must divide {what} channels {c}",
                    cfg.se_reduction
                )));
            }
        }
        Ok(BlockPlan {
            conv_in_channels,
            conv_in_dims,
            conv_out_dims,
            merged_channels,
            conv2d_in_channels,
            conv2d_out_hw,
            sep_out_hw,
            flatten_dim,
        })
    }

    fn for_baseline(cfg: &HybridSnConfig) -> Result<BlockPlan> {
        let (conv_in_channels, conv_in_dims, conv_out_dims) =
            Self::block_geometry(cfg.window, cfg.pca_k, &cfg.conv3d_specs, false)?;
        let (conv2d_in_channels, conv2d_out_hw, sep_out_hw, flatten_dim) = Self::finish_2d(
            &conv_out_dims,
            cfg.conv3d_specs.last().unwrap().out_channels,
            cfg.conv2d_spec,
            None,
        )?;
        Ok(BlockPlan {
            conv_in_channels,
            conv_in_dims,
            conv_out_dims,
            merged_channels: Vec::new(),
            conv2d_in_channels,
            conv2d_out_hw,
            sep_out_hw,
            flatten_dim,
        })
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct SeHybridCache<T: Scalar> {
    batch: usize,
    /// Input to each 3D conv (already concatenated and cropped).
    block_inputs: Vec<Tensor<T>>,
    /// Post-ReLU output of each 3D conv (5D).
    block_relu: Vec<Tensor<T>>,
    block_se: Vec<Option<SeCache<T>>>,
    /// Post-SE output of each 3D conv (5D), the dense-reuse tensors.
    block_out: Vec<Tensor<T>>,
    conv2d_input: Tensor<T>,
    conv2d_relu: Tensor<T>,
    se2a: Option<SeCache<T>>,
    sep_input: Tensor<T>,
    sep_mid: Tensor<T>,
    sep_relu: Tensor<T>,
    se2b: Option<SeCache<T>>,
    fc_inputs: Vec<Tensor<T>>,
    fc_relu: Vec<Tensor<T>>,
    fc_drop_masks: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SeHybridCache<T> {
    /// Inputs of the four 3D convolutions, for dataflow inspection.
    pub fn block_inputs(&self) -> &[Tensor<T>] {
        &self.block_inputs
    }
}

/// Forward-pass switches used by ablation studies and identity checks.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Force every squeeze-excite gate to 1 (the block becomes the
    /// identity map) without touching parameters.
    pub se_identity: bool,
    /// Zero the first 3D convolution's block output after SE, for
    /// information-flow checks on the dense connectivity.
    pub zero_first_conv_output: bool,
}

#[derive(Debug)]
pub struct SeHybridSnModel<T: Scalar> {
    pub config: SeHybridSnConfig,
    plan: BlockPlan,
    conv3d: Vec<Conv3dLayer<T>>,
    se3: Vec<SeBlock<T>>,
    conv2d: Conv2dLayer<T>,
    se2a: Option<SeBlock<T>>,
    sep: DepthwiseSeparableConv2d<T>,
    se2b: Option<SeBlock<T>>,
    fc: Vec<DenseLayer<T>>,
}

impl<T: Scalar> SeHybridSnModel<T> {
    /// Builds the network with deterministic per-layer initialization.
    pub fn build(config: SeHybridSnConfig) -> Result<Self> {
        config.validate()?;
        let plan = BlockPlan::for_se(&config)?;
        let seed = config.seed;
        let mut conv3d = Vec::new();
        let mut se3 = Vec::new();
        for (l, s) in config.conv3d_specs.iter().enumerate() {
            conv3d.push(Conv3dLayer::init(
                plan.conv_in_channels[l],
                s.out_channels,
                s.kd,
                s.kh,
                s.kw,
                seed,
                &format!("conv3d.{l}"),
            )?);
            if config.se_enabled {
                se3.push(SeBlock::init(
                    plan.merged_channels[l],
                    config.se_reduction,
                    seed,
                    &format!("se3.{l}"),
                )?);
            }
        }
        let conv2d = Conv2dLayer::init(
            plan.conv2d_in_channels,
            config.conv2d_spec.0,
            config.conv2d_spec.1,
            config.conv2d_spec.1,
            seed,
            "conv2d",
        )?;
        let sep = DepthwiseSeparableConv2d::init(
            config.conv2d_spec.0,
            config.sep_conv_spec.0,
            config.sep_conv_spec.1,
            seed,
            "sep",
        )?;
        let (se2a, se2b) = if config.se_enabled {
            (
                Some(SeBlock::init(config.conv2d_spec.0, config.se_reduction, seed, "se2a")?),
                Some(SeBlock::init(config.sep_conv_spec.0, config.se_reduction, seed, "se2b")?),
            )
        } else {
            (None, None)
        };
        let mut fc = Vec::new();
        let mut in_dim = plan.flatten_dim;
        for (i, &out_dim) in config.fc_dims.iter().enumerate() {
            fc.push(DenseLayer::init(in_dim, out_dim, seed, &format!("fc.{i}")));
            in_dim = out_dim;
        }
        Ok(SeHybridSnModel {
            config,
            plan,
            conv3d,
            se3,
            conv2d,
            se2a,
            sep,
            se2b,
            fc,
        })
    }

    pub fn conv_layer_count(&self) -> usize {
        self.conv3d.len() + 2
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let s = input.shape();
        let expect = [
            1,
            self.config.pca_k,
            self.config.window,
            self.config.window,
        ];
        if input.rank() != 5 || s[1..] != expect {
            return Err(Error::shape(format!(
                "model input must be (B,1,{},{},{}), got {:?}",
                self.config.pca_k, self.config.window, self.config.window, s
            )));
        }
        Ok(s[0])
    }

    /// Core forward pass. `dropout` enables training-mode dropout with
    /// the given replay key; options control SE/ablation behavior.
    pub fn forward_cached(
        &self,
        input: &Tensor<T>,
        dropout: Option<DropoutKey>,
        options: ForwardOptions,
    ) -> Result<(Tensor<T>, SeHybridCache<T>)> {
        let batch = self.check_input(input)?;
        let n_block = self.conv3d.len();
        let mut block_inputs = Vec::with_capacity(n_block);
        let mut block_relu = Vec::with_capacity(n_block);
        let mut block_se = Vec::with_capacity(n_block);
        let mut block_out: Vec<Tensor<T>> = Vec::with_capacity(n_block);

        for l in 0..n_block {
            let conv_input = if l == 0 {
                input.clone()
            } else {
                let (d, h, w) = self.plan.conv_in_dims[l];
                let mut parts = Vec::with_capacity(l);
                for out in block_out.iter().take(l) {
                    parts.push(center_crop5(out, d, h, w)?);
                }
                let refs: Vec<&Tensor<T>> = parts.iter().collect();
                concat_channels5(&refs)?
            };
            let pre = conv3d_forward(&conv_input, &self.conv3d[l])?;
            let act = relu_forward(&pre);
            let (out, se_cache) = if self.config.se_enabled && !options.se_identity {
                let (n, d) = (
                    self.config.conv3d_specs[l].out_channels,
                    self.plan.conv_out_dims[l].0,
                );
                let merged = reshape_merge_channels(act.clone())?;
                let (gated, cache) = se_forward(&merged, &self.se3[l])?;
                (reshape_split_channels(gated, n, d)?, Some(cache))
            } else {
                (act.clone(), None)
            };
            let out = if options.zero_first_conv_output && l == 0 {
                Tensor::zeros(out.shape())
            } else {
                out
            };
            block_inputs.push(conv_input);
            block_relu.push(act);
            block_se.push(se_cache);
            block_out.push(out);
        }

        let conv2d_input = reshape_merge_channels(block_out.last().unwrap().clone())?;
        let pre2 = conv2d_forward(&conv2d_input, &self.conv2d)?;
        let conv2d_relu = relu_forward(&pre2);
        let (sep_input, se2a_cache) = match (&self.se2a, options.se_identity) {
            (Some(block), false) => {
                let (gated, cache) = se_forward(&conv2d_relu, block)?;
                (gated, Some(cache))
            }
            _ => (conv2d_relu.clone(), None),
        };
        let (sep_pre, sep_mid) = depthwise_separable_forward(&sep_input, &self.sep)?;
        let sep_relu = relu_forward(&sep_pre);
        let (head_in, se2b_cache) = match (&self.se2b, options.se_identity) {
            (Some(block), false) => {
                let (gated, cache) = se_forward(&sep_relu, block)?;
                (gated, Some(cache))
            }
            _ => (sep_relu.clone(), None),
        };

        let mut h = head_in.reshaped(&[batch, self.plan.flatten_dim])?;
        let mut fc_inputs = Vec::with_capacity(self.fc.len());
        let mut fc_relu = Vec::new();
        let mut fc_drop_masks = Vec::new();
        let hidden = self.fc.len() - 1;
        for (i, layer) in self.fc.iter().enumerate() {
            fc_inputs.push(h.clone());
            let pre = dense_forward(&h, layer)?;
            if i < hidden {
                let act = relu_forward(&pre);
                let (dropped, mask) = match dropout {
                    Some(key) => dropout_forward(
                        &act,
                        self.config.dropout_rate,
                        DropoutKey {
                            layer: i as u64,
                            ..key
                        },
                        true,
                    )?,
                    None => (act.clone(), None),
                };
                fc_relu.push(act);
                fc_drop_masks.push(mask);
                h = dropped;
            } else {
                h = pre;
            }
        }

        let cache = SeHybridCache {
            batch,
            block_inputs,
            block_relu,
            block_se,
            block_out,
            conv2d_input,
            conv2d_relu,
            se2a: se2a_cache,
            sep_input,
            sep_mid,
            sep_relu,
            se2b: se2b_cache,
            fc_inputs,
            fc_relu,
            fc_drop_masks,
        };
        Ok((h, cache))
    }

    /// Reverse-mode pass; returns parameter gradients in [`Self::parameters`]
    /// order. Requires a cache produced with the same parameters.
    pub fn backward_cached(
        &self,
        cache: &SeHybridCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        if grad_logits.shape() != [cache.batch, self.config.num_classes] {
            return Err(Error::shape("backward: grad_logits shape mismatch"));
        }
        let n_block = self.conv3d.len();
        let se_on = self.config.se_enabled;

        let mut fc_w_grads: Vec<Tensor<T>> = Vec::with_capacity(self.fc.len());
        let mut fc_b_grads: Vec<Tensor<T>> = Vec::with_capacity(self.fc.len());
        let hidden = self.fc.len() - 1;
        let mut grad = grad_logits.clone();
        for i in (0..self.fc.len()).rev() {
            if i < hidden {
                grad = dropout_backward(cache.fc_drop_masks[i].as_ref(), &grad)?;
                grad = relu_backward(&cache.fc_relu[i], &grad)?;
            }
            let (gin, gw, gb) = dense_backward(&cache.fc_inputs[i], &self.fc[i], &grad)?;
            fc_w_grads.push(gw);
            fc_b_grads.push(gb);
            grad = gin;
        }
        fc_w_grads.reverse();
        fc_b_grads.reverse();

        // Back through flatten into the 2D stage.
        let hw = self.plan.sep_out_hw;
        let sep_out_c = self.config.sep_conv_spec.0;
        let mut grad4 = grad.reshaped(&[cache.batch, sep_out_c, hw.0, hw.1])?;

        let mut se2b_grads = None;
        if se_on {
            let (gin, grads) = se_backward(
                &cache.sep_relu,
                self.se2b.as_ref().unwrap(),
                cache.se2b.as_ref().unwrap(),
                &grad4,
            )?;
            grad4 = gin;
            se2b_grads = Some(grads);
        }
        grad4 = relu_backward(&cache.sep_relu, &grad4)?;
        let (mut grad4, sep_dw_g, sep_pw_g, sep_pb_g) =
            depthwise_separable_backward(&cache.sep_input, &self.sep, &cache.sep_mid, &grad4)?;

        let mut se2a_grads = None;
        if se_on {
            let (gin, grads) = se_backward(
                &cache.conv2d_relu,
                self.se2a.as_ref().unwrap(),
                cache.se2a.as_ref().unwrap(),
                &grad4,
            )?;
            grad4 = gin;
            se2a_grads = Some(grads);
        }
        grad4 = relu_backward(&cache.conv2d_relu, &grad4)?;
        let (grad_merged, conv2d_w_g, conv2d_b_g) =
            conv2d_backward(&cache.conv2d_input, &self.conv2d, &grad4)?;

        // Gradient w.r.t. each block output accumulates here (5D).
        let mut out_grads: Vec<Tensor<T>> = cache
            .block_out
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        {
            let last = self.config.conv3d_specs[n_block - 1].out_channels;
            let d = self.plan.conv_out_dims[n_block - 1].0;
            let g5 = reshape_split_channels(grad_merged, last, d)?;
            out_grads[n_block - 1].add_scaled(&g5, T::ONE)?;
        }

        let mut conv_w_grads: Vec<Tensor<T>> = Vec::with_capacity(n_block);
        let mut conv_b_grads: Vec<Tensor<T>> = Vec::with_capacity(n_block);
        let mut se3_grads = Vec::new();
        for l in (0..n_block).rev() {
            let mut g = std::mem::replace(&mut out_grads[l], Tensor::zeros(&[1]));
            if se_on {
                let (n, d) = (
                    self.config.conv3d_specs[l].out_channels,
                    self.plan.conv_out_dims[l].0,
                );
                let merged_in = reshape_merge_channels(cache.block_relu[l].clone())?;
                let g_merged = reshape_merge_channels(g)?;
                let (gin, grads) = se_backward(
                    &merged_in,
                    &self.se3[l],
                    cache.block_se[l].as_ref().unwrap(),
                    &g_merged,
                )?;
                se3_grads.push(grads);
                g = reshape_split_channels(gin, n, d)?;
            }
            let g = relu_backward(&cache.block_relu[l], &g)?;
            let (gin, gw, gb) = conv3d_backward(&cache.block_inputs[l], &self.conv3d[l], &g)?;
            conv_w_grads.push(gw);
            conv_b_grads.push(gb);

            if l > 0 {
                // Split the concatenated-input gradient back onto the
                // earlier outputs, un-cropping into their full extents.
                let channels: Vec<usize> = self.config.conv3d_specs[..l]
                    .iter()
                    .map(|s| s.out_channels)
                    .collect();
                let parts = concat_channels5_backward(&gin, &channels)?;
                for (j, part) in parts.into_iter().enumerate() {
                    center_crop5_backward(&mut out_grads[j], &part)?;
                }
            }
        }
        conv_w_grads.reverse();
        conv_b_grads.reverse();
        se3_grads.reverse();

        // Assemble in parameters() order.
        let mut grads: Vec<Tensor<T>> = Vec::new();
        for l in 0..n_block {
            grads.push(conv_w_grads[l].clone());
            grads.push(conv_b_grads[l].clone());
            if se_on {
                let g = &se3_grads[l];
                grads.push(g.w1.clone());
                grads.push(g.b1.clone());
                grads.push(g.w2.clone());
                grads.push(g.b2.clone());
            }
        }
        grads.push(conv2d_w_g);
        grads.push(conv2d_b_g);
        if let Some(g) = se2a_grads {
            grads.push(g.w1);
            grads.push(g.b1);
            grads.push(g.w2);
            grads.push(g.b2);
        }
        grads.push(sep_dw_g);
        grads.push(sep_pw_g);
        grads.push(sep_pb_g);
        if let Some(g) = se2b_grads {
            grads.push(g.w1);
            grads.push(g.b1);
            grads.push(g.w2);
            grads.push(g.b2);
        }
        for i in 0..self.fc.len() {
            grads.push(fc_w_grads[i].clone());
            grads.push(fc_b_grads[i].clone());
        }
        Ok(grads)
    }
}

/// Common surface of the two architectures: forward, backward, and a
/// named, ordered parameter list (the checkpoint and optimizer contract).
pub trait Network<T: Scalar> {
    type Cache;

    fn variant(&self) -> ModelVariant;
    fn num_classes(&self) -> usize;
    fn window(&self) -> usize;
    fn input_bands(&self) -> usize;
    fn config_json(&self) -> String;

    /// Inference-mode forward (dropout off, caches discarded).
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>>;
    /// Training-mode forward with dropout keyed for exact replay.
    fn forward_train(&self, input: &Tensor<T>, key: DropoutKey) -> Result<(Tensor<T>, Self::Cache)>;
    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>>;

    fn parameter_names(&self) -> Vec<String>;
    fn parameters(&self) -> Vec<&Tensor<T>>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Scalar> Network<T> for SeHybridSnModel<T> {
    type Cache = SeHybridCache<T>;

    fn variant(&self) -> ModelVariant {
        ModelVariant::SeHybridSn
    }
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
    fn window(&self) -> usize {
        self.config.window
    }
    fn input_bands(&self) -> usize {
        self.config.pca_k
    }
    fn config_json(&self) -> String {
        self.config.to_json()
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cached(input, None, ForwardOptions::default())
            .map(|(logits, _)| logits)
    }

    fn forward_train(&self, input: &Tensor<T>, key: DropoutKey) -> Result<(Tensor<T>, Self::Cache)> {
        self.forward_cached(input, Some(key), ForwardOptions::default())
    }

    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.backward_cached(cache, grad_logits)
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.conv3d.len() {
            names.push(format!("conv3d.{l}.weights"));
            names.push(format!("conv3d.{l}.bias"));
            if self.config.se_enabled {
                for part in ["w1", "b1", "w2", "b2"] {
                    names.push(format!("se3.{l}.{part}"));
                }
            }
        }
        names.push("conv2d.weights".into());
        names.push("conv2d.bias".into());
        if self.config.se_enabled {
            for part in ["w1", "b1", "w2", "b2"] {
                names.push(format!("se2a.{part}"));
            }
        }
        names.push("sep.depthwise".into());
        names.push("sep.pointwise_w".into());
        names.push("sep.pointwise_b".into());
        if self.config.se_enabled {
            for part in ["w1", "b1", "w2", "b2"] {
                names.push(format!("se2b.{part}"));
            }
        }
        for i in 0..self.fc.len() {
            names.push(format!("fc.{i}.weights"));
            names.push(format!("fc.{i}.bias"));
        }
        names
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut params: Vec<&Tensor<T>> = Vec::new();
        for l in 0..self.conv3d.len() {
            params.push(&self.conv3d[l].weights);
            params.push(&self.conv3d[l].bias);
            if self.config.se_enabled {
                let se = &self.se3[l];
                params.push(&se.w1);
                params.push(&se.b1);
                params.push(&se.w2);
                params.push(&se.b2);
            }
        }
        params.push(&self.conv2d.weights);
        params.push(&self.conv2d.bias);
        if let Some(se) = &self.se2a {
            params.push(&se.w1);
            params.push(&se.b1);
            params.push(&se.w2);
            params.push(&se.b2);
        }
        params.push(&self.sep.depthwise);
        params.push(&self.sep.pointwise_w);
        params.push(&self.sep.pointwise_b);
        if let Some(se) = &self.se2b {
            params.push(&se.w1);
            params.push(&se.b1);
            params.push(&se.w2);
            params.push(&se.b2);
        }
        for layer in &self.fc {
            params.push(&layer.weights);
            params.push(&layer.bias);
        }
        params
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let se_on = self.config.se_enabled;
        let mut params: Vec<&mut Tensor<T>> = Vec::new();
        for (conv, se) in self.conv3d.iter_mut().zip(
            self.se3
                .iter_mut()
                .map(Some)
                .chain(std::iter::repeat_with(|| None)),
        ) {
            params.push(&mut conv.weights);
            params.push(&mut conv.bias);
            if se_on {
                let se = se.expect("se block present when enabled");
                params.push(&mut se.w1);
                params.push(&mut se.b1);
                params.push(&mut se.w2);
                params.push(&mut se.b2);
            }
        }
        params.push(&mut self.conv2d.weights);
        params.push(&mut self.conv2d.bias);
        if let Some(se) = &mut self.se2a {
            params.push(&mut se.w1);
            params.push(&mut se.b1);
            params.push(&mut se.w2);
            params.push(&mut se.b2);
        }
        params.push(&mut self.sep.depthwise);
        params.push(&mut self.sep.pointwise_w);
        params.push(&mut self.sep.pointwise_b);
        if let Some(se) = &mut self.se2b {
            params.push(&mut se.w1);
            params.push(&mut se.b1);
            params.push(&mut se.w2);
            params.push(&mut se.b2);
        }
        for layer in &mut self.fc {
            params.push(&mut layer.weights);
            params.push(&mut layer.bias);
        }
        params
    }
}

/// Cache of the baseline network's forward pass.
pub struct HybridCache<T: Scalar> {
    batch: usize,
    conv_inputs: Vec<Tensor<T>>,
    conv_relu: Vec<Tensor<T>>,
    conv2d_input: Tensor<T>,
    conv2d_relu: Tensor<T>,
    fc_inputs: Vec<Tensor<T>>,
    fc_relu: Vec<Tensor<T>>,
    fc_drop_masks: Vec<Option<Tensor<T>>>,
}

#[derive(Debug)]
pub struct HybridSnBaseline<T: Scalar> {
    pub config: HybridSnConfig,
    plan: BlockPlan,
    conv3d: Vec<Conv3dLayer<T>>,
    conv2d: Conv2dLayer<T>,
    fc: Vec<DenseLayer<T>>,
}

impl<T: Scalar> HybridSnBaseline<T> {
    pub fn build(config: HybridSnConfig) -> Result<Self> {
        config.validate()?;
        let plan = BlockPlan::for_baseline(&config)?;
        let seed = config.seed;
        let mut conv3d = Vec::new();
        for (l, s) in config.conv3d_specs.iter().enumerate() {
            conv3d.push(Conv3dLayer::init(
                plan.conv_in_channels[l],
                s.out_channels,
                s.kd,
                s.kh,
                s.kw,
                seed,
                &format!("conv3d.{l}"),
            )?);
        }
        let conv2d = Conv2dLayer::init(
            plan.conv2d_in_channels,
            config.conv2d_spec.0,
            config.conv2d_spec.1,
            config.conv2d_spec.1,
            seed,
            "conv2d",
        )?;
        let mut fc = Vec::new();
        let mut in_dim = plan.flatten_dim;
        for (i, &out_dim) in config.fc_dims.iter().enumerate() {
            fc.push(DenseLayer::init(in_dim, out_dim, seed, &format!("fc.{i}")));
            in_dim = out_dim;
        }
        Ok(HybridSnBaseline {
            config,
            plan,
            conv3d,
            conv2d,
            fc,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn run(
        &self,
        input: &Tensor<T>,
        dropout: Option<DropoutKey>,
    ) -> Result<(Tensor<T>, HybridCache<T>)> {
        let s = input.shape();
        if input.rank() != 5
            || s[1] != 1
            || s[2] != self.config.pca_k
            || s[3] != self.config.window
            || s[4] != self.config.window
        {
            return Err(Error::shape(format!(
                "baseline input must be (B,1,{},{},{}), got {:?}",
                self.config.pca_k, self.config.window, self.config.window, s
            )));
        }
        let batch = s[0];
        let mut h5 = input.clone();
        let mut conv_inputs = Vec::new();
        let mut conv_relu = Vec::new();
        for layer in &self.conv3d {
            conv_inputs.push(h5.clone());
            let pre = conv3d_forward(&h5, layer)?;
            let act = relu_forward(&pre);
            conv_relu.push(act.clone());
            h5 = act;
        }
        let conv2d_input = reshape_merge_channels(h5)?;
        let pre2 = conv2d_forward(&conv2d_input, &self.conv2d)?;
        let conv2d_relu = relu_forward(&pre2);

        let mut h = conv2d_relu.clone().reshaped(&[batch, self.plan.flatten_dim])?;
        let mut fc_inputs = Vec::new();
        let mut fc_relu = Vec::new();
        let mut fc_drop_masks = Vec::new();
        let hidden = self.fc.len() - 1;
        for (i, layer) in self.fc.iter().enumerate() {
            fc_inputs.push(h.clone());
            let pre = dense_forward(&h, layer)?;
            if i < hidden {
                let act = relu_forward(&pre);
                let (dropped, mask) = match dropout {
                    Some(key) => dropout_forward(
                        &act,
                        self.config.dropout_rate,
                        DropoutKey {
                            layer: i as u64,
                            ..key
                        },
                        true,
                    )?,
                    None => (act.clone(), None),
                };
                fc_relu.push(act);
                fc_drop_masks.push(mask);
                h = dropped;
            } else {
                h = pre;
            }
        }
        Ok((
            h,
            HybridCache {
                batch,
                conv_inputs,
                conv_relu,
                conv2d_input,
                conv2d_relu,
                fc_inputs,
                fc_relu,
                fc_drop_masks,
            },
        ))
    }
}

impl<T: Scalar> Network<T> for HybridSnBaseline<T> {
    type Cache = HybridCache<T>;

    fn variant(&self) -> ModelVariant {
        ModelVariant::HybridSn
    }
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
    fn window(&self) -> usize {
        self.config.window
    }
    fn input_bands(&self) -> usize {
        self.config.pca_k
    }
    fn config_json(&self) -> String {
        self.config.to_json()
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(input, None).map(|(l, _)| l)
    }

    fn forward_train(&self, input: &Tensor<T>, key: DropoutKey) -> Result<(Tensor<T>, Self::Cache)> {
        self.run(input, Some(key))
    }

    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if grad_logits.shape() != [cache.batch, self.config.num_classes] {
            return Err(Error::shape("baseline backward: grad_logits shape mismatch"));
        }
        let mut fc_w_grads = Vec::new();
        let mut fc_b_grads = Vec::new();
        let hidden = self.fc.len() - 1;
        let mut grad = grad_logits.clone();
        for i in (0..self.fc.len()).rev() {
            if i < hidden {
                grad = dropout_backward(cache.fc_drop_masks[i].as_ref(), &grad)?;
                grad = relu_backward(&cache.fc_relu[i], &grad)?;
            }
            let (gin, gw, gb) = dense_backward(&cache.fc_inputs[i], &self.fc[i], &grad)?;
            fc_w_grads.push(gw);
            fc_b_grads.push(gb);
            grad = gin;
        }
        fc_w_grads.reverse();
        fc_b_grads.reverse();

        let hw = self.plan.conv2d_out_hw;
        let mut grad4 = grad.reshaped(&[cache.batch, self.config.conv2d_spec.0, hw.0, hw.1])?;
        grad4 = relu_backward(&cache.conv2d_relu, &grad4)?;
        let (grad_merged, conv2d_w_g, conv2d_b_g) =
            conv2d_backward(&cache.conv2d_input, &self.conv2d, &grad4)?;

        let last = self.config.conv3d_specs.last().unwrap().out_channels;
        let d_last = self.plan.conv_out_dims.last().unwrap().0;
        let mut g5 = reshape_split_channels(grad_merged, last, d_last)?;

        let mut conv_w_grads = Vec::new();
        let mut conv_b_grads = Vec::new();
        for l in (0..self.conv3d.len()).rev() {
            g5 = relu_backward(&cache.conv_relu[l], &g5)?;
            let (gin, gw, gb) = conv3d_backward(&cache.conv_inputs[l], &self.conv3d[l], &g5)?;
            conv_w_grads.push(gw);
            conv_b_grads.push(gb);
            g5 = gin;
        }
        conv_w_grads.reverse();
        conv_b_grads.reverse();

        let mut grads = Vec::new();
        for l in 0..self.conv3d.len() {
            grads.push(conv_w_grads[l].clone());
            grads.push(conv_b_grads[l].clone());
        }
        grads.push(conv2d_w_g);
        grads.push(conv2d_b_g);
        for i in 0..self.fc.len() {
            grads.push(fc_w_grads[i].clone());
            grads.push(fc_b_grads[i].clone());
        }
        Ok(grads)
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.conv3d.len() {
            names.push(format!("conv3d.{l}.weights"));
            names.push(format!("conv3d.{l}.bias"));
        }
        names.push("conv2d.weights".into());
        names.push("conv2d.bias".into());
        for i in 0..self.fc.len() {
            names.push(format!("fc.{i}.weights"));
            names.push(format!("fc.{i}.bias"));
        }
        names
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut params: Vec<&Tensor<T>> = Vec::new();
        for layer in &self.conv3d {
            params.push(&layer.weights);
            params.push(&layer.bias);
        }
        params.push(&self.conv2d.weights);
        params.push(&self.conv2d.bias);
        for layer in &self.fc {
            params.push(&layer.weights);
            params.push(&layer.bias);
        }
        params
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut params: Vec<&mut Tensor<T>> = Vec::new();
        for layer in &mut self.conv3d {
            params.push(&mut layer.weights);
            params.push(&mut layer.bias);
        }
        params.push(&mut self.conv2d.weights);
        params.push(&mut self.conv2d.bias);
        for layer in &mut self.fc {
            params.push(&mut layer.weights);
            params.push(&mut layer.bias);
        }
        params
    }
}

/// Either architecture behind one type, for checkpoint loading and the
/// CLI.
#[derive(Debug)]
pub enum AnyModel<T: Scalar> {
    Se(SeHybridSnModel<T>),
    Baseline(HybridSnBaseline<T>),
}

pub enum AnyCache<T: Scalar> {
    Se(SeHybridCache<T>),
    Baseline(HybridCache<T>),
}

impl<T: Scalar> Network<T> for AnyModel<T> {
    type Cache = AnyCache<T>;

    fn variant(&self) -> ModelVariant {
        match self {
            AnyModel::Se(m) => m.variant(),
            AnyModel::Baseline(m) => m.variant(),
        }
    }
    fn num_classes(&self) -> usize {
        match self {
            AnyModel::Se(m) => m.num_classes(),
            AnyModel::Baseline(m) => m.num_classes(),
        }
    }
    fn window(&self) -> usize {
        match self {
            AnyModel::Se(m) => m.window(),
            AnyModel::Baseline(m) => m.window(),
        }
    }
    fn input_bands(&self) -> usize {
        match self {
            AnyModel::Se(m) => m.input_bands(),
            AnyModel::Baseline(m) => m.input_bands(),
        }
    }
    fn config_json(&self) -> String {
        match self {
            AnyModel::Se(m) => m.config_json(),
            AnyModel::Baseline(m) => m.config_json(),
        }
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            AnyModel::Se(m) => m.forward(input),
            AnyModel::Baseline(m) => m.forward(input),
        }
    }
    fn forward_train(&self, input: &Tensor<T>, key: DropoutKey) -> Result<(Tensor<T>, Self::Cache)> {
        match self {
            AnyModel::Se(m) => m.forward_train(input, key).map(|(l, c)| (l, AnyCache::Se(c))),
            AnyModel::Baseline(m) => m
                .forward_train(input, key)
                .map(|(l, c)| (l, AnyCache::Baseline(c))),
        }
    }
    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        match (self, cache) {
            (AnyModel::Se(m), AnyCache::Se(c)) => m.backward(c, grad_logits),
            (AnyModel::Baseline(m), AnyCache::Baseline(c)) => m.backward(c, grad_logits),
            _ => Err(Error::shape("cache does not belong to this model")),
        }
    }
    fn parameter_names(&self) -> Vec<String> {
        match self {
            AnyModel::Se(m) => m.parameter_names(),
            AnyModel::Baseline(m) => m.parameter_names(),
        }
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        match self {
            AnyModel::Se(m) => m.parameters(),
            AnyModel::Baseline(m) => m.parameters(),
        }
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            AnyModel::Se(m) => m.parameters_mut(),
            AnyModel::Baseline(m) => m.parameters_mut(),
        }
    }
}

/// Builds the (B, 1, D, H, W) input tensor for a batch of pixel centers.
pub fn batch_from_pixels<T: Scalar>(
    cube: &HyperspectralCube,
    pixels: &[(usize, usize)],
    window: usize,
) -> Result<Tensor<T>> {
    let d = cube.bands;
    let per = d * window * window;
    let mut chw = vec![0.0f64; per];
    let mut out = Tensor::zeros(&[pixels.len(), 1, d, window, window]);
    for (i, &(r, c)) in pixels.iter().enumerate() {
        let patch = extract_patch(cube, r, c, window)?;
        patch_into_chw(&patch, &mut chw);
        let dst = &mut out.data_mut()[i * per..(i + 1) * per];
        for (o, &v) in dst.iter_mut().zip(chw.iter()) {
            *o = T::from_f64(v);
        }
    }
    Ok(out)
}

/// Classifies a whole scene patch-wise. Labeled pixels (or all pixels
/// when `classify_all`) receive the argmax class; the rest stay 0.
/// Patches are sharded over workers in fixed chunks, so the assembled
/// grid is identical for any thread count.
pub fn predict_scene<T: Scalar, N: Network<T> + Sync>(
    model: &N,
    cube: &HyperspectralCube,
    gt: &GroundTruthMap,
    classify_all: bool,
) -> Result<GroundTruthMap> {
    if cube.height != gt.height || cube.width != gt.width {
        return Err(Error::shape("cube and ground truth dimensions differ"));
    }
    if cube.bands != model.input_bands() {
        return Err(Error::shape(format!(
            "cube has {} bands but the model expects {}",
            cube.bands,
            model.input_bands()
        )));
    }
    if !model.parameters().iter().all(|p| p.all_finite()) {
        return Err(Error::numeric("model parameters contain non-finite values"));
    }
    let mut targets = Vec::new();
    for r in 0..gt.height {
        for c in 0..gt.width {
            if classify_all || gt.label(r, c) != 0 {
                targets.push((r, c));
            }
        }
    }
    let window = model.window();
    let chunk = 64;
    let chunk_preds = parallel::map_chunks(targets.len(), chunk, |_, range| {
        let pixels = &targets[range];
        let batch = batch_from_pixels::<T>(cube, pixels, window)?;
        let logits = model.forward(&batch)?;
        let k = model.num_classes();
        let mut preds = Vec::with_capacity(pixels.len());
        for i in 0..pixels.len() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push((best + 1) as u16);
        }
        Ok::<Vec<u16>, Error>(preds)
    });
    let mut labels = vec![0u16; gt.height * gt.width];
    let mut idx = 0usize;
    for chunk in chunk_preds {
        for p in chunk? {
            let (r, c) = targets[idx];
            labels[r * gt.width + c] = p;
            idx += 1;
        }
    }
    GroundTruthMap::new(gt.height, gt.width, labels)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SEHYBSN1";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint: magic + version, variant tag, config echo, every
/// parameter as name/shape/f64-little-endian data, and a trailing
/// content digest.
pub fn save_checkpoint<T: Scalar, N: Network<T>>(model: &N, path: &Path) -> Result<()> {
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(CHECKPOINT_MAGIC);
    body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let tag = model.variant().tag().as_bytes();
    body.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    body.extend_from_slice(tag);
    let cfg = model.config_json();
    body.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    body.extend_from_slice(cfg.as_bytes());

    let names = model.parameter_names();
    let params = model.parameters();
    body.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in names.iter().zip(&params) {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            body.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            body.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    let digest = fnv1a64(&body);
    body.extend_from_slice(&digest.to_le_bytes());

    let mut file = fs::File::create(path)
        .map_err(|e| Error::data(format!("creating {}: {e}", path.display())))?;
    file.write_all(&body)?;
    Ok(())
}

struct CheckpointReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> CheckpointReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data("checkpoint truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        Ok(String::from_utf8_lossy(self.take(len)?).into_owned())
    }
}

/// Reads a checkpoint back into a model. The digest is verified before
/// any parameter is accepted; shape mismatches name the tensor.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<AnyModel<T>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(Error::data("checkpoint truncated"));
    }
    let (body, digest_bytes) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(digest_bytes.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::data("checkpoint digest mismatch (file corrupted or truncated)"));
    }

    let mut r = CheckpointReader { bytes: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let variant = ModelVariant::from_tag(&r.string()?)?;
    let cfg_json = r.string()?;
    let mut model: AnyModel<T> = match variant {
        ModelVariant::SeHybridSn => {
            AnyModel::Se(SeHybridSnModel::build(SeHybridSnConfig::from_json(&cfg_json)?)?)
        }
        ModelVariant::HybridSn => {
            AnyModel::Baseline(HybridSnBaseline::build(HybridSnConfig::from_json(&cfg_json)?)?)
        }
    };

    let count = r.u32()? as usize;
    let expected_names = model.parameter_names();
    if count != expected_names.len() {
        return Err(Error::data(format!(
            "checkpoint holds {count} tensors, model expects {}",
            expected_names.len()
        )));
    }
    let mut loaded: Vec<(String, Tensor<T>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let raw = r.take(8)?;
            data.push(T::from_f64(f64::from_le_bytes(raw.try_into().unwrap())));
        }
        loaded.push((name, Tensor::from_vec(&shape, data)?));
    }

    {
        let mut params = model.parameters_mut();
        for (i, (name, tensor)) in loaded.into_iter().enumerate() {
            if name != expected_names[i] {
                return Err(Error::data(format!(
                    "checkpoint tensor '{name}' where '{}' was expected",
                    expected_names[i]
                )));
            }
            if params[i].shape() != tensor.shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor '{name}' has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    params[i].shape()
                )));
            }
            *params[i] = tensor;
        }
    }
    Ok(model)
}
