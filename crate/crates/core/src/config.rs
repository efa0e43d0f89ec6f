//! Run configuration: one JSON document with a versioned schema.
//!
//! Every field must be present; unknown keys are rejected. [`Config::vod`]
//! and [`Config::tj4d`] are the dataset presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassList, RangeSpec, Schema};
use crate::error::{Error, Result};
use crate::eval::{ApPoints, Corridor, EvalConfig, IouKind};
use crate::fusion::{FusionKind, Placement};
use crate::nn::pyramid::SyntheticPyramidSpec;
use crate::nn::FocalParams;
use crate::pillar::PillarBackboneConfig;
use crate::voxel::VoxelGridSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub image: ImageConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaName {
    Vod7,
    Tj4d5,
}

impl SchemaName {
    pub fn schema(self) -> Schema {
        match self {
            SchemaName::Vod7 => Schema::Vod7,
            SchemaName::Tj4d5 => Schema::Tj4d5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root with `points/`, `calib/`, `labels/`. `None` runs on a
    /// synthetic scene drawn from `seed`.
    pub root: Option<PathBuf>,
    /// Frames to process; empty means every frame under `root`.
    pub frames: Vec<String>,
    pub schema: SchemaName,
    pub classes: Vec<String>,
    /// Directory of `<frame>.txt` detection files for `eval`.
    pub detections: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_boxes: usize,
    pub n_points: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub voxel_range: RangeSpec,
    pub voxel_cell: [f64; 3],
    pub pillar_range: RangeSpec,
    pub pillar_cell: [f64; 2],
}

impl GridConfig {
    pub fn voxel_spec(&self) -> Result<VoxelGridSpec> {
        VoxelGridSpec::new(self.voxel_range, self.voxel_cell).map_err(as_config)
    }

    pub fn pillar_spec(&self) -> Result<VoxelGridSpec> {
        VoxelGridSpec::pillar(self.pillar_range, self.pillar_cell).map_err(as_config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Voxel,
    Pillar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub fusion: FusionKind,
    /// Number of leading blocks that fuse image features.
    pub n_fusion: usize,
    pub placement: Placement,
    /// Deformable samples per pyramid level.
    pub n_samples: usize,
    pub voxel_channels: [usize; 6],
    pub channel_multiplier: usize,
    pub n_residual: usize,
    pub pillar: PillarBackboneConfig,
    pub semantic_head: bool,
    pub zero_out_of_view: bool,
    /// Seed for parameter initialization; defaults to the top-level seed.
    pub init_seed: Option<u64>,
    /// Weights container to load instead of seeded initialization.
    pub weights: Option<PathBuf>,
    /// Boxes emitted verbatim by the pass-through detection head, in the
    /// label text format with a trailing score.
    pub stub_detections: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl LossConfig {
    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.focal_alpha,
            gamma: self.focal_gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub image_size: (u32, u32),
    pub levels: usize,
    pub channels: usize,
    pub base_stride: u32,
}

impl ImageConfig {
    pub fn synthetic_spec(&self) -> SyntheticPyramidSpec {
        SyntheticPyramidSpec {
            image_size: self.image_size,
            levels: self.levels,
            channels: self.channels,
            base_stride: self.base_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Class name → IoU threshold.
    pub iou_thresholds: BTreeMap<String, f64>,
    pub ap_points: Vec<ApPoints>,
    pub iou: IouKind,
    pub corridor: Corridor,
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn range(min: [f64; 3], max: [f64; 3]) -> RangeSpec {
    RangeSpec { min, max }
}

impl Config {
    pub fn vod() -> Self {
        let r = range([0.0, -25.6, -3.0], [51.2, 25.6, 2.0]);
        Self {
            version: CONFIG_VERSION,
            seed: 7,
            data: DataConfig {
                root: None,
                frames: Vec::new(),
                schema: SchemaName::Vod7,
                classes: ["Car", "Pedestrian", "Cyclist"].map(String::from).to_vec(),
                detections: None,
                synthetic: SyntheticConfig {
                    n_boxes: 6,
                    n_points: 600,
                    n_frames: 1,
                },
            },
            grid: GridConfig {
                voxel_range: r,
                voxel_cell: [0.05, 0.05, 0.125],
                pillar_range: r,
                pillar_cell: [0.16, 0.16],
            },
            model: ModelConfig {
                variant: Variant::Voxel,
                fusion: FusionKind::Msdff,
                n_fusion: 2,
                placement: Placement::Br,
                n_samples: 4,
                voxel_channels: [16, 32, 64, 128, 128, 128],
                channel_multiplier: 2,
                n_residual: 2,
                pillar: PillarBackboneConfig::default(),
                semantic_head: true,
                zero_out_of_view: false,
                init_seed: None,
                weights: None,
                stub_detections: Vec::new(),
            },
            loss: LossConfig {
                alpha1: 1.0,
                alpha2: 1.0,
                focal_alpha: 0.25,
                focal_gamma: 2.0,
            },
            image: ImageConfig {
                image_size: (640, 384),
                levels: 4,
                channels: 16,
                base_stride: 8,
            },
            eval: EvalSection {
                iou_thresholds: [("Car", 0.5), ("Pedestrian", 0.25), ("Cyclist", 0.25)]
                    .map(|(k, v)| (k.to_string(), v))
                    .into_iter()
                    .collect(),
                ap_points: vec![ApPoints::Eleven, ApPoints::Forty],
                iou: IouKind::ThreeD,
                corridor: Corridor::default(),
            },
        }
    }

    pub fn tj4d() -> Self {
        let mut c = Self::vod();
        c.data.schema = SchemaName::Tj4d5;
        c.data.classes = ["Car", "Pedestrian", "Cyclist", "Truck"]
            .map(String::from)
            .to_vec();
        c.grid.voxel_range = range([0.0, -40.0, -4.0], [70.4, 40.0, 2.0]);
        c.grid.pillar_range = range([0.0, -39.68, -4.0], [69.12, 39.68, 2.0]);
        c.model.pillar.z_bins = 12;
        c.eval.iou_thresholds.insert("Truck".into(), 0.5);
        c.eval.ap_points = vec![ApPoints::Forty];
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "vod" => Ok(Self::vod()),
            "tj4d" => Ok(Self::tj4d()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected vod or tj4d)"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file, or a preset when `path` is `vod` or `tj4d`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            if let Some(name) = path.to_str().filter(|s| matches!(*s, "vod" | "tj4d")) {
                return Self::preset(name);
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.grid.voxel_spec()?;
        self.grid.pillar_spec()?;
        let m = &self.model;
        if m.n_fusion > 6 {
            return Err(Error::Config(format!(
                "n_fusion {} exceeds the 6 backbone blocks",
                m.n_fusion
            )));
        }
        if m.n_samples == 0 || m.n_residual == 0 || m.channel_multiplier == 0 {
            return Err(Error::Config(
                "n_samples, n_residual and channel_multiplier must be positive".into(),
            ));
        }
        if m.voxel_channels.contains(&0) || m.pillar.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if m.pillar.strides.iter().any(|&s| s != 1 && s != 2) || m.pillar.z_bins == 0 {
            return Err(Error::Config(
                "pillar strides must be 1 or 2 and z_bins positive".into(),
            ));
        }
        if self.image.levels == 0 || self.image.channels == 0 || self.image.base_stride == 0 {
            return Err(Error::Config(
                "image pyramid settings must be positive".into(),
            ));
        }
        if self.data.classes.is_empty() || self.data.classes.len() > 255 {
            return Err(Error::Config(
                "class list must have 1 to 255 entries".into(),
            ));
        }
        for name in &self.data.classes {
            if !self.eval.iou_thresholds.contains_key(name) {
                return Err(Error::Config(format!(
                    "no IoU threshold for class `{name}`"
                )));
            }
        }
        for (name, t) in &self.eval.iou_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!(
                    "IoU threshold {t} for `{name}` is outside (0, 1]"
                )));
            }
        }
        if self.eval.ap_points.is_empty() {
            return Err(Error::Config("eval.ap_points is empty".into()));
        }
        Ok(())
    }

    pub fn class_list(&self) -> ClassList {
        ClassList(self.data.classes.clone())
    }

    pub fn init_seed(&self) -> u64 {
        self.model.init_seed.unwrap_or(self.seed)
    }

    /// Channel widths after the multiplier.
    pub fn voxel_widths(&self) -> [usize; 6] {
        self.model
            .voxel_channels
            .map(|c| c * self.model.channel_multiplier)
    }

    /// Evaluation settings for one AP sampler; thresholds keyed by class id.
    pub fn eval_config(&self, points: ApPoints) -> Result<EvalConfig> {
        let classes = self.class_list();
        let mut thresholds = BTreeMap::new();
        for name in &self.data.classes {
            let id = classes.id(name).expect("name comes from the list");
            let t = self.eval.iou_thresholds.get(name).copied();
            thresholds.insert(
                id,
                t.ok_or_else(|| Error::Config(format!("no IoU threshold for class `{name}`")))?,
            );
        }
        let mut cfg = EvalConfig::new(thresholds)?;
        cfg.ap_points = points;
        cfg.iou_kind = self.eval.iou;
        cfg.corridor = self.eval.corridor;
        Ok(cfg)
    }
}
