//! End-to-end forward pass: frames in, fused BEV map and head scores out.

use std::path::Path;

use crate::config::{Config, Variant};
use crate::dataset::{
    crop_range, list_frames, load_calib, load_labels, load_pointcloud, parse_detections, Box3D,
    FramePaths, Label, PointCloud,
};
use crate::error::{Error, Result};
use crate::fusion::{fusion_block_forward, FusionBlock, FusionContext, ImageFusion};
use crate::geometry::CalibrationSet;
use crate::neck::combine_multiscale;
use crate::nn::{FeaturePyramid, Parameterized, WeightStore};
use crate::pillar::{
    BevConvBlock, BevMap, HeadTrace, HeightEmbedding, PillarBackbone, PillarFusion, PillarStage,
};
use crate::rng::SeededRng;
use crate::semantic::SemanticHead;
use crate::sparse::{BlockConfig, OrdinaryBlock};
use crate::synth::{generate_scene_with, SceneSpec};
use crate::voxel::{pillarize, voxelize, Reduce, SparseTensor, VoxelGridSpec};

/// Stride of each voxel block's entry convolution.
pub const VOXEL_BLOCK_STRIDES: [u32; 6] = [1, 2, 2, 2, 2, 2];
/// Blocks whose outputs feed the neck (0-based).
pub const NECK_BLOCKS: [usize; 3] = [3, 4, 5];

/// One frame ready for the forward pass. The cloud is already cropped to
/// the model's range.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub labels: Vec<Label>,
    pub pyramid: FeaturePyramid,
}

impl Frame {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.labels.iter().map(|l| l.bbox).collect()
    }
}

/// Pinhole camera for synthetic frames; focal length scales with width.
pub fn synthetic_calibration(image_size: (u32, u32)) -> Result<CalibrationSet> {
    let (w, h) = image_size;
    let f = 500.0 * f64::from(w) / 640.0;
    CalibrationSet::pinhole(
        f,
        0.5 * f64::from(w),
        0.5 * f64::from(h),
        [0.0, 0.5, 0.0],
        image_size,
    )
}

pub fn model_range(cfg: &Config) -> crate::dataset::RangeSpec {
    match cfg.model.variant {
        Variant::Voxel => cfg.grid.voxel_range,
        Variant::Pillar => cfg.grid.pillar_range,
    }
}

/// Frames named by the config: dataset frames under `data.root`, or
/// synthetic scenes seeded from `seed`.
pub fn load_frames(cfg: &Config) -> Result<Vec<Frame>> {
    let range = model_range(cfg);
    match &cfg.data.root {
        Some(root) => {
            let ids = if cfg.data.frames.is_empty() {
                list_frames(root)?
            } else {
                cfg.data.frames.clone()
            };
            ids.iter().map(|id| load_frame(cfg, root, id)).collect()
        }
        None => {
            let calib = synthetic_calibration(cfg.image.image_size)?;
            let spec = SceneSpec {
                range,
                pyramid: cfg.image.synthetic_spec(),
                n_classes: cfg.data.classes.len(),
                ..SceneSpec::default()
            };
            let s = cfg.data.synthetic;
            Ok((0..s.n_frames as u64)
                .map(|k| {
                    let seed = cfg.seed.wrapping_add(k);
                    let scene = generate_scene_with(seed, s.n_boxes, s.n_points, &calib, &spec);
                    Frame {
                        id: scene.cloud.frame_id.clone(),
                        cloud: crop_range(&scene.cloud, &range),
                        calib: calib.clone(),
                        labels: scene.labels,
                        pyramid: scene.pyramid,
                    }
                })
                .collect())
        }
    }
}

pub fn load_frame(cfg: &Config, root: &Path, id: &str) -> Result<Frame> {
    let paths = FramePaths::new(root, id);
    let mut cloud = load_pointcloud(&paths.points, cfg.data.schema.schema())?;
    cloud.frame_id = id.to_string();
    let calib = load_calib(&paths.calib, Some(cfg.image.image_size))?;
    let labels = if paths.labels.exists() {
        let set = load_labels(&paths.labels, &cfg.class_list())?;
        set.labels
    } else {
        Vec::new()
    };
    let pyramid = FeaturePyramid::load(&paths.pyramid)?;
    Ok(Frame {
        id: id.to_string(),
        cloud: crop_range(&cloud, &model_range(cfg)),
        calib,
        labels,
        pyramid,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoxelStage {
    Plain(OrdinaryBlock),
    Fused(FusionBlock),
}

impl VoxelStage {
    pub fn block(&self) -> &OrdinaryBlock {
        match self {
            VoxelStage::Plain(b) => b,
            VoxelStage::Fused(f) => &f.block,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBackbone {
    pub grid: VoxelGridSpec,
    pub stages: Vec<VoxelStage>,
    /// Block index the head follows, and the head.
    pub head: Option<(usize, SemanticHead)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelOutput {
    pub bev: BevMap,
    pub head: Option<HeadTrace>,
    /// Output of every block.
    pub stages: Vec<SparseTensor>,
}

fn guard(x: &SparseTensor, stage: impl FnOnce() -> String) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage() })
    }
}

impl VoxelBackbone {
    pub fn forward(&self, input: &SparseTensor, ctx: &FusionContext<'_>) -> Result<VoxelOutput> {
        let mut x = input.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut head = None;
        for (i, stage) in self.stages.iter().enumerate() {
            let centroids = match stage {
                VoxelStage::Plain(b) => {
                    x = b.forward(&x)?;
                    None
                }
                VoxelStage::Fused(f) => {
                    let out = fusion_block_forward(&x, ctx, f)?;
                    x = out.tensor;
                    Some(out.centroids)
                }
            };
            guard(&x, || format!("voxel block {i}"))?;
            if let (Some((at, h)), Some(cents)) = (&self.head, centroids) {
                if *at == i {
                    let seg = h.forward(&x)?;
                    head = Some(HeadTrace {
                        stage: i,
                        spec: x.spec,
                        stride: x.stride,
                        coords: x.coords().to_vec(),
                        centroids: cents,
                        scores: seg.scores,
                    });
                    x = seg.reweighted;
                    guard(&x, || format!("semantic head after block {i}"))?;
                }
            }
            stages.push(x.clone());
        }
        let neck: Vec<SparseTensor> = NECK_BLOCKS
            .iter()
            .filter_map(|&i| stages.get(i).cloned())
            .collect();
        let bev = combine_multiscale(&neck)?;
        if !bev.all_finite() {
            return Err(Error::NonFinite {
                stage: "neck".into(),
            });
        }
        Ok(VoxelOutput { bev, head, stages })
    }
}

impl Parameterized for VoxelBackbone {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                VoxelStage::Plain(b) => b.export(&format!("{prefix}.block{i}"), store),
                VoxelStage::Fused(f) => f.export(&format!("{prefix}.block{i}"), store),
            }
        }
        if let Some((_, h)) = &self.head {
            h.export(&format!("{prefix}.seg_head"), store);
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        for (i, s) in self.stages.iter_mut().enumerate() {
            match s {
                VoxelStage::Plain(b) => b.import(&format!("{prefix}.block{i}"), store)?,
                VoxelStage::Fused(f) => f.import(&format!("{prefix}.block{i}"), store)?,
            }
        }
        if let Some((_, h)) = &mut self.head {
            h.import(&format!("{prefix}.seg_head"), store)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Voxel(VoxelBackbone),
    Pillar(PillarBackbone),
}

/// A configured network plus the pass-through detection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub input_channels: usize,
    pub stub_detections: Vec<Box3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub bev: BevMap,
    pub head: Option<HeadTrace>,
    /// Active voxels after each voxel block; empty for the pillar variant.
    pub stage_sizes: Vec<usize>,
    pub detections: Vec<Box3D>,
}

impl Model {
    /// Builds the network from the config, initializing every parameter
    /// from `init_seed`, then loads `model.weights` when set.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.init_seed();
        let m = &cfg.model;
        let pyr = vec![cfg.image.channels; cfg.image.levels];
        let c_in = cfg.data.schema.schema().width();
        let head_at = (m.semantic_head && m.n_fusion > 0).then(|| m.n_fusion - 1);
        let backbone = match m.variant {
            Variant::Voxel => {
                let widths = cfg.voxel_widths();
                let mut stages = Vec::with_capacity(6);
                for i in 0..6 {
                    let bc = BlockConfig {
                        n_residual: m.n_residual,
                        channels_in: if i == 0 { c_in } else { widths[i - 1] },
                        channels_out: widths[i],
                        stride: VOXEL_BLOCK_STRIDES[i],
                    };
                    let prefix = format!("voxel.block{i}");
                    let block = OrdinaryBlock::seeded(&bc, seed, &prefix)?;
                    stages.push(if i < m.n_fusion {
                        let mut fusion = ImageFusion::seeded(
                            m.fusion,
                            widths[i],
                            &pyr,
                            m.n_samples,
                            i == 0,
                            seed,
                            &format!("{prefix}.fusion"),
                        )?;
                        fusion.zero_out_of_view = m.zero_out_of_view;
                        VoxelStage::Fused(FusionBlock {
                            block,
                            fusion,
                            placement: m.placement,
                        })
                    } else {
                        VoxelStage::Plain(block)
                    });
                }
                let head = match head_at {
                    Some(at) => Some((
                        at,
                        SemanticHead::seeded(widths[at], seed, "voxel.seg_head")?,
                    )),
                    None => None,
                };
                Backbone::Voxel(VoxelBackbone {
                    grid: cfg.grid.voxel_spec()?,
                    stages,
                    head,
                })
            }
            Variant::Pillar => {
                let p = &m.pillar;
                let mut stages = Vec::with_capacity(6);
                for i in 0..6 {
                    let prefix = format!("pillar.block{i}");
                    let c_prev = if i == 0 { c_in } else { p.channels[i - 1] };
                    let block =
                        BevConvBlock::seeded(c_prev, p.channels[i], p.strides[i], seed, &prefix);
                    let fusion = if i < m.n_fusion {
                        let mut f = ImageFusion::seeded(
                            m.fusion,
                            p.channels[i],
                            &pyr,
                            m.n_samples,
                            i == 0,
                            seed,
                            &format!("{prefix}.fusion"),
                        )?;
                        f.zero_out_of_view = m.zero_out_of_view;
                        let height = HeightEmbedding::seeded(
                            p.z_bins,
                            p.channels[i],
                            &mut SeededRng::for_param(seed, &format!("{prefix}.height")),
                        );
                        Some(PillarFusion {
                            fusion: f,
                            height,
                            sample_image: true,
                        })
                    } else {
                        None
                    };
                    stages.push(PillarStage { block, fusion });
                }
                let head = match head_at {
                    Some(at) => Some((
                        at,
                        SemanticHead::seeded(p.channels[at], seed, "pillar.seg_head")?,
                    )),
                    None => None,
                };
                Backbone::Pillar(PillarBackbone {
                    grid: cfg.grid.pillar_spec()?,
                    stages,
                    head,
                })
            }
        };
        let stub = m.stub_detections.join("\n");
        let stub_detections = parse_detections(&stub, "model.stub_detections", &cfg.class_list())
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut model = Self {
            backbone,
            input_channels: c_in,
            stub_detections,
        };
        if let Some(path) = &m.weights {
            model.load_weights(&WeightStore::load(path)?)?;
        }
        Ok(model)
    }

    pub fn grid(&self) -> &VoxelGridSpec {
        match &self.backbone {
            Backbone::Voxel(v) => &v.grid,
            Backbone::Pillar(p) => &p.grid,
        }
    }

    pub fn weights(&self) -> WeightStore {
        let mut store = WeightStore::new();
        match &self.backbone {
            Backbone::Voxel(v) => v.export("voxel", &mut store),
            Backbone::Pillar(p) => p.export("pillar", &mut store),
        }
        store
    }

    pub fn load_weights(&mut self, store: &WeightStore) -> Result<()> {
        match &mut self.backbone {
            Backbone::Voxel(v) => v.import("voxel", store),
            Backbone::Pillar(p) => p.import("pillar", store),
        }
    }

    pub fn forward(&self, frame: &Frame) -> Result<ForwardOutput> {
        if frame.cloud.channels() != self.input_channels {
            return Err(Error::dim(
                "point channels",
                self.input_channels,
                frame.cloud.channels(),
            ));
        }
        let points = frame.cloud.positions();
        let ctx = FusionContext {
            pyramid: &frame.pyramid,
            calib: &frame.calib,
            points: &points,
        };
        let (bev, head, stage_sizes) = match &self.backbone {
            Backbone::Voxel(v) => {
                let (x, _) = voxelize(&frame.cloud, &v.grid, Reduce::Mean)?;
                guard(&x, || "voxelization".into())?;
                let out = v.forward(&x, &ctx)?;
                let sizes = out.stages.iter().map(SparseTensor::len).collect();
                (out.bev, out.head, sizes)
            }
            Backbone::Pillar(p) => {
                let (x, _) = pillarize(&frame.cloud, &p.grid)?;
                guard(&x, || "pillarization".into())?;
                let out = p.forward(&x, &ctx)?;
                (out.bev, out.head, Vec::new())
            }
        };
        Ok(ForwardOutput {
            bev,
            head,
            stage_sizes,
            detections: self.stub_detections.clone(),
        })
    }
}
