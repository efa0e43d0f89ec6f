//! Deterministic synthetic scenes: a radar cloud with labeled objects, their
//! 2D extents, and a matching image feature pyramid.

use crate::dataset::{Box2D, Box3D, Label, PointCloud, RangeSpec, Schema};
use crate::geometry::CalibrationSet;
use crate::nn::{pyramid::synthetic_pyramid, pyramid::SyntheticPyramidSpec, FeaturePyramid};
use crate::rng::SeededRng;

/// Typical `(l, w, h)` for the default class list.
const CLASS_SIZES: [[f64; 3]; 4] = [
    [3.9, 1.6, 1.56],
    [0.8, 0.6, 1.73],
    [1.76, 0.6, 1.73],
    [8.0, 2.5, 3.0],
];

/// Fraction of the box extent that foreground points are drawn from, so
/// float32 rounding can never push them across a face.
const INNER: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub range: RangeSpec,
    pub pyramid: SyntheticPyramidSpec,
    /// Share of `n_points` placed inside boxes.
    pub foreground_share: f64,
    pub ground_z: f64,
    /// Boxes draw their class from the first `n_classes` entries of the
    /// default class list (at most 4).
    pub n_classes: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            range: RangeSpec {
                min: [0.0, -25.6, -3.0],
                max: [51.2, 25.6, 2.0],
            },
            pyramid: SyntheticPyramidSpec::default(),
            foreground_share: 0.3,
            ground_z: -1.5,
            n_classes: CLASS_SIZES.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    pub pyramid: FeaturePyramid,
}

impl SyntheticScene {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.labels.iter().map(|l| l.bbox).collect()
    }

    pub fn regions(&self) -> Vec<Box2D> {
        self.labels.iter().filter_map(|l| l.region).collect()
    }
}

/// Camera used by synthetic scenes: 640×384, focal 500 px, mounted 0.5 m
/// above the radar.
pub fn default_calibration() -> CalibrationSet {
    CalibrationSet::pinhole(500.0, 320.0, 192.0, [0.0, 0.5, 0.0], (640, 384))
        .expect("constant calibration is valid")
}

/// Image-space bounding rectangle of the projected box corners, clipped to
/// the image. `None` when a corner is behind the camera or nothing is left.
pub fn project_box(b: &Box3D, calib: &CalibrationSet) -> Option<Box2D> {
    let (w, h) = calib.image_size();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in b.corners() {
        let p = calib.project(c);
        if !(p.valid && p.depth > 0.0) {
            return None;
        }
        for a in 0..2 {
            lo[a] = lo[a].min(p.pixel[a]);
            hi[a] = hi[a].max(p.pixel[a]);
        }
    }
    let lo = [lo[0].max(0.0), lo[1].max(0.0)];
    let hi = [hi[0].min(f64::from(w) - 1.0), hi[1].min(f64::from(h) - 1.0)];
    (lo[0] < hi[0] && lo[1] < hi[1]).then_some(Box2D { min: lo, max: hi })
}

pub fn generate_synthetic_scene(
    seed: u64,
    n_boxes: usize,
    n_points: usize,
    calib: &CalibrationSet,
) -> SyntheticScene {
    generate_scene_with(seed, n_boxes, n_points, calib, &SceneSpec::default())
}

pub fn generate_scene_with(
    seed: u64,
    n_boxes: usize,
    n_points: usize,
    calib: &CalibrationSet,
    spec: &SceneSpec,
) -> SyntheticScene {
    let mut rng = SeededRng::new(seed);
    let mut box_rng = rng.fork(1);
    let mut pt_rng = rng.fork(2);
    let r = spec.range;

    let mut boxes: Vec<Box3D> = Vec::with_capacity(n_boxes);
    let x_lo = r.min[0] + 0.1 * r.extent()[0];
    let x_hi = r.max[0] - 0.2 * r.extent()[0];
    while boxes.len() < n_boxes {
        let class_id = box_rng.below(spec.n_classes.clamp(1, CLASS_SIZES.len())) as u8;
        let size = CLASS_SIZES[class_id as usize];
        let x = box_rng.uniform(x_lo, x_hi);
        let half_y = (0.45 * x).min(0.5 * r.extent()[1] - size[0]);
        let y = box_rng.uniform(-half_y, half_y);
        let yaw = box_rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
        let z = (spec.ground_z + 0.5 * size[2]).min(r.max[2] - 0.5 * size[2] - 0.01);
        let b = Box3D::new([x, y, z], size, yaw, class_id).expect("class sizes are positive");
        let radius = |b: &Box3D| 0.5 * b.size[0].hypot(b.size[1]);
        let clear = boxes
            .iter()
            .all(|o| (o.center[0] - x).hypot(o.center[1] - y) > radius(o) + radius(&b) + 0.5);
        if clear {
            boxes.push(b);
        }
    }

    let schema = Schema::Vod7;
    let mut data: Vec<f32> = Vec::with_capacity(n_points.max(n_boxes) * schema.width());
    let mut push = |rng: &mut SeededRng, p: [f64; 3]| {
        data.extend(p.map(|v| v as f32));
        data.push(rng.uniform(-10.0, 20.0) as f32);
        let v = rng.uniform(-5.0, 5.0);
        data.push(v as f32);
        data.push((v + rng.uniform(-0.5, 0.5)) as f32);
        data.push(0.0);
    };

    let n_fore = if n_boxes == 0 {
        0
    } else {
        ((n_points as f64 * spec.foreground_share) as usize).max(n_boxes)
    };
    for k in 0..n_fore {
        let b = &boxes[k % n_boxes];
        let q = [0, 1, 2].map(|a| pt_rng.uniform(-0.5, 0.5) * INNER * b.size[a]);
        let p = b.from_local(q);
        push(&mut pt_rng, p);
    }
    let mut placed = n_fore;
    while placed < n_points {
        let p = [0, 1, 2].map(|a| pt_rng.uniform(r.min[a], r.max[a]));
        if !r.contains(p.map(|v| f64::from(v as f32))) || boxes.iter().any(|b| b.contains(p)) {
            continue;
        }
        push(&mut pt_rng, p);
        placed += 1;
    }

    let labels: Vec<Label> = boxes
        .iter()
        .map(|b| Label {
            bbox: *b,
            region: project_box(b, calib),
        })
        .collect();
    let regions: Vec<Box2D> = labels.iter().filter_map(|l| l.region).collect();
    let mut pspec = spec.pyramid;
    pspec.image_size = calib.image_size();
    let pyramid = synthetic_pyramid(seed, &pspec, &regions);
    let cloud =
        PointCloud::new(data, schema, format!("synth_{seed:06}")).expect("rows are VoD7-wide");
    SyntheticScene {
        cloud,
        labels,
        pyramid,
    }
}
