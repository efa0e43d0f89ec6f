//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Boxes cross the boundary as `[x, y, l, w, yaw]`; everything else as flat
//! `Float64Array`s with a fixed record width noted on each function.

use wasm_bindgen::prelude::wasm_bindgen;

use radarfuse::dataset::Box3D;
use radarfuse::eval::{
    classify_blur_points, clip_polygon, rotated_iou_bev, BlurPointClass, Region2D,
};
use radarfuse::fusion::{msdff_sample_points, MsdffParams};
use radarfuse::nn::pyramid::{synthetic_pyramid, SyntheticPyramidSpec};
use radarfuse::rng::SeededRng;
use radarfuse::synth::{default_calibration, generate_synthetic_scene};

const QUERY_WIDTH: usize = 16;

fn bev_box(v: &[f64]) -> Option<Box3D> {
    if v.len() != 5 {
        return None;
    }
    Box3D::new([v[0], v[1], 0.0], [v[2], v[3], 1.0], v[4], 0).ok()
}

/// BEV IoU of two `[x, y, l, w, yaw]` boxes; NaN for malformed input.
#[wasm_bindgen]
pub fn rotated_iou(a: &[f64], b: &[f64]) -> f64 {
    match (bev_box(a), bev_box(b)) {
        (Some(a), Some(b)) => rotated_iou_bev(&a, &b),
        _ => f64::NAN,
    }
}

/// Corners of a box, `[x0, y0, x1, y1, ...]` counter-clockwise.
#[wasm_bindgen]
pub fn box_corners(v: &[f64]) -> Vec<f64> {
    bev_box(v)
        .map(|b| b.bev_corners().concat())
        .unwrap_or_default()
}

/// Intersection polygon of two boxes, flattened like [`box_corners`].
#[wasm_bindgen]
pub fn overlap_polygon(a: &[f64], b: &[f64]) -> Vec<f64> {
    match (bev_box(a), bev_box(b)) {
        (Some(a), Some(b)) => clip_polygon(&a.bev_corners(), &b.bev_corners()).concat(),
        _ => Vec::new(),
    }
}

/// Deformable sample locations around the normalized reference `(u, v)`
/// for a seeded sampler and a seeded query scaled by `spread`.
/// Records of 4: `level, u, v, weight`, all in normalized image units.
#[wasm_bindgen]
pub fn deformable_samples(seed: u32, u: f64, v: f64, n_samples: usize, spread: f64) -> Vec<f64> {
    let spec = SyntheticPyramidSpec::default();
    let pyramid = synthetic_pyramid(u64::from(seed), &spec, &[]);
    let n_samples = n_samples.clamp(1, 16);
    let params = MsdffParams::seeded(
        QUERY_WIDTH,
        spec.channels,
        QUERY_WIDTH,
        spec.levels,
        n_samples,
        u64::from(seed),
        "demo",
    );
    let mut rng = SeededRng::new(u64::from(seed) ^ 0x51);
    let q: Vec<f64> = (0..QUERY_WIDTH)
        .map(|_| spread * rng.uniform(-1.0, 1.0))
        .collect();
    match msdff_sample_points([u, v], &pyramid, &q, &params) {
        Ok(pts) => pts
            .iter()
            .flat_map(|s| [s.level as f64, s.position[0], s.position[1], s.weight])
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Image size of the synthetic camera, `[W, H]`.
#[wasm_bindgen]
pub fn image_size() -> Vec<f64> {
    let (w, h) = default_calibration().image_size();
    vec![f64::from(w), f64::from(h)]
}

/// Projected points of a synthetic scene with their blur class
/// (0 background, 1 blurred, 2 3D foreground). Records of 4: `u, v, depth,
/// class`; points behind the camera are omitted.
#[wasm_bindgen]
pub fn blur_scene_points(seed: u32, n_boxes: usize, n_points: usize) -> Vec<f64> {
    let calib = default_calibration();
    let scene = generate_synthetic_scene(
        u64::from(seed),
        n_boxes.min(20),
        n_points.min(20_000),
        &calib,
    );
    let regions: Vec<Region2D> = scene.regions().into_iter().map(Region2D::Box).collect();
    let points = scene.cloud.positions();
    let classes = classify_blur_points(&points, &regions, &scene.boxes(), &calib);
    points
        .iter()
        .zip(classes)
        .filter_map(|(&p, c)| {
            let pr = calib.project(p);
            let code = match c {
                BlurPointClass::Background => 0.0,
                BlurPointClass::Fore2dBlurred => 1.0,
                BlurPointClass::Fore3d => 2.0,
            };
            (pr.depth > 0.0).then_some([pr.pixel[0], pr.pixel[1], pr.depth, code])
        })
        .flatten()
        .collect()
}

/// 2D regions of the same scene. Records of 4: `u1, v1, u2, v2`.
#[wasm_bindgen]
pub fn blur_scene_regions(seed: u32, n_boxes: usize) -> Vec<f64> {
    let calib = default_calibration();
    let scene = generate_synthetic_scene(u64::from(seed), n_boxes.min(20), 0, &calib);
    scene
        .regions()
        .iter()
        .flat_map(|r| [r.min[0], r.min[1], r.max[0], r.max[1]])
        .collect()
}
