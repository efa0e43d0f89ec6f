//! Detection metrics and feature-blurring diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Box2D, Box3D, ClassList, Label};
use crate::error::{Error, Result};
use crate::geometry::CalibrationSet;

/// Polygon area by the shoelace formula; positive for counter-clockwise.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn cross(o: [f64; 2], a: [f64; 2], p: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
}

fn line_hit(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cin = cross(a, b, cur) >= 0.0;
            let pin = cross(a, b, prev) >= 0.0;
            if cin {
                if !pin {
                    out.push(line_hit(prev, cur, a, b));
                }
                out.push(cur);
            } else if pin {
                out.push(line_hit(prev, cur, a, b));
            }
        }
    }
    out
}

fn same_box(a: &Box3D, b: &Box3D) -> bool {
    a.center == b.center && a.size == b.size && a.yaw == b.yaw
}

fn bev_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let ra = 0.5 * a.size[0].hypot(a.size[1]);
    let rb = 0.5 * b.size[0].hypot(b.size[1]);
    let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
    if d >= ra + rb {
        return 0.0;
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

/// Bird's-eye-view IoU of two yawed rectangles.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let (aa, ab) = (a.size[0] * a.size[1], b.size[0] * b.size[1]);
    if !(aa > 0.0 && ab > 0.0) {
        return 0.0;
    }
    if same_box(a, b) {
        return 1.0;
    }
    let inter = bev_overlap(a, b);
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    if same_box(a, b) {
        return 1.0;
    }
    let (a0, a1) = a.z_bounds();
    let (b0, b1) = b.z_bounds();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_overlap(a, b) * dz;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Bev,
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => rotated_iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    /// Entire annotated area.
    Eaa,
    /// Driving corridor.
    Dc,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Eaa => "EAA",
            Regime::Dc => "DC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApPoints {
    #[serde(rename = "11")]
    Eleven,
    #[serde(rename = "40")]
    Forty,
}

impl ApPoints {
    /// Recall sample positions.
    pub fn recalls(self) -> Vec<f64> {
        match self {
            ApPoints::Eleven => (0..=10).map(|k| k as f64 / 10.0).collect(),
            ApPoints::Forty => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }

    pub fn count(self) -> usize {
        match self {
            ApPoints::Eleven => 11,
            ApPoints::Forty => 40,
        }
    }
}

/// Camera-frame box: `x_min < x < x_max` and `z < z_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub x_min: f64,
    pub x_max: f64,
    pub z_max: f64,
}

impl Default for Corridor {
    fn default() -> Self {
        Self {
            x_min: -4.0,
            x_max: 4.0,
            z_max: 25.0,
        }
    }
}

impl Corridor {
    pub fn contains_camera(&self, p: [f64; 3]) -> bool {
        self.x_min < p[0] && p[0] < self.x_max && p[2] < self.z_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: BTreeMap<u8, f64>,
    pub regime: Regime,
    pub ap_points: ApPoints,
    pub iou_kind: IouKind,
    pub corridor: Corridor,
}

impl EvalConfig {
    pub fn new(iou_thresholds: BTreeMap<u8, f64>) -> Result<Self> {
        for (c, t) in &iou_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!(
                    "IoU threshold {t} for class {c} is outside (0, 1]"
                )));
            }
        }
        Ok(Self {
            iou_thresholds,
            regime: Regime::Eaa,
            ap_points: ApPoints::Eleven,
            iou_kind: IouKind::ThreeD,
            corridor: Corridor::default(),
        })
    }

    pub fn threshold(&self, class_id: u8) -> Result<f64> {
        self.iou_thresholds
            .get(&class_id)
            .copied()
            .ok_or_else(|| Error::Config(format!("no IoU threshold for class {class_id}")))
    }
}

/// Keeps boxes whose camera-frame center lies in the corridor.
pub fn corridor_filter(boxes: &[Box3D], calib: &CalibrationSet, corridor: &Corridor) -> Vec<Box3D> {
    boxes
        .iter()
        .filter(|b| corridor.contains_camera(calib.to_camera(b.center)))
        .copied()
        .collect()
}

/// One point on a precision/recall curve, after the `rank`-th detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub tp: bool,
    pub recall: f64,
    pub precision: f64,
}

/// Greedy matching in descending score order (ties by input index). Each
/// detection takes the highest-IoU unmatched ground truth at or above
/// `threshold`.
pub fn match_detections(dets: &[Box3D], gts: &[Box3D], threshold: f64, kind: IouKind) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = kind.iou(&dets[i], gt);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Precision/recall after each detection, in descending score order.
/// Detections and ground truth are assumed to be of one class.
pub fn pr_curve(dets: &[Box3D], gts: &[Box3D], threshold: f64, kind: IouKind) -> Vec<PrPoint> {
    let tp = match_detections(dets, gts, threshold, kind);
    let scored: Vec<(f64, bool)> = dets.iter().map(|d| d.score).zip(tp).collect();
    pr_from_matches(&scored, gts.len())
}

/// Curve from already-matched `(score, is_tp)` pairs; ties keep input order.
pub fn pr_from_matches(scored: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[j].0.total_cmp(&scored[i].0).then(i.cmp(&j)));
    let mut hits = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let (score, tp) = scored[i];
            hits += usize::from(tp);
            PrPoint {
                score,
                tp,
                recall: hits as f64 / n_gt as f64,
                precision: hits as f64 / (rank + 1) as f64,
            }
        })
        .collect()
}

/// Mean over recall samples `r` of the best precision at recall `>= r`.
pub fn interpolated_ap(curve: &[PrPoint], points: ApPoints) -> f64 {
    let sum: f64 = points
        .recalls()
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|p| p.recall >= r)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    sum / points.count() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class_id: u8,
    pub n_gt: usize,
    pub n_det: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub curve: Vec<PrPoint>,
}

/// One frame's detections and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub dets: Vec<Box3D>,
    pub gts: Vec<Box3D>,
    pub calib: CalibrationSet,
}

/// Per-class AP for a single frame, without regime filtering.
pub fn compute_ap(dets: &[Box3D], gts: &[Box3D], cfg: &EvalConfig) -> Result<Vec<ClassAp>> {
    let classes = eval_classes(cfg, dets.iter().chain(gts))?;
    Ok(classes
        .into_iter()
        .map(|(c, thr)| {
            let d: Vec<Box3D> = dets.iter().filter(|b| b.class_id == c).copied().collect();
            let g: Vec<Box3D> = gts.iter().filter(|b| b.class_id == c).copied().collect();
            let curve = pr_curve(&d, &g, thr, cfg.iou_kind);
            finish(c, g.len(), d.len(), curve, cfg.ap_points)
        })
        .collect())
}

/// Per-class AP over many frames. Matching is per frame; the DC regime
/// first drops boxes outside the corridor.
pub fn evaluate_frames(frames: &[EvalFrame], cfg: &EvalConfig) -> Result<Vec<ClassAp>> {
    let filtered: Vec<(Vec<Box3D>, Vec<Box3D>)> = frames
        .iter()
        .map(|f| match cfg.regime {
            Regime::Eaa => (f.dets.clone(), f.gts.clone()),
            Regime::Dc => (
                corridor_filter(&f.dets, &f.calib, &cfg.corridor),
                corridor_filter(&f.gts, &f.calib, &cfg.corridor),
            ),
        })
        .collect();
    let classes = eval_classes(cfg, filtered.iter().flat_map(|(d, g)| d.iter().chain(g)))?;
    Ok(classes
        .into_iter()
        .map(|(c, thr)| {
            let mut scored = Vec::new();
            let (mut n_gt, mut n_det) = (0, 0);
            for (d, g) in &filtered {
                let d: Vec<Box3D> = d.iter().filter(|b| b.class_id == c).copied().collect();
                let g: Vec<Box3D> = g.iter().filter(|b| b.class_id == c).copied().collect();
                let tp = match_detections(&d, &g, thr, cfg.iou_kind);
                scored.extend(d.iter().map(|b| b.score).zip(tp));
                n_gt += g.len();
                n_det += d.len();
            }
            finish(
                c,
                n_gt,
                n_det,
                pr_from_matches(&scored, n_gt),
                cfg.ap_points,
            )
        })
        .collect())
}

fn eval_classes<'a>(
    cfg: &EvalConfig,
    boxes: impl Iterator<Item = &'a Box3D>,
) -> Result<Vec<(u8, f64)>> {
    let mut classes: Vec<u8> = cfg.iou_thresholds.keys().copied().collect();
    classes.extend(boxes.map(|b| b.class_id));
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| Ok((c, cfg.threshold(c)?)))
        .collect()
}

fn finish(
    class_id: u8,
    n_gt: usize,
    n_det: usize,
    curve: Vec<PrPoint>,
    points: ApPoints,
) -> ClassAp {
    ClassAp {
        class_id,
        n_gt,
        n_det,
        ap: (n_gt > 0).then(|| interpolated_ap(&curve, points)),
        curve,
    }
}

pub fn ap_table_csv(rows: &[(Regime, ApPoints, Vec<ClassAp>)], classes: &ClassList) -> String {
    let mut s = String::from("regime,points,class,n_gt,n_det,ap\n");
    for (regime, points, aps) in rows {
        for a in aps {
            let ap = a.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                regime.name(),
                points.count(),
                classes.name(a.class_id),
                a.n_gt,
                a.n_det,
                ap
            );
        }
    }
    s
}

pub fn pr_curve_csv(aps: &[ClassAp], classes: &ClassList) -> String {
    let mut s = String::from("class,rank,score,tp,recall,precision\n");
    for a in aps {
        for (r, p) in a.curve.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                classes.name(a.class_id),
                r,
                p.score,
                u8::from(p.tp),
                p.recall,
                p.precision
            );
        }
    }
    s
}

/// Binary raster region, tested at the nearest pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn contains(&self, px: [f64; 2]) -> bool {
        let (u, v) = (px[0].round(), px[1].round());
        if !(u >= 0.0 && v >= 0.0) || u as usize >= self.width || v as usize >= self.height {
            return false;
        }
        self.data[v as usize * self.width + u as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region2D {
    Box(Box2D),
    Mask(Mask),
}

impl Region2D {
    pub fn contains(&self, px: [f64; 2]) -> bool {
        match self {
            Region2D::Box(b) => b.contains(px),
            Region2D::Mask(m) => m.contains(px),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlurPointClass {
    Background,
    /// Projects into a 2D region but lies in no 3D box.
    Fore2dBlurred,
    /// Projects into a 2D region and lies in a 3D box.
    Fore3d,
}

fn in_any_region(p: [f64; 3], regions: &[Region2D], calib: &CalibrationSet) -> bool {
    let pr = calib.project(p);
    pr.depth > 0.0 && regions.iter().any(|r| r.contains(pr.pixel))
}

pub fn classify_blur_points(
    points: &[[f64; 3]],
    regions: &[Region2D],
    gt_boxes: &[Box3D],
    calib: &CalibrationSet,
) -> Vec<BlurPointClass> {
    points
        .iter()
        .map(|&p| {
            if !in_any_region(p, regions, calib) {
                BlurPointClass::Background
            } else if gt_boxes.iter().any(|b| b.contains(p)) {
                BlurPointClass::Fore3d
            } else {
                BlurPointClass::Fore2dBlurred
            }
        })
        .collect()
}

/// Thresholds `0, 0.01, ..., 1`.
pub fn tau_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurCurves {
    pub tau: Vec<f64>,
    pub r_blur: Vec<f64>,
    pub r_fore: Vec<f64>,
    pub n_fore2d: usize,
}

/// Ratios of blurred and 3D-foreground points scoring above `τ` to all 2D
/// foreground points. Unscored points never count as above. `None` when no
/// point is 2D foreground.
pub fn blur_curves(
    scores: &[Option<f64>],
    classes: &[BlurPointClass],
    taus: &[f64],
) -> Result<Option<BlurCurves>> {
    if scores.len() != classes.len() {
        return Err(Error::dim("blur scores", classes.len(), scores.len()));
    }
    let n_fore2d = classes
        .iter()
        .filter(|c| **c != BlurPointClass::Background)
        .count();
    if n_fore2d == 0 {
        return Ok(None);
    }
    let n = n_fore2d as f64;
    let count = |cls: BlurPointClass, t: f64| {
        classes
            .iter()
            .zip(scores)
            .filter(|(c, s)| **c == cls && s.is_some_and(|s| s > t))
            .count() as f64
    };
    Ok(Some(BlurCurves {
        tau: taus.to_vec(),
        r_blur: taus
            .iter()
            .map(|&t| count(BlurPointClass::Fore2dBlurred, t) / n)
            .collect(),
        r_fore: taus
            .iter()
            .map(|&t| count(BlurPointClass::Fore3d, t) / n)
            .collect(),
        n_fore2d,
    }))
}

pub fn blur_curves_csv(c: &BlurCurves) -> String {
    let mut s = String::from("tau,r_blur,r_fore\n");
    for i in 0..c.tau.len() {
        let _ = writeln!(s, "{:.2},{},{}", c.tau[i], c.r_blur[i], c.r_fore[i]);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceRatio {
    pub class_id: u8,
    pub n_fore2d: usize,
    pub n_fore3d: usize,
}

/// Per labeled instance with a 2D region: points projecting into its region,
/// and how many of those lie in its own 3D box.
pub fn instance_ratios(
    points: &[[f64; 3]],
    labels: &[Label],
    calib: &CalibrationSet,
) -> Vec<InstanceRatio> {
    let projected: Vec<_> = points.iter().map(|&p| (p, calib.project(p))).collect();
    labels
        .iter()
        .filter_map(|l| {
            let region = l.region?;
            let inside: Vec<[f64; 3]> = projected
                .iter()
                .filter(|(_, pr)| pr.depth > 0.0 && region.contains(pr.pixel))
                .map(|(p, _)| *p)
                .collect();
            Some(InstanceRatio {
                class_id: l.bbox.class_id,
                n_fore2d: inside.len(),
                n_fore3d: inside.iter().filter(|p| l.bbox.contains(**p)).count(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRatio {
    pub class_id: u8,
    pub instances: usize,
    pub mean_ratio: f64,
}

/// Mean of `n_fore3d / n_fore2d` per class over instances with at least one
/// 2D foreground point.
pub fn class_ratio_table(instances: &[InstanceRatio]) -> Vec<ClassRatio> {
    let mut acc: BTreeMap<u8, (usize, f64)> = BTreeMap::new();
    for r in instances.iter().filter(|r| r.n_fore2d > 0) {
        let e = acc.entry(r.class_id).or_default();
        e.0 += 1;
        e.1 += r.n_fore3d as f64 / r.n_fore2d as f64;
    }
    acc.into_iter()
        .map(|(class_id, (n, s))| ClassRatio {
            class_id,
            instances: n,
            mean_ratio: s / n as f64,
        })
        .collect()
}

pub fn ratio_table_csv(rows: &[ClassRatio], classes: &ClassList) -> String {
    let mut s = String::from("class,instances,mean_fore3d_ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{}",
            classes.name(r.class_id),
            r.instances,
            r.mean_ratio
        );
    }
    s
}
