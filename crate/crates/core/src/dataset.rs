//! Point clouds, labels, and the KITTI-style on-disk layout.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/points/<frame>.bin    float32 LE rows, C channels per point
//! <root>/calib/<frame>.txt     P2 / Tr_radar_to_cam / image_size
//! <root>/labels/<frame>.txt    class l w h x y z yaw [u1 v1 u2 v2]
//! <root>/pyramids/<frame>.pyr  image feature pyramid (see nn::pyramid)
//! ```
//!
//! Label boxes live in the radar frame with `(x, y, z)` the geometric box
//! center and `yaw` the heading about +z.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CalibrationSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `[x, y, z, RCS, v_r, v_rc, t]`
    Vod7,
    /// `[x, y, z, v_rc, Power]`
    Tj4d5,
    Custom(Vec<String>),
}

impl Schema {
    pub fn channels(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Schema::Vod7 => &["x", "y", "z", "RCS", "v_r", "v_rc", "t"],
            Schema::Tj4d5 => &["x", "y", "z", "v_rc", "Power"],
            Schema::Custom(c) => return c.clone(),
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn width(&self) -> usize {
        match self {
            Schema::Vod7 => 7,
            Schema::Tj4d5 => 5,
            Schema::Custom(c) => c.len(),
        }
    }

    pub fn custom(channels: Vec<String>) -> Result<Self> {
        if channels.len() < 3 || channels[0] != "x" || channels[1] != "y" || channels[2] != "z" {
            return Err(Error::Invalid(
                "custom schemas must start with x, y, z".into(),
            ));
        }
        Ok(Schema::Custom(channels))
    }
}

/// Row-major `N × C` float32 point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f32>,
    schema: Schema,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(data: Vec<f32>, schema: Schema, frame_id: impl Into<String>) -> Result<Self> {
        let c = schema.width();
        if c == 0 || !data.len().is_multiple_of(c) {
            return Err(Error::ByteLength {
                what: "point rows",
                expected: c,
                actual: data.len(),
            });
        }
        Ok(Self {
            data,
            schema,
            frame_id: frame_id.into(),
        })
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            data: Vec::new(),
            schema,
            frame_id: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.schema.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.schema.width()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.channels();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.channels())
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let r = self.row(i);
        [f64::from(r[0]), f64::from(r[1]), f64::from(r[2])]
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.xyz(i)).collect()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8], schema: Schema, frame_id: impl Into<String>) -> Result<Self> {
        let stride = 4 * schema.width();
        if !bytes.len().is_multiple_of(stride) {
            return Err(Error::ByteLength {
                what: "point cloud file",
                expected: stride,
                actual: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(data, schema, frame_id)
    }

    pub fn select(&self, keep: impl Fn(&[f32]) -> bool) -> PointCloud {
        let data = self
            .rows()
            .filter(|r| keep(r))
            .flat_map(|r| r.iter().copied())
            .collect();
        PointCloud {
            data,
            schema: self.schema.clone(),
            frame_id: self.frame_id.clone(),
        }
    }
}

pub fn load_pointcloud(path: impl AsRef<Path>, schema: Schema) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PointCloud::from_bytes(&bytes, schema, frame)
}

pub fn write_pointcloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pc.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RangeSpec {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a])) {
            return Err(Error::Invalid(format!(
                "range min {min:?} must be below max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Half-open containment `min <= p < max`.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Keeps points inside the half-open range, preserving order.
pub fn crop_range(pc: &PointCloud, r: &RangeSpec) -> PointCloud {
    pc.select(|row| r.contains([f64::from(row[0]), f64::from(row[1]), f64::from(row[2])]))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// `(l, w, h)`: extent along the heading, across it, and vertically.
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: u8,
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: u8) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Invalid(format!(
                "box size must be positive, got {size:?}"
            )));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            class_id,
            score: 1.0,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    /// Point in the box frame (heading along +x).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    pub fn from_local(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * q[0] - s * q[1],
            self.center[1] + s * q[0] + c * q[1],
            self.center[2] + q[2],
        ]
    }

    /// Closed containment: points on faces count as inside.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let q = self.to_local(p);
        (0..3).all(|a| q[a].abs() <= 0.5 * self.size[a])
    }

    /// Bird's-eye-view corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (l, w) = (0.5 * self.size[0], 0.5 * self.size[1]);
        [[l, w], [-l, w], [-l, -w], [l, -w]].map(|[x, y]| {
            let p = self.from_local([x, y, 0.0]);
            [p[0], p[1]]
        })
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let h = self.size.map(|v| 0.5 * v);
        let mut out = [[0.0; 3]; 8];
        for (i, o) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *o = self.from_local([sx * h[0], sy * h[1], sz * h[2]]);
        }
        out
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn z_bounds(&self) -> (f64, f64) {
        (
            self.center[2] - 0.5 * self.size[2],
            self.center[2] + 0.5 * self.size[2],
        )
    }
}

/// A 2D image region in pixels, `u1 <= u <= u2`, `v1 <= v <= v2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Box2D {
    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= self.min[0] && px[0] <= self.max[0] && px[1] >= self.min[1] && px[1] <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub bbox: Box3D,
    pub region: Option<Box2D>,
}

/// Class-name vocabulary; the index is the `class_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassList(pub Vec<String>);

impl Default for ClassList {
    fn default() -> Self {
        Self(
            ["Car", "Pedestrian", "Cyclist", "Truck"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    }
}

impl ClassList {
    pub fn id(&self, name: &str) -> Option<u8> {
        self.0.iter().position(|c| c == name).map(|i| i as u8)
    }

    pub fn name(&self, id: u8) -> &str {
        self.0
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("Unknown")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<Label>,
    /// Distinct class names that were not in the vocabulary.
    pub rejected: Vec<String>,
}

impl LabelSet {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.labels.iter().map(|l| l.bbox).collect()
    }
}

fn parse_floats(tokens: &[&str], file: &str, line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                file: file.into(),
                line,
                msg: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

pub fn parse_labels(text: &str, file: &str, classes: &ClassList) -> Result<LabelSet> {
    let mut set = LabelSet::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 8 && tok.len() != 12 {
            return Err(Error::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("expected 8 or 12 fields, got {}", tok.len()),
            });
        }
        let v = parse_floats(&tok[1..], file, i + 1)?;
        let Some(class_id) = classes.id(tok[0]) else {
            if !set.rejected.iter().any(|r| r == tok[0]) {
                set.rejected.push(tok[0].to_string());
            }
            continue;
        };
        let bbox =
            Box3D::new([v[3], v[4], v[5]], [v[0], v[1], v[2]], v[6], class_id).map_err(|e| {
                Error::Parse {
                    file: file.into(),
                    line: i + 1,
                    msg: e.to_string(),
                }
            })?;
        let region = (v.len() == 11).then(|| Box2D {
            min: [v[7], v[8]],
            max: [v[9], v[10]],
        });
        set.labels.push(Label { bbox, region });
    }
    if !set.rejected.is_empty() {
        log::warn!("{file}: skipped unknown classes {:?}", set.rejected);
    }
    Ok(set)
}

pub fn format_labels(labels: &[Label], classes: &ClassList) -> String {
    let mut out = String::new();
    for l in labels {
        let b = &l.bbox;
        let _ = write!(
            out,
            "{} {} {} {} {} {} {} {}",
            classes.name(b.class_id),
            b.size[0],
            b.size[1],
            b.size[2],
            b.center[0],
            b.center[1],
            b.center[2],
            b.yaw
        );
        if let Some(r) = &l.region {
            let _ = write!(out, " {} {} {} {}", r.min[0], r.min[1], r.max[0], r.max[1]);
        }
        out.push('\n');
    }
    out
}

pub fn load_labels(path: impl AsRef<Path>, classes: &ClassList) -> Result<LabelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string(), classes)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[Label], classes: &ClassList) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(labels, classes)).map_err(|e| Error::io(path, e))
}

/// Detections share the label layout with a trailing score:
/// `class l w h x y z yaw score`.
pub fn parse_detections(text: &str, file: &str, classes: &ClassList) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 9 {
            return Err(Error::Parse {
                file: file.into(),
                line: i + 1,
                msg: format!("expected 9 fields, got {}", tok.len()),
            });
        }
        let v = parse_floats(&tok[1..], file, i + 1)?;
        let Some(class_id) = classes.id(tok[0]) else {
            continue;
        };
        let b = Box3D::new([v[3], v[4], v[5]], [v[0], v[1], v[2]], v[6], class_id)
            .map_err(|e| Error::Parse {
                file: file.into(),
                line: i + 1,
                msg: e.to_string(),
            })?
            .with_score(v[7]);
        out.push(b);
    }
    Ok(out)
}

pub fn format_detections(dets: &[Box3D], classes: &ClassList) -> String {
    let mut out = String::new();
    for b in dets {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            classes.name(b.class_id),
            b.size[0],
            b.size[1],
            b.size[2],
            b.center[0],
            b.center[1],
            b.center[2],
            b.yaw,
            b.score
        );
    }
    out
}

pub fn load_calib(
    path: impl AsRef<Path>,
    default_size: Option<(u32, u32)>,
) -> Result<CalibrationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CalibrationSet::from_kitti_str(&text, &path.display().to_string(), default_size)
}

pub fn write_calib(path: impl AsRef<Path>, calib: &CalibrationSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, calib.to_kitti_string()).map_err(|e| Error::io(path, e))
}

/// Paths of one frame under a dataset root.
#[derive(Debug, Clone)]
pub struct FramePaths {
    pub points: PathBuf,
    pub calib: PathBuf,
    pub labels: PathBuf,
    pub pyramid: PathBuf,
}

impl FramePaths {
    pub fn new(root: impl AsRef<Path>, frame_id: &str) -> Self {
        let root = root.as_ref();
        Self {
            points: root.join("points").join(format!("{frame_id}.bin")),
            calib: root.join("calib").join(format!("{frame_id}.txt")),
            labels: root.join("labels").join(format!("{frame_id}.txt")),
            pyramid: root.join("pyramids").join(format!("{frame_id}.pyr")),
        }
    }

    pub fn create_dirs(&self) -> Result<()> {
        for p in [&self.points, &self.calib, &self.labels, &self.pyramid] {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        Ok(())
    }
}

/// Frame ids present under `<root>/points`, sorted.
pub fn list_frames(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = root.as_ref().join("points");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "bin") {
            if let Some(s) = p.file_stem() {
                ids.push(s.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
