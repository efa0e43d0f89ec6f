//! Radar-to-image projection.
//!
//! A radar-frame point `p` maps to homogeneous image coordinates through
//! `intrinsic · radar_to_camera · [p; 1] = [u·d, v·d, d]`. Pixel `(0, 0)` is
//! the center of the top-left pixel and normalized coordinates are
//! `(u / W, v / H)`, half-open on `[0, 1)`.

use std::fmt::Write as _;

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Depths with magnitude below this never divide.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pixel assigned to projections that could not be computed.
pub const INVALID_PIXEL: [f64; 2] = [-1.0, -1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    intrinsic: Matrix3x4<f64>,
    radar_to_camera: Matrix4<f64>,
    image_size: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub pixel: [f64; 2],
    pub normalized: [f64; 2],
    pub depth: f64,
    pub in_view: bool,
    /// False when the depth was too close to zero to divide by.
    pub valid: bool,
}

impl CalibrationSet {
    pub fn new(
        intrinsic: Matrix3x4<f64>,
        radar_to_camera: Matrix4<f64>,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let bottom = radar_to_camera.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::Invalid(
                "radar_to_camera bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        let r3 = intrinsic.row(2);
        if r3[0] != 0.0 || r3[1] != 0.0 || r3[2] != 1.0 || r3[3] != 0.0 {
            return Err(Error::Invalid(
                "intrinsic third row must be (0, 0, 1, 0)".into(),
            ));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        if intrinsic
            .iter()
            .chain(radar_to_camera.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Invalid(
                "calibration contains non-finite entries".into(),
            ));
        }
        Ok(Self {
            intrinsic,
            radar_to_camera,
            image_size,
        })
    }

    /// Pinhole camera with focal `f`, principal point `(cx, cy)` and the
    /// usual radar axes (x forward, y left, z up) mapped to camera axes
    /// (x right, y down, z forward), offset by `translation` in camera frame.
    pub fn pinhole(
        f: f64,
        cx: f64,
        cy: f64,
        translation: [f64; 3],
        image_size: (u32, u32),
    ) -> Result<Self> {
        #[rustfmt::skip]
        let intrinsic = Matrix3x4::new(
            f, 0.0, cx, 0.0,
            0.0, f, cy, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        #[rustfmt::skip]
        let radar_to_camera = Matrix4::new(
            0.0, -1.0, 0.0, translation[0],
            0.0, 0.0, -1.0, translation[1],
            1.0, 0.0, 0.0, translation[2],
            0.0, 0.0, 0.0, 1.0,
        );
        Self::new(intrinsic, radar_to_camera, image_size)
    }

    pub fn intrinsic(&self) -> &Matrix3x4<f64> {
        &self.intrinsic
    }

    pub fn radar_to_camera(&self) -> &Matrix4<f64> {
        &self.radar_to_camera
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn with_image_size(&self, image_size: (u32, u32)) -> Result<Self> {
        Self::new(self.intrinsic, self.radar_to_camera, image_size)
    }

    /// Radar-frame point expressed in the camera frame.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.radar_to_camera * Vector4::new(p[0], p[1], p[2], 1.0);
        [c.x, c.y, c.z]
    }

    pub fn project(&self, p: [f64; 3]) -> ProjectedPoint {
        project_point(p, self)
    }

    /// Parses `P2:` and `Tr_radar_to_cam:` lines (12 row-major floats each,
    /// bottom rows implied) plus an `image_size: W H` line. Other keys are
    /// ignored. `default_size` is used when the file has no size line.
    pub fn from_kitti_str(
        text: &str,
        file: &str,
        default_size: Option<(u32, u32)>,
    ) -> Result<Self> {
        let mut p2 = None;
        let mut tr = None;
        let mut size = default_size;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, rest)) = line.split_once(':') else {
                return Err(Error::Parse {
                    file: file.into(),
                    line: i + 1,
                    msg: "expected `key: values`".into(),
                });
            };
            let parse_err = |msg: String| Error::Parse {
                file: file.into(),
                line: i + 1,
                msg,
            };
            match key.trim() {
                "P2" | "Tr_radar_to_cam" => {
                    let vals = rest
                        .split_whitespace()
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(format!("bad float: {e}")))?;
                    if vals.len() != 12 {
                        return Err(parse_err(format!("expected 12 floats, got {}", vals.len())));
                    }
                    let m = Matrix3x4::from_row_slice(&vals);
                    if key.trim() == "P2" {
                        p2 = Some(m);
                    } else {
                        tr = Some(m);
                    }
                }
                "image_size" => {
                    let vals = rest
                        .split_whitespace()
                        .map(str::parse::<u32>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(format!("bad image size: {e}")))?;
                    if vals.len() != 2 {
                        return Err(parse_err("image_size needs W H".into()));
                    }
                    size = Some((vals[0], vals[1]));
                }
                _ => {}
            }
        }
        let missing = |what: &str| Error::Parse {
            file: file.into(),
            line: 0,
            msg: format!("missing `{what}` line"),
        };
        let p2 = p2.ok_or_else(|| missing("P2"))?;
        let tr = tr.ok_or_else(|| missing("Tr_radar_to_cam"))?;
        let size = size.ok_or_else(|| missing("image_size"))?;
        let mut r2c = Matrix4::identity();
        r2c.fixed_view_mut::<3, 4>(0, 0).copy_from(&tr);
        Self::new(p2, r2c, size)
    }

    pub fn to_kitti_string(&self) -> String {
        let mut out = String::new();
        let mut row = |key: &str, vals: &mut dyn Iterator<Item = f64>| {
            out.push_str(key);
            out.push(':');
            for v in vals {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        };
        row(
            "P2",
            &mut (0..3)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| self.intrinsic[(r, c)]),
        );
        row(
            "Tr_radar_to_cam",
            &mut (0..3)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| self.radar_to_camera[(r, c)]),
        );
        let _ = writeln!(
            out,
            "image_size: {} {}",
            self.image_size.0, self.image_size.1
        );
        out
    }
}

/// Projects a radar-frame point into the image.
pub fn project_point(p: [f64; 3], calib: &CalibrationSet) -> ProjectedPoint {
    let cam = calib.radar_to_camera * Vector4::new(p[0], p[1], p[2], 1.0);
    let img: Vector3<f64> = calib.intrinsic * cam;
    let depth = img.z;
    if depth.abs() < MIN_DEPTH {
        return ProjectedPoint {
            pixel: INVALID_PIXEL,
            normalized: INVALID_PIXEL,
            depth,
            in_view: false,
            valid: false,
        };
    }
    let u = img.x / depth;
    let v = img.y / depth;
    let (w, h) = calib.image_size;
    ProjectedPoint {
        pixel: [u, v],
        normalized: normalize_pixel([u, v], (w, h)),
        depth,
        in_view: depth > 0.0 && pixel_in_image([u, v], (w, h)),
        valid: true,
    }
}

pub fn normalize_pixel(px: [f64; 2], (w, h): (u32, u32)) -> [f64; 2] {
    [px[0] / f64::from(w), px[1] / f64::from(h)]
}

pub fn denormalize(n: [f64; 2], (w, h): (u32, u32)) -> [f64; 2] {
    [n[0] * f64::from(w), n[1] * f64::from(h)]
}

pub fn pixel_in_image(px: [f64; 2], (w, h): (u32, u32)) -> bool {
    px[0] >= 0.0 && px[0] < f64::from(w) && px[1] >= 0.0 && px[1] < f64::from(h)
}
