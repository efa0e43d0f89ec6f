//! Multi-scale image feature maps and their binary container.
//!
//! File layout (little endian):
//!
//! ```text
//! b"PYR1"  u32 n_levels
//! n_levels × (u32 H, u32 W, u32 C)
//! per level: C planes of H×W float32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::dataset::Box2D;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const PYRAMID_MAGIC: &[u8; 4] = b"PYR1";

/// One `H × W × C` level, stored channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Invalid(format!(
                "feature map dims must be positive, got {h}x{w}x{c}"
            )));
        }
        if data.len() != h * w * c {
            return Err(Error::dim("feature map data", h * w * c, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature map entries must be finite".into()));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = (y * self.w + x) * self.c;
        &mut self.data[i..i + self.c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Invalid("a pyramid needs at least one level".into()));
        }
        Ok(Self { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Channel count shared by every level, if uniform.
    pub fn uniform_channels(&self) -> Option<usize> {
        let c = self.levels[0].c;
        self.levels.iter().all(|l| l.c == c).then_some(c)
    }

    pub fn total_channels(&self) -> usize {
        self.levels.iter().map(|l| l.c).sum()
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|l| FeatureMap::zeros(l.h, l.w, l.c))
                .collect(),
        }
    }

    /// Every entry of level `i` set to `values[i]`.
    pub fn constant(shapes: &[(usize, usize, usize)], values: &[f64]) -> Result<Self> {
        let levels = shapes
            .iter()
            .zip(values)
            .map(|(&(h, w, c), &v)| FeatureMap::new(h, w, c, vec![v; h * w * c]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PYRAMID_MAGIC);
        out.extend_from_slice(&(self.levels.len() as u32).to_le_bytes());
        for l in &self.levels {
            for d in [l.h, l.w, l.c] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for l in &self.levels {
            for k in 0..l.c {
                for y in 0..l.h {
                    for x in 0..l.w {
                        out.extend_from_slice(&(l.pixel(y, x)[k] as f32).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("pyramid file is truncated".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != PYRAMID_MAGIC {
            return Err(Error::Format("pyramid file has a bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let n = u32_at(take(4)?);
        if n == 0 {
            return Err(Error::Format("pyramid file declares zero levels".into()));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let h = u32_at(take(4)?);
            let w = u32_at(take(4)?);
            let c = u32_at(take(4)?);
            shapes.push((h, w, c));
        }
        let mut levels = Vec::with_capacity(n);
        for (h, w, c) in shapes {
            let raw = take(4 * h * w * c)?;
            let mut data = vec![0.0; h * w * c];
            for (i, b) in raw.chunks_exact(4).enumerate() {
                let k = i / (h * w);
                let yx = i % (h * w);
                data[yx * c + k] = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            }
            levels.push(FeatureMap::new(h, w, c, data)?);
        }
        if !cur.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after pyramid",
                cur.len()
            )));
        }
        Self::new(levels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Settings of the deterministic stand-in for a learned image branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPyramidSpec {
    pub image_size: (u32, u32),
    pub levels: usize,
    pub channels: usize,
    /// Stride of the finest level relative to the image.
    pub base_stride: u32,
}

impl Default for SyntheticPyramidSpec {
    fn default() -> Self {
        Self {
            image_size: (640, 384),
            levels: 4,
            channels: 16,
            base_stride: 8,
        }
    }
}

/// Smooth seeded texture per channel plus a per-channel bump inside each
/// foreground region, so foreground pixels carry a distinct signature.
/// Values are rounded to float32 so the file container is lossless.
pub fn synthetic_pyramid(
    seed: u64,
    spec: &SyntheticPyramidSpec,
    regions: &[Box2D],
) -> FeaturePyramid {
    let mut rng = SeededRng::new(seed).fork(0x5059_524d);
    let c = spec.channels;
    let freqs: Vec<[f64; 4]> = (0..c)
        .map(|_| {
            [
                rng.uniform(0.005, 0.05),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.005, 0.05),
                rng.uniform(0.0, std::f64::consts::TAU),
            ]
        })
        .collect();
    let gains: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 1.5)).collect();
    let (iw, ih) = spec.image_size;
    let levels = (0..spec.levels)
        .map(|i| {
            let stride = spec.base_stride << i;
            let w = iw.div_ceil(stride) as usize;
            let h = ih.div_ceil(stride) as usize;
            let s = f64::from(stride);
            let mut data = Vec::with_capacity(h * w * c);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5) * s;
                    let v = (y as f64 + 0.5) * s;
                    let inside = regions.iter().filter(|r| r.contains([u, v])).count() as f64;
                    for k in 0..c {
                        let [fu, pu, fv, pv] = freqs[k];
                        let base = 0.5 * (fu * u + pu).sin() * (fv * v + pv).cos();
                        data.push(f64::from((base + inside * gains[k]) as f32));
                    }
                }
            }
            FeatureMap::new(h, w, c, data).expect("synthetic level is well-formed")
        })
        .collect();
    FeaturePyramid::new(levels).expect("at least one level")
}

/// Decoded 8-bit grayscale or RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Luma in `[0, 1]`, row-major.
    pub luma: Vec<f64>,
}

/// Parses binary PGM (`P5`) or PPM (`P6`) with `maxval <= 255`.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let planes = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported netpbm magic {m}"))),
    };
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad netpbm header field `{s}`")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // single whitespace byte separates header and raster
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let need = width * height * planes;
    if body.len() < need {
        return Err(Error::ByteLength {
            what: "netpbm raster",
            expected: need,
            actual: body.len(),
        });
    }
    let m = maxval as f64;
    let luma = body[..need]
        .chunks_exact(planes)
        .map(|px| match px {
            [g] => f64::from(*g) / m,
            [r, g, b] => {
                (0.299 * f64::from(*r) + 0.587 * f64::from(*g) + 0.114 * f64::from(*b)) / m
            }
            _ => unreachable!(),
        })
        .collect();
    Ok(Raster {
        width,
        height,
        luma,
    })
}

/// Hand-crafted pyramid from an image: average-pooled luma, horizontal and
/// vertical gradients, and local contrast, at strides `base·2^i`.
pub fn pyramid_from_raster(
    img: &Raster,
    levels: usize,
    base_stride: usize,
) -> Result<FeaturePyramid> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Invalid("empty image".into()));
    }
    let out = (0..levels)
        .map(|i| {
            let s = base_stride << i;
            let w = img.width.div_ceil(s);
            let h = img.height.div_ceil(s);
            let mut pooled = vec![(0.0f64, 0.0f64); w * h];
            for (y, row) in img.luma.chunks_exact(img.width).enumerate() {
                for (x, &v) in row.iter().enumerate() {
                    let cell = &mut pooled[(y / s) * w + x / s];
                    cell.0 += v;
                    cell.1 += v * v;
                }
            }
            let mut mean = vec![0.0; w * h];
            let mut std = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let nx = (img.width - x * s).min(s);
                    let ny = (img.height - y * s).min(s);
                    let n = (nx * ny) as f64;
                    let (sum, sq) = pooled[y * w + x];
                    mean[y * w + x] = sum / n;
                    std[y * w + x] = (sq / n - (sum / n).powi(2)).max(0.0).sqrt();
                }
            }
            let at = |x: usize, y: usize| mean[y.min(h - 1) * w + x.min(w - 1)];
            let mut data = Vec::with_capacity(w * h * 4);
            for y in 0..h {
                for x in 0..w {
                    let gx = 0.5 * (at(x + 1, y) - at(x.saturating_sub(1), y));
                    let gy = 0.5 * (at(x, y + 1) - at(x, y.saturating_sub(1)));
                    for v in [mean[y * w + x], gx, gy, std[y * w + x]] {
                        data.push(f64::from(v as f32));
                    }
                }
            }
            FeatureMap::new(h, w, 4, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FeaturePyramid::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let p = synthetic_pyramid(3, &SyntheticPyramidSpec::default(), &[]);
        let back = FeaturePyramid::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn synthetic_shapes() {
        let p = synthetic_pyramid(1, &SyntheticPyramidSpec::default(), &[]);
        let shapes: Vec<_> = p
            .levels
            .iter()
            .map(|l| (l.height(), l.width(), l.channels()))
            .collect();
        assert_eq!(
            shapes,
            vec![(48, 80, 16), (24, 40, 16), (12, 20, 16), (6, 10, 16)]
        );
    }

    #[test]
    fn regions_raise_features() {
        let r = Box2D {
            min: [100.0, 100.0],
            max: [300.0, 300.0],
        };
        let spec = SyntheticPyramidSpec::default();
        let a = synthetic_pyramid(1, &spec, &[]);
        let b = synthetic_pyramid(1, &spec, &[r]);
        let (y, x) = (25, 25); // pixel center (204, 204)
        assert!(b.levels[0].pixel(y, x)[0] > a.levels[0].pixel(y, x)[0] + 0.4);
        assert_eq!(b.levels[0].pixel(0, 0), a.levels[0].pixel(0, 0));
    }

    #[test]
    fn rejects_garbage() {
        assert!(FeaturePyramid::from_bytes(b"NOPE\x01\0\0\0").is_err());
        let mut bytes = synthetic_pyramid(1, &SyntheticPyramidSpec::default(), &[]).to_bytes();
        bytes.pop();
        assert!(FeaturePyramid::from_bytes(&bytes).is_err());
    }

    #[test]
    fn pgm_decodes_and_pools() {
        let mut bytes = b"P5\n# comment\n4 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 0, 255, 255, 255, 255, 255]);
        let img = parse_netpbm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        let p = pyramid_from_raster(&img, 2, 2).unwrap();
        assert_eq!(p.levels[0].width(), 2);
        assert!((p.levels[0].pixel(0, 0)[0] - 0.75).abs() < 1e-7);
        assert_eq!(p.levels[1].width(), 1);
    }
}
