//! Voxel grids, sparse tensors and centroid maps.
//!
//! Voxel coordinates are always `(z, y, x)` integer triples; metric points
//! are always `(x, y, z)`. Rows of a [`SparseTensor`] are kept sorted by
//! coordinate so every reduction visits voxels in the same order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{PointCloud, RangeSpec};
use crate::error::{Error, Result};

pub type Coord = [i32; 3];

const AXIS_BITS: u32 = 20;
const AXIS_MASK: u64 = (1 << AXIS_BITS) - 1;

/// Packs `(z, y, x)` and the stride exponent into one key: three 20-bit
/// fields plus the log2 stride above bit 60. Coordinates must lie in
/// `[0, 2^20)`.
pub fn pack_key(c: Coord, stride: u32) -> u64 {
    debug_assert!(stride.is_power_of_two());
    debug_assert!(c.iter().all(|&v| v >= 0 && (v as u64) <= AXIS_MASK));
    let s = u64::from(stride.trailing_zeros());
    (s << (3 * AXIS_BITS))
        | ((c[0] as u64) << (2 * AXIS_BITS))
        | ((c[1] as u64) << AXIS_BITS)
        | (c[2] as u64)
}

pub fn unpack_key(k: u64) -> (Coord, u32) {
    let c = [
        ((k >> (2 * AXIS_BITS)) & AXIS_MASK) as i32,
        ((k >> AXIS_BITS) & AXIS_MASK) as i32,
        (k & AXIS_MASK) as i32,
    ];
    (c, 1 << (k >> (3 * AXIS_BITS)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub range: RangeSpec,
    /// Cell size `(x, y, z)` in meters.
    pub cell: [f64; 3],
    /// `(D, H, W)` = cells along `(z, y, x)`.
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(range: RangeSpec, cell: [f64; 3]) -> Result<Self> {
        let ext = range.extent();
        let mut counts = [0usize; 3];
        for a in 0..3 {
            if !(cell[a] > 0.0) {
                return Err(Error::Invalid(format!(
                    "cell size {cell:?} must be positive"
                )));
            }
            let n = ext[a] / cell[a];
            let r = n.round();
            if (n - r).abs() * cell[a] > 1e-6 || r < 1.0 {
                return Err(Error::Invalid(format!(
                    "extent {} along axis {a} is not a multiple of cell {}",
                    ext[a], cell[a]
                )));
            }
            counts[a] = r as usize;
        }
        if counts.iter().any(|&n| n as u64 > AXIS_MASK) {
            return Err(Error::Invalid(
                "grid too large for 20-bit coordinates".into(),
            ));
        }
        Ok(Self {
            range,
            cell,
            dims: [counts[2], counts[1], counts[0]],
        })
    }

    /// One z-cell spanning the full height.
    pub fn pillar(range: RangeSpec, cell_xy: [f64; 2]) -> Result<Self> {
        Self::new(range, [cell_xy[0], cell_xy[1], range.extent()[2]])
    }

    /// Same x/y cells with `bins` cells along z.
    pub fn with_z_bins(&self, bins: usize) -> Result<Self> {
        let dz = self.range.extent()[2] / bins as f64;
        Self::new(self.range, [self.cell[0], self.cell[1], dz])
    }

    /// Grid dims after downsampling by `stride` (ceil per halving).
    pub fn dims_at(&self, stride: u32) -> [usize; 3] {
        let s = stride as usize;
        self.dims.map(|d| d.div_ceil(s))
    }

    /// Base-grid `(z, y, x)` index of a point, or `None` outside the range.
    pub fn index_of(&self, p: [f64; 3]) -> Option<Coord> {
        if !self.range.contains(p) {
            return None;
        }
        let mut c = [0i32; 3];
        for a in 0..3 {
            let i = ((p[a] - self.range.min[a]) / self.cell[a]).floor() as i64;
            let n = self.dims[2 - a] as i64;
            c[2 - a] = i.clamp(0, n - 1) as i32;
        }
        Some(c)
    }

    /// Metric center of voxel `c` at `stride`.
    pub fn voxel_center(&self, c: Coord, stride: u32) -> [f64; 3] {
        let s = f64::from(stride);
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.range.min[a] + (f64::from(c[2 - a]) + 0.5) * self.cell[a] * s;
        }
        p
    }

    pub fn voxel_bounds(&self, c: Coord, stride: u32) -> ([f64; 3], [f64; 3]) {
        let s = f64::from(stride);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.range.min[a] + f64::from(c[2 - a]) * self.cell[a] * s;
            hi[a] = lo[a] + self.cell[a] * s;
        }
        (lo, hi)
    }
}

/// Active voxels with their features; rows sorted by `(z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    coords: Vec<Coord>,
    features: Vec<f64>,
    channels: usize,
    pub stride: u32,
    pub spec: VoxelGridSpec,
}

impl SparseTensor {
    /// Builds a tensor, sorting rows by coordinate. Rejects duplicates and
    /// out-of-bounds coordinates.
    pub fn new(
        coords: Vec<Coord>,
        features: Vec<f64>,
        channels: usize,
        stride: u32,
        spec: VoxelGridSpec,
    ) -> Result<Self> {
        if features.len() != coords.len() * channels {
            return Err(Error::dim(
                "sparse tensor features",
                coords.len() * channels,
                features.len(),
            ));
        }
        if stride == 0 || !stride.is_power_of_two() {
            return Err(Error::Invalid(format!(
                "stride {stride} is not a power of two"
            )));
        }
        let dims = spec.dims_at(stride);
        for c in &coords {
            if (0..3).any(|a| c[a] < 0 || c[a] as usize >= dims[a]) {
                return Err(Error::Invalid(format!(
                    "coordinate {c:?} outside dims {dims:?}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&i| coords[i]);
        if order.windows(2).any(|w| coords[w[0]] == coords[w[1]]) {
            return Err(Error::Invalid("duplicate voxel coordinates".into()));
        }
        let sorted_coords = order.iter().map(|&i| coords[i]).collect();
        let mut sorted_feats = Vec::with_capacity(features.len());
        for &i in &order {
            sorted_feats.extend_from_slice(&features[i * channels..(i + 1) * channels]);
        }
        Ok(Self {
            coords: sorted_coords,
            features: sorted_feats,
            channels,
            stride,
            spec,
        })
    }

    pub(crate) fn from_sorted(
        coords: Vec<Coord>,
        features: Vec<f64>,
        channels: usize,
        stride: u32,
        spec: VoxelGridSpec,
    ) -> Self {
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.len(), coords.len() * channels);
        Self {
            coords,
            features,
            channels,
            stride,
            spec,
        }
    }

    pub fn empty(channels: usize, stride: u32, spec: VoxelGridSpec) -> Self {
        Self::from_sorted(Vec::new(), Vec::new(), channels, stride, spec)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims_at(self.stride)
    }

    /// Same active set and stride, new features.
    pub fn with_features(&self, features: Vec<f64>, channels: usize) -> Result<Self> {
        if features.len() != self.len() * channels {
            return Err(Error::dim(
                "replacement features",
                self.len() * channels,
                features.len(),
            ));
        }
        Ok(Self::from_sorted(
            self.coords.clone(),
            features,
            channels,
            self.stride,
            self.spec,
        ))
    }

    pub fn index(&self) -> CoordIndex {
        CoordIndex::build(&self.coords, self.stride)
    }

    pub fn all_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }
}

/// Hash lookup from packed coordinate keys to tensor rows.
#[derive(Debug, Clone)]
pub struct CoordIndex {
    map: HashMap<u64, usize>,
    stride: u32,
}

impl CoordIndex {
    pub fn build(coords: &[Coord], stride: u32) -> Self {
        let map = coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (pack_key(c, stride), i))
            .collect();
        Self { map, stride }
    }

    pub fn get(&self, c: Coord) -> Option<usize> {
        if c.iter().any(|&v| v < 0 || v as u64 > AXIS_MASK) {
            return None;
        }
        self.map.get(&pack_key(c, self.stride)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub position: [f64; 3],
    pub point_count: u32,
    pub is_center_fallback: bool,
}

/// Per-row centroids aligned with a [`SparseTensor`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CentroidMap(pub Vec<Centroid>);

impl CentroidMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.0.iter().map(|c| c.position).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Mean,
    First,
}

fn total_key(v: f32) -> i32 {
    let b = v.to_bits() as i32;
    b ^ (((b >> 31) as u32) >> 1) as i32
}

/// Bins the cloud into the grid. Voxel features are the per-channel mean
/// (or first point) of member points; centroids are member-point means.
pub fn voxelize(
    pc: &PointCloud,
    spec: &VoxelGridSpec,
    reduce: Reduce,
) -> Result<(SparseTensor, CentroidMap)> {
    let c = pc.channels();
    let mut keyed: Vec<(Coord, usize)> = Vec::with_capacity(pc.len());
    for i in 0..pc.len() {
        let p = pc.xyz(i);
        let idx = spec.index_of(p).ok_or_else(|| {
            Error::Invalid(format!(
                "point {i} at {p:?} is outside the grid range; crop first"
            ))
        })?;
        keyed.push((idx, i));
    }
    match reduce {
        // sort members by value so the sum order does not depend on input order
        Reduce::Mean => keyed.sort_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| {
                pc.row(a.1)
                    .iter()
                    .map(|&v| total_key(v))
                    .cmp(pc.row(b.1).iter().map(|&v| total_key(v)))
            })
        }),
        Reduce::First => keyed.sort(),
    }

    let mut coords = Vec::new();
    let mut feats = Vec::new();
    let mut cents = Vec::new();
    let mut start = 0;
    while start < keyed.len() {
        let coord = keyed[start].0;
        let mut end = start;
        while end < keyed.len() && keyed[end].0 == coord {
            end += 1;
        }
        let members = &keyed[start..end];
        let n = members.len() as f64;
        match reduce {
            Reduce::Mean => {
                let mut acc = vec![0.0; c];
                for &(_, i) in members {
                    for (a, &v) in acc.iter_mut().zip(pc.row(i)) {
                        *a += f64::from(v);
                    }
                }
                feats.extend(acc.into_iter().map(|s| s / n));
            }
            Reduce::First => feats.extend(pc.row(members[0].1).iter().map(|&v| f64::from(v))),
        }
        let mut sum = [0.0; 3];
        for &(_, i) in members {
            let p = pc.xyz(i);
            for a in 0..3 {
                sum[a] += p[a];
            }
        }
        coords.push(coord);
        cents.push(Centroid {
            position: sum.map(|s| s / n),
            point_count: members.len() as u32,
            is_center_fallback: false,
        });
        start = end;
    }
    Ok((
        SparseTensor::from_sorted(coords, feats, c, 1, *spec),
        CentroidMap(cents),
    ))
}

/// Voxelization on a single-z-cell grid.
pub fn pillarize(pc: &PointCloud, spec: &VoxelGridSpec) -> Result<(SparseTensor, CentroidMap)> {
    if spec.dims[0] != 1 {
        return Err(Error::Invalid(format!(
            "pillar grids need one z cell, got {}",
            spec.dims[0]
        )));
    }
    voxelize(pc, spec, Reduce::Mean)
}

/// Occupied voxels of a point set with their centroids, sorted by
/// coordinate. Points must lie inside the grid range.
pub fn bin_points(points: &[[f64; 3]], spec: &VoxelGridSpec) -> Result<(Vec<Coord>, CentroidMap)> {
    let mut keyed = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        let c = spec.index_of(p).ok_or_else(|| {
            Error::Invalid(format!(
                "point {i} at {p:?} is outside the grid range; crop first"
            ))
        })?;
        keyed.push((c, p.map(f64::to_bits)));
    }
    keyed.sort_unstable();
    let mut coords = Vec::new();
    let mut cents: Vec<Centroid> = Vec::new();
    for (c, bits) in keyed {
        if coords.last() != Some(&c) {
            coords.push(c);
            cents.push(Centroid {
                position: [0.0; 3],
                point_count: 0,
                is_center_fallback: false,
            });
        }
        let e = cents.last_mut().expect("pushed above");
        for a in 0..3 {
            e.position[a] += f64::from_bits(bits[a]);
        }
        e.point_count += 1;
    }
    for e in &mut cents {
        let n = f64::from(e.point_count);
        e.position = e.position.map(|v| v / n);
    }
    Ok((coords, CentroidMap(cents)))
}

/// Centroids of the given active voxels at `stride`, using every point whose
/// base-grid cell falls inside the voxel. Voxels without points fall back to
/// their geometric center.
pub fn compute_centroids(
    points: &[[f64; 3]],
    spec: &VoxelGridSpec,
    active: &[Coord],
    stride: u32,
) -> CentroidMap {
    let s = stride as i32;
    let mut keyed: Vec<(Coord, [u64; 3])> = points
        .iter()
        .filter_map(|&p| {
            spec.index_of(p)
                .map(|c| (c.map(|v| v.div_euclid(s)), p.map(f64::to_bits)))
        })
        .collect();
    keyed.sort_unstable();
    let mut sums: HashMap<u64, ([f64; 3], u32)> = HashMap::new();
    for (c, bits) in keyed {
        let e = sums.entry(pack_key(c, stride)).or_insert(([0.0; 3], 0));
        for a in 0..3 {
            e.0[a] += f64::from_bits(bits[a]);
        }
        e.1 += 1;
    }
    CentroidMap(
        active
            .iter()
            .map(|&c| match sums.get(&pack_key(c, stride)) {
                Some(&(sum, n)) => Centroid {
                    position: sum.map(|v| v / f64::from(n)),
                    point_count: n,
                    is_center_fallback: false,
                },
                None => Centroid {
                    position: spec.voxel_center(c, stride),
                    point_count: 0,
                    is_center_fallback: true,
                },
            })
            .collect(),
    )
}
