//! Pillar (BEV) variant.
//!
//! The backbone runs dense 2D convolution blocks on a BEV map. A fusion
//! stage lifts the current BEV map into the occupied 3D voxels of the raw
//! cloud (`f_vox = BEV(x, y) + HeightEmb(z)`), fuses image features there,
//! and collapses the voxels back to BEV by summing each column.

use serde::{Deserialize, Serialize};

use crate::dataset::RangeSpec;
use crate::error::{Error, Result};
use crate::fusion::{FusionContext, ImageFusion};
use crate::nn::{FeatureMap, FeaturePyramid, Parameterized, WeightStore};
use crate::par;
use crate::rng::SeededRng;
use crate::semantic::SemanticHead;
use crate::voxel::{bin_points, CentroidMap, Coord, SparseTensor, VoxelGridSpec};

/// Dense `H × W × C` bird's-eye-view map, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct BevMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
    pub range: RangeSpec,
    /// Effective `(x, y)` cell size in meters.
    pub cell: [f64; 2],
}

impl BevMap {
    pub fn zeros(h: usize, w: usize, c: usize, range: RangeSpec, cell: [f64; 2]) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
            range,
            cell,
        }
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = (y * self.w + x) * self.c;
        &mut self.data[i..i + self.c]
    }

    /// Columns with any nonzero channel.
    pub fn occupied(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.at(y, x).iter().any(|&v| v != 0.0) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single-level pyramid for the binary container.
    pub fn to_pyramid(&self) -> Result<FeaturePyramid> {
        FeaturePyramid::new(vec![FeatureMap::new(
            self.h,
            self.w,
            self.c,
            self.data.clone(),
        )?])
    }
}

/// Scatters a single-z tensor (pillars) into a dense BEV map.
pub fn scatter_pillars(x: &SparseTensor) -> Result<BevMap> {
    let dims = x.dims();
    if dims[0] != 1 {
        return Err(Error::Invalid(
            "pillar scatter needs a single z cell".into(),
        ));
    }
    let s = f64::from(x.stride);
    let mut bev = BevMap::zeros(
        dims[1],
        dims[2],
        x.channels(),
        x.spec.range,
        [x.spec.cell[0] * s, x.spec.cell[1] * s],
    );
    for (k, c) in x.coords().iter().enumerate() {
        bev.at_mut(c[1] as usize, c[2] as usize)
            .copy_from_slice(x.feature(k));
    }
    Ok(bev)
}

/// Sums voxel features over z for every `(y, x)` column. Empty columns are
/// zero. Each column accumulates in ascending z order.
pub fn collapse_to_bev(x: &SparseTensor) -> BevMap {
    let dims = x.dims();
    let s = f64::from(x.stride);
    let mut bev = BevMap::zeros(
        dims[1],
        dims[2],
        x.channels(),
        x.spec.range,
        [x.spec.cell[0] * s, x.spec.cell[1] * s],
    );
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by_key(|&k| {
        let c = x.coords()[k];
        (c[1], c[2], c[0])
    });
    for k in order {
        let c = x.coords()[k];
        for (o, v) in bev
            .at_mut(c[1] as usize, c[2] as usize)
            .iter_mut()
            .zip(x.feature(k))
        {
            *o += v;
        }
    }
    bev
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightEmbedding {
    /// `bins × c`, row-major.
    pub table: Vec<f64>,
    pub bins: usize,
    pub c: usize,
}

impl HeightEmbedding {
    pub fn zeros(bins: usize, c: usize) -> Self {
        Self {
            table: vec![0.0; bins * c],
            bins,
            c,
        }
    }

    pub fn seeded(bins: usize, c: usize, rng: &mut SeededRng) -> Self {
        let k = 1.0 / (c.max(1) as f64).sqrt();
        Self {
            table: (0..bins * c).map(|_| rng.symmetric_f32(k)).collect(),
            bins,
            c,
        }
    }

    pub fn row(&self, z: usize) -> &[f64] {
        &self.table[z * self.c..(z + 1) * self.c]
    }
}

impl Parameterized for HeightEmbedding {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(
            format!("{prefix}.table"),
            vec![self.bins, self.c],
            &self.table,
        );
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.table = store.take(&format!("{prefix}.table"), &[self.bins, self.c])?;
        Ok(())
    }
}

/// Grid whose `(y, x)` cells coincide with the BEV map's and whose z axis
/// has `bins` cells.
pub fn lifting_grid(bev: &BevMap, bins: usize) -> VoxelGridSpec {
    VoxelGridSpec {
        range: bev.range,
        cell: [
            bev.cell[0],
            bev.cell[1],
            bev.range.extent()[2] / bins as f64,
        ],
        dims: [bins, bev.h, bev.w],
    }
}

/// Occupied voxels of `points` at the BEV's x/y resolution, each carrying
/// `BEV(x, y) + table[z]`.
pub fn lift_bev_to_voxels(
    bev: &BevMap,
    points: &[[f64; 3]],
    table: &HeightEmbedding,
) -> Result<(SparseTensor, CentroidMap)> {
    if table.c != bev.c {
        return Err(Error::dim("height embedding width", bev.c, table.c));
    }
    let spec = lifting_grid(bev, table.bins);
    let (coords, cents) = bin_points(points, &spec)?;
    let mut feats = Vec::with_capacity(coords.len() * bev.c);
    for c in &coords {
        let (z, y, x) = (c[0] as usize, c[1] as usize, c[2] as usize);
        if y >= bev.h || x >= bev.w || z >= table.bins {
            return Err(Error::Invalid(format!("voxel {c:?} outside the BEV map")));
        }
        feats.extend(bev.at(y, x).iter().zip(table.row(z)).map(|(a, b)| a + b));
    }
    Ok((SparseTensor::new(coords, feats, bev.c, 1, spec)?, cents))
}

/// Dense 3×3 convolution, padding 1. Weights `[tap][c_in][c_out]` with tap
/// `(dy+1)·3 + (dx+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl Conv2dLayer {
    pub fn seeded(c_in: usize, c_out: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let k = 1.0 / ((9 * c_in.max(1)) as f64).sqrt();
        Self {
            weight: (0..9 * c_in * c_out)
                .map(|_| rng.symmetric_f32(k))
                .collect(),
            bias: (0..c_out).map(|_| rng.symmetric_f32(k)).collect(),
            c_in,
            c_out,
            stride,
        }
    }

    pub fn forward(&self, x: &BevMap) -> Result<BevMap> {
        if x.c != self.c_in {
            return Err(Error::dim("bev conv input channels", self.c_in, x.c));
        }
        let s = self.stride;
        let (oh, ow) = (x.h.div_ceil(s), x.w.div_ceil(s));
        let rows = par::map_range(oh, |oy| {
            let mut row = Vec::with_capacity(ow * self.c_out);
            for ox in 0..ow {
                let mut acc = self.bias.clone();
                for tap in 0..9 {
                    let iy = (s * oy + tap / 3) as isize - 1;
                    let ix = (s * ox + tap % 3) as isize - 1;
                    if iy < 0 || ix < 0 || iy as usize >= x.h || ix as usize >= x.w {
                        continue;
                    }
                    let w = &self.weight
                        [tap * self.c_in * self.c_out..(tap + 1) * self.c_in * self.c_out];
                    for (ci, &v) in x.at(iy as usize, ix as usize).iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        for (a, &wv) in acc
                            .iter_mut()
                            .zip(&w[ci * self.c_out..(ci + 1) * self.c_out])
                        {
                            *a += v * wv;
                        }
                    }
                }
                row.extend(acc);
            }
            row
        });
        Ok(BevMap {
            h: oh,
            w: ow,
            c: self.c_out,
            data: rows.concat(),
            range: x.range,
            cell: [x.cell[0] * s as f64, x.cell[1] * s as f64],
        })
    }
}

impl Parameterized for Conv2dLayer {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(
            format!("{prefix}.weight"),
            vec![3, 3, self.c_in, self.c_out],
            &self.weight,
        );
        store.insert(format!("{prefix}.bias"), vec![self.c_out], &self.bias);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.weight = store.take(&format!("{prefix}.weight"), &[3, 3, self.c_in, self.c_out])?;
        self.bias = store.take(&format!("{prefix}.bias"), &[self.c_out])?;
        Ok(())
    }
}

fn relu_map(mut m: BevMap) -> BevMap {
    m.data.iter_mut().for_each(|v| *v = v.max(0.0));
    m
}

/// `ReLU(conv2(ReLU(conv1(x))))`; `conv1` carries the block stride.
#[derive(Debug, Clone, PartialEq)]
pub struct BevConvBlock {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
}

impl BevConvBlock {
    pub fn seeded(c_in: usize, c_out: usize, stride: usize, seed: u64, prefix: &str) -> Self {
        Self {
            conv1: Conv2dLayer::seeded(
                c_in,
                c_out,
                stride,
                &mut SeededRng::for_param(seed, &format!("{prefix}.conv1")),
            ),
            conv2: Conv2dLayer::seeded(
                c_out,
                c_out,
                1,
                &mut SeededRng::for_param(seed, &format!("{prefix}.conv2")),
            ),
        }
    }

    pub fn forward(&self, x: &BevMap) -> Result<BevMap> {
        let h = relu_map(self.conv1.forward(x)?);
        Ok(relu_map(self.conv2.forward(&h)?))
    }
}

impl Parameterized for BevConvBlock {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.conv1.export(&format!("{prefix}.conv1"), store);
        self.conv2.export(&format!("{prefix}.conv2"), store);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.conv1.import(&format!("{prefix}.conv1"), store)?;
        self.conv2.import(&format!("{prefix}.conv2"), store)
    }
}

/// Lift → fuse → collapse, attached after a conv block.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarFusion {
    pub fusion: ImageFusion,
    pub height: HeightEmbedding,
    /// Skip image sampling (lift and collapse only).
    pub sample_image: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarStage {
    pub block: BevConvBlock,
    pub fusion: Option<PillarFusion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PillarBackboneConfig {
    pub channels: [usize; 6],
    pub strides: [usize; 6],
    pub z_bins: usize,
}

impl Default for PillarBackboneConfig {
    fn default() -> Self {
        Self {
            channels: [16; 6],
            strides: [1; 6],
            z_bins: 10,
        }
    }
}

/// Voxel-level state exposed by the stage carrying the semantic head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub stage: usize,
    pub spec: VoxelGridSpec,
    pub stride: u32,
    pub coords: Vec<Coord>,
    pub centroids: CentroidMap,
    pub scores: Vec<f64>,
}

impl HeadTrace {
    /// Score of the voxel each point falls in; `None` outside the grid or
    /// in a voxel the head did not see.
    pub fn point_scores(&self, points: &[[f64; 3]]) -> Vec<Option<f64>> {
        let s = self.stride as i32;
        points
            .iter()
            .map(|&p| {
                let c = self.spec.index_of(p)?.map(|v| v.div_euclid(s));
                self.coords.binary_search(&c).ok().map(|k| self.scores[k])
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarOutput {
    pub bev: BevMap,
    pub head: Option<HeadTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarBackbone {
    pub grid: VoxelGridSpec,
    pub stages: Vec<PillarStage>,
    pub head: Option<(usize, SemanticHead)>,
}

impl PillarBackbone {
    /// Runs the whole variant on an already-cropped cloud. `c_in`-wide
    /// pillar features are the per-pillar mean of the point channels.
    pub fn forward(&self, pillars: &SparseTensor, ctx: &FusionContext<'_>) -> Result<PillarOutput> {
        pillar_pipeline_forward(pillars, ctx, self)
    }
}

fn check_finite(bev: &BevMap, stage: String) -> Result<()> {
    if bev.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage })
    }
}

pub fn pillar_pipeline_forward(
    pillars: &SparseTensor,
    ctx: &FusionContext<'_>,
    net: &PillarBackbone,
) -> Result<PillarOutput> {
    let mut bev = scatter_pillars(pillars)?;
    let mut head = None;
    for (i, stage) in net.stages.iter().enumerate() {
        bev = stage.block.forward(&bev)?;
        check_finite(&bev, format!("pillar block {i}"))?;
        if let Some(f) = &stage.fusion {
            let (lifted, cents) = lift_bev_to_voxels(&bev, ctx.points, &f.height)?;
            let mut fused = if f.sample_image {
                f.fusion.fuse(&lifted, &cents, ctx)?
            } else {
                lifted
            };
            if let Some((at, h)) = &net.head {
                if *at == i {
                    let seg = h.forward(&fused)?;
                    head = Some(HeadTrace {
                        stage: i,
                        spec: fused.spec,
                        stride: fused.stride,
                        coords: fused.coords().to_vec(),
                        centroids: cents,
                        scores: seg.scores,
                    });
                    fused = seg.reweighted;
                }
            }
            if !fused.all_finite() {
                return Err(Error::NonFinite {
                    stage: format!("pillar fusion {i}"),
                });
            }
            let collapsed = collapse_to_bev(&fused);
            bev.data = collapsed.data;
        }
    }
    Ok(PillarOutput { bev, head })
}

impl Parameterized for PillarBackbone {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        for (i, s) in self.stages.iter().enumerate() {
            s.block.export(&format!("{prefix}.block{i}"), store);
            if let Some(f) = &s.fusion {
                f.fusion.export(&format!("{prefix}.block{i}.fusion"), store);
                f.height.export(&format!("{prefix}.block{i}.height"), store);
            }
        }
        if let Some((_, h)) = &self.head {
            h.export(&format!("{prefix}.seg_head"), store);
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.block.import(&format!("{prefix}.block{i}"), store)?;
            if let Some(f) = &mut s.fusion {
                f.fusion
                    .import(&format!("{prefix}.block{i}.fusion"), store)?;
                f.height
                    .import(&format!("{prefix}.block{i}.height"), store)?;
            }
        }
        if let Some((_, h)) = &mut self.head {
            h.import(&format!("{prefix}.seg_head"), store)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VoxelGridSpec {
        VoxelGridSpec::new(
            RangeSpec::new([0.0, 0.0, 0.0], [4.0, 4.0, 4.0]).unwrap(),
            [1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn collapse_single_and_column() {
        let x = SparseTensor::new(vec![[0, 1, 2]], vec![3.0, 4.0], 2, 1, grid()).unwrap();
        let b = collapse_to_bev(&x);
        assert_eq!(b.at(1, 2), &[3.0, 4.0]);
        assert_eq!(b.at(0, 0), &[0.0, 0.0]);
        let x = SparseTensor::new(
            vec![[0, 1, 2], [3, 1, 2]],
            vec![3.0, 4.0, 1.0, -1.0],
            2,
            1,
            grid(),
        )
        .unwrap();
        assert_eq!(collapse_to_bev(&x).at(1, 2), &[4.0, 3.0]);
    }

    fn bev(c: usize, f: impl Fn(usize, usize, usize) -> f64) -> BevMap {
        let mut b = BevMap::zeros(4, 4, c, grid().range, [1.0, 1.0]);
        for y in 0..4 {
            for x in 0..4 {
                for k in 0..c {
                    b.at_mut(y, x)[k] = f(y, x, k);
                }
            }
        }
        b
    }

    #[test]
    fn lift_adds_height_rows() {
        let b = bev(2, |y, x, k| (y * 10 + x) as f64 + k as f64 * 0.5);
        let mut rng = SeededRng::new(2);
        let t = HeightEmbedding::seeded(4, 2, &mut rng);
        let pts = [[2.5, 1.5, 0.5], [2.5, 1.5, 3.5], [0.2, 0.2, 0.2]];
        let (x, cents) = lift_bev_to_voxels(&b, &pts, &t).unwrap();
        assert_eq!(x.len(), 3);
        assert_eq!(cents.len(), 3);
        let a = x.coords().iter().position(|c| *c == [0, 1, 2]).unwrap();
        let c = x.coords().iter().position(|c| *c == [3, 1, 2]).unwrap();
        for k in 0..2 {
            let d = x.feature(a)[k] - x.feature(c)[k];
            assert_eq!(
                d,
                (b.at(1, 2)[k] + t.row(0)[k]) - (b.at(1, 2)[k] + t.row(3)[k])
            );
        }
        let (z, _) = lift_bev_to_voxels(&b, &pts, &HeightEmbedding::zeros(4, 2)).unwrap();
        assert_eq!(z.feature(a), b.at(1, 2));
    }

    #[test]
    fn lift_then_collapse_counts_occupancy() {
        let b = bev(1, |y, x, _| 1.0 + (y + x) as f64);
        let pts = [
            [2.5, 1.5, 0.5],
            [2.5, 1.5, 3.5],
            [2.6, 1.6, 3.6],
            [0.5, 3.5, 1.0],
        ];
        let (x, _) = lift_bev_to_voxels(&b, &pts, &HeightEmbedding::zeros(4, 1)).unwrap();
        let c = collapse_to_bev(&x);
        assert_eq!(c.at(1, 2), &[2.0 * b.at(1, 2)[0]]);
        assert_eq!(c.at(3, 0), &[b.at(3, 0)[0]]);
        assert_eq!(c.at(0, 0), &[0.0]);
    }

    #[test]
    fn conv_stride_shapes() {
        let b = bev(3, |y, x, k| (y + x + k) as f64);
        let mut rng = SeededRng::new(1);
        let l = Conv2dLayer::seeded(3, 5, 2, &mut rng);
        let o = l.forward(&b).unwrap();
        assert_eq!((o.h, o.w, o.c), (2, 2, 5));
        assert_eq!(o.cell, [2.0, 2.0]);
    }
}
