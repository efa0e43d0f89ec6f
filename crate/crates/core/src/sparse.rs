//! Hash-indexed sparse 3D convolution.
//!
//! Kernels are 3×3×3 with padding 1 and follow the cross-correlation
//! convention: output voxel `o` reads input voxel `stride·o + d` through tap
//! `d ∈ {−1, 0, 1}³`. Weights are stored `[tap][c_in][c_out]` with tap index
//! `(dz+1)·9 + (dy+1)·3 + (dx+1)`.
//!
//! Every output row is computed by gathering its own neighbors, so results
//! do not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Parameterized, WeightStore};
use crate::par;
use crate::rng::SeededRng;
use crate::voxel::{Coord, SparseTensor};

pub const TAPS: usize = 27;

pub fn tap_offset(k: usize) -> Coord {
    [
        (k / 9) as i32 - 1,
        ((k / 3) % 3) as i32 - 1,
        (k % 3) as i32 - 1,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Submanifold,
    Strided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseConvLayer {
    pub kind: ConvKind,
    weight: Vec<f64>,
    bias: Vec<f64>,
    c_in: usize,
    c_out: usize,
    pub stride: u32,
}

impl SparseConvLayer {
    pub fn new(
        kind: ConvKind,
        weight: Vec<f64>,
        bias: Vec<f64>,
        c_in: usize,
        c_out: usize,
        stride: u32,
    ) -> Result<Self> {
        if weight.len() != TAPS * c_in * c_out {
            return Err(Error::dim(
                "sparse conv weight",
                TAPS * c_in * c_out,
                weight.len(),
            ));
        }
        if bias.len() != c_out {
            return Err(Error::dim("sparse conv bias", c_out, bias.len()));
        }
        match (kind, stride) {
            (ConvKind::Submanifold, 1) | (ConvKind::Strided, 2) => {}
            _ => {
                return Err(Error::Invalid(format!(
                    "{kind:?} convolution cannot have stride {stride}"
                )))
            }
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "sparse conv parameters must be finite".into(),
            ));
        }
        Ok(Self {
            kind,
            weight,
            bias,
            c_in,
            c_out,
            stride,
        })
    }

    pub fn zeros(kind: ConvKind, c_in: usize, c_out: usize) -> Self {
        let stride = if kind == ConvKind::Strided { 2 } else { 1 };
        Self {
            kind,
            weight: vec![0.0; TAPS * c_in * c_out],
            bias: vec![0.0; c_out],
            c_in,
            c_out,
            stride,
        }
    }

    /// Uniform in `[-k, k]`, `k = 1/sqrt(27·c_in)`.
    pub fn seeded(kind: ConvKind, c_in: usize, c_out: usize, rng: &mut SeededRng) -> Self {
        let mut l = Self::zeros(kind, c_in, c_out);
        let k = 1.0 / ((TAPS * c_in.max(1)) as f64).sqrt();
        l.weight.iter_mut().for_each(|w| *w = rng.symmetric_f32(k));
        l.bias.iter_mut().for_each(|b| *b = rng.symmetric_f32(k));
        l
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `[c_in][c_out]` slice of tap `k`.
    pub fn tap(&self, k: usize) -> &[f64] {
        let n = self.c_in * self.c_out;
        &self.weight[k * n..(k + 1) * n]
    }

    pub fn forward(&self, x: &SparseTensor) -> Result<SparseTensor> {
        match self.kind {
            ConvKind::Submanifold => submanifold_conv(x, self),
            ConvKind::Strided => strided_sparse_conv(x, self),
        }
    }

    fn accumulate(&self, k: usize, input: &[f64], out: &mut [f64]) {
        let w = self.tap(k);
        for (ci, &v) in input.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let row = &w[ci * self.c_out..(ci + 1) * self.c_out];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o += v * wv;
            }
        }
    }

    fn gather(
        &self,
        x: &SparseTensor,
        index: &crate::voxel::CoordIndex,
        center: Coord,
    ) -> Vec<f64> {
        let mut out = self.bias.clone();
        for k in 0..TAPS {
            let d = tap_offset(k);
            let src = [center[0] + d[0], center[1] + d[1], center[2] + d[2]];
            if let Some(row) = index.get(src) {
                self.accumulate(k, x.feature(row), &mut out);
            }
        }
        out
    }
}

impl Parameterized for SparseConvLayer {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(
            format!("{prefix}.weight"),
            vec![3, 3, 3, self.c_in, self.c_out],
            &self.weight,
        );
        store.insert(format!("{prefix}.bias"), vec![self.c_out], &self.bias);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.weight = store.take(
            &format!("{prefix}.weight"),
            &[3, 3, 3, self.c_in, self.c_out],
        )?;
        self.bias = store.take(&format!("{prefix}.bias"), &[self.c_out])?;
        Ok(())
    }
}

fn check_channels(x: &SparseTensor, layer: &SparseConvLayer) -> Result<()> {
    if x.channels() != layer.c_in {
        return Err(Error::dim(
            "sparse conv input channels",
            layer.c_in,
            x.channels(),
        ));
    }
    Ok(())
}

/// Submanifold convolution: the output active set is the input active set.
pub fn submanifold_conv(x: &SparseTensor, layer: &SparseConvLayer) -> Result<SparseTensor> {
    if layer.kind != ConvKind::Submanifold {
        return Err(Error::Invalid(
            "submanifold_conv needs a submanifold layer".into(),
        ));
    }
    check_channels(x, layer)?;
    let index = x.index();
    let rows = par::map_range(x.len(), |i| layer.gather(x, &index, x.coords()[i]));
    Ok(SparseTensor::from_sorted(
        x.coords().to_vec(),
        rows.concat(),
        layer.c_out,
        x.stride,
        x.spec,
    ))
}

/// Output sites of a stride-2, 3³, padding-1 convolution: every `o` with
/// some active `2·o + d`, `d ∈ {−1, 0, 1}³`, inside the output grid.
pub fn strided_output_sites(coords: &[Coord], out_dims: [usize; 3]) -> Vec<Coord> {
    let mut out = Vec::with_capacity(coords.len() * 2);
    for c in coords {
        let per_axis: [Vec<i32>; 3] = std::array::from_fn(|a| {
            let v = c[a];
            if v % 2 == 0 {
                vec![v / 2]
            } else {
                vec![(v - 1) / 2, (v + 1) / 2]
            }
            .into_iter()
            .filter(|&o| o >= 0 && (o as usize) < out_dims[a])
            .collect()
        });
        for &z in &per_axis[0] {
            for &y in &per_axis[1] {
                for &x in &per_axis[2] {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Downsampling convolution. Activates every site reachable through a
/// kernel tap, including sites that hold no input voxel of their own.
pub fn strided_sparse_conv(x: &SparseTensor, layer: &SparseConvLayer) -> Result<SparseTensor> {
    if layer.kind != ConvKind::Strided || layer.stride != 2 {
        return Err(Error::Invalid(
            "strided_sparse_conv needs a stride-2 layer".into(),
        ));
    }
    check_channels(x, layer)?;
    let out_stride = x.stride * 2;
    let sites = strided_output_sites(x.coords(), x.spec.dims_at(out_stride));
    let index = x.index();
    let rows = par::map_range(sites.len(), |i| {
        let o = sites[i];
        layer.gather(x, &index, [2 * o[0], 2 * o[1], 2 * o[2]])
    });
    Ok(SparseTensor::from_sorted(
        sites,
        rows.concat(),
        layer.c_out,
        out_stride,
        x.spec,
    ))
}

fn relu_tensor(x: SparseTensor) -> SparseTensor {
    let c = x.channels();
    let f = x.features().iter().map(|v| v.max(0.0)).collect();
    x.with_features(f, c).expect("same shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: SparseConvLayer,
    pub conv2: SparseConvLayer,
}

impl ResidualBlock {
    pub fn seeded(c: usize, seed: u64, prefix: &str) -> Self {
        Self {
            conv1: SparseConvLayer::seeded(
                ConvKind::Submanifold,
                c,
                c,
                &mut SeededRng::for_param(seed, &format!("{prefix}.conv1")),
            ),
            conv2: SparseConvLayer::seeded(
                ConvKind::Submanifold,
                c,
                c,
                &mut SeededRng::for_param(seed, &format!("{prefix}.conv2")),
            ),
        }
    }

    pub fn forward(&self, x: &SparseTensor) -> Result<SparseTensor> {
        residual_block(x, &self.conv1, &self.conv2)
    }
}

impl Parameterized for ResidualBlock {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.conv1.export(&format!("{prefix}.conv1"), store);
        self.conv2.export(&format!("{prefix}.conv2"), store);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.conv1.import(&format!("{prefix}.conv1"), store)?;
        self.conv2.import(&format!("{prefix}.conv2"), store)
    }
}

/// `ReLU(x + conv2(ReLU(conv1(x))))`.
pub fn residual_block(
    x: &SparseTensor,
    conv1: &SparseConvLayer,
    conv2: &SparseConvLayer,
) -> Result<SparseTensor> {
    if conv1.c_in != conv1.c_out || conv2.c_in != conv2.c_out || conv1.c_out != conv2.c_in {
        return Err(Error::Invalid(
            "residual convolutions must keep the channel count".into(),
        ));
    }
    let h = relu_tensor(submanifold_conv(x, conv1)?);
    let y = submanifold_conv(&h, conv2)?;
    let sum = x
        .features()
        .iter()
        .zip(y.features())
        .map(|(a, b)| (a + b).max(0.0))
        .collect();
    x.with_features(sum, x.channels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub n_residual: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    /// 1: the entry layer is submanifold; 2: strided.
    pub stride: u32,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::Config("block channels must be positive".into()));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!(
                "block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }
}

/// Entry convolution (+ReLU) followed by residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinaryBlock {
    pub entry: SparseConvLayer,
    pub residuals: Vec<ResidualBlock>,
}

impl OrdinaryBlock {
    /// Parameters under `prefix` are seeded by name (see
    /// [`SeededRng::for_param`]).
    pub fn seeded(cfg: &BlockConfig, seed: u64, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let kind = if cfg.stride == 2 {
            ConvKind::Strided
        } else {
            ConvKind::Submanifold
        };
        let entry = SparseConvLayer::seeded(
            kind,
            cfg.channels_in,
            cfg.channels_out,
            &mut SeededRng::for_param(seed, &format!("{prefix}.entry")),
        );
        let residuals = (0..cfg.n_residual)
            .map(|i| ResidualBlock::seeded(cfg.channels_out, seed, &format!("{prefix}.res{i}")))
            .collect();
        Ok(Self { entry, residuals })
    }

    pub fn c_out(&self) -> usize {
        self.entry.c_out
    }

    /// `ReLU(entry(x))`: the tensor fusion operates on.
    pub fn entry_forward(&self, x: &SparseTensor) -> Result<SparseTensor> {
        Ok(relu_tensor(self.entry.forward(x)?))
    }

    pub fn residual_forward(&self, mut x: SparseTensor) -> Result<SparseTensor> {
        for r in &self.residuals {
            x = r.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, x: &SparseTensor) -> Result<SparseTensor> {
        self.residual_forward(self.entry_forward(x)?)
    }
}

pub fn ordinary_block(x: &SparseTensor, block: &OrdinaryBlock) -> Result<SparseTensor> {
    block.forward(x)
}

impl Parameterized for OrdinaryBlock {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.entry.export(&format!("{prefix}.entry"), store);
        for (i, r) in self.residuals.iter().enumerate() {
            r.export(&format!("{prefix}.res{i}"), store);
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.entry.import(&format!("{prefix}.entry"), store)?;
        for (i, r) in self.residuals.iter_mut().enumerate() {
            r.import(&format!("{prefix}.res{i}"), store)?;
        }
        Ok(())
    }
}
