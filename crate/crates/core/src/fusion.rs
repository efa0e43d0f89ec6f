//! Voxel–image fusion blocks.
//!
//! A fusion block is an ordinary block with an extra step between its entry
//! convolution and its residual stack: each active voxel's centroid is
//! projected into the image, image features are sampled around the
//! projection, and the result is added to the voxel feature. Two samplers
//! are provided:
//!
//! * [`sff_sample`]: one bilinear sample per pyramid level, concatenated and
//!   projected.
//! * [`msdff_sample`]: query-driven deformable sampling. Two linear heads on
//!   the query give per-sample pixel offsets and logits; the softmax-weighted
//!   sum of the samples is projected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, CalibrationSet};
use crate::nn::{bilinear_sample, bilinear_sample_into, bilinear_with_jacobian, softmax};
use crate::nn::{AffineLayer, FeaturePyramid, Parameterized, WeightStore};
use crate::par;
use crate::rng::SeededRng;
use crate::sparse::OrdinaryBlock;
use crate::voxel::{compute_centroids, CentroidMap, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionKind {
    Sff,
    Msdff,
}

/// Where fusion sits inside the block: before the residual stack (BR) or
/// after it (AR).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Placement {
    #[default]
    Br,
    Ar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SffParams {
    /// `Σ C_i → C_vox`.
    pub out_proj: AffineLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdffParams {
    /// `C_q → 2·n_levels·n_samples`, pixel offsets laid out `[level][sample][x, y]`.
    pub offset_layer: AffineLayer,
    /// `C_q → n_levels·n_samples` attention logits.
    pub weight_layer: AffineLayer,
    /// `C_level → C_vox`.
    pub out_proj: AffineLayer,
    pub n_levels: usize,
    pub n_samples: usize,
}

impl MsdffParams {
    pub fn new(
        offset_layer: AffineLayer,
        weight_layer: AffineLayer,
        out_proj: AffineLayer,
        n_levels: usize,
        n_samples: usize,
    ) -> Result<Self> {
        let n = n_levels * n_samples;
        if n == 0 {
            return Err(Error::Invalid("need at least one level and sample".into()));
        }
        if offset_layer.c_out() != 2 * n {
            return Err(Error::dim(
                "msdff offset layer",
                2 * n,
                offset_layer.c_out(),
            ));
        }
        if weight_layer.c_out() != n {
            return Err(Error::dim("msdff weight layer", n, weight_layer.c_out()));
        }
        if weight_layer.c_in() != offset_layer.c_in() {
            return Err(Error::dim(
                "msdff query width",
                offset_layer.c_in(),
                weight_layer.c_in(),
            ));
        }
        Ok(Self {
            offset_layer,
            weight_layer,
            out_proj,
            n_levels,
            n_samples,
        })
    }

    pub fn seeded(
        c_query: usize,
        c_level: usize,
        c_out: usize,
        n_levels: usize,
        n_samples: usize,
        seed: u64,
        prefix: &str,
    ) -> Self {
        let n = n_levels * n_samples;
        let s = |name: &str| SeededRng::for_param(seed, &format!("{prefix}.{name}"));
        Self {
            offset_layer: AffineLayer::seeded(c_query, 2 * n, &mut s("offset")),
            weight_layer: AffineLayer::seeded(c_query, n, &mut s("weight")),
            out_proj: AffineLayer::seeded(c_level, c_out, &mut s("out_proj")),
            n_levels,
            n_samples,
        }
    }

    pub fn c_query(&self) -> usize {
        self.offset_layer.c_in()
    }

    fn check(&self, pyramid: &FeaturePyramid, q: &[f64]) -> Result<()> {
        if pyramid.n_levels() != self.n_levels {
            return Err(Error::dim(
                "pyramid levels",
                self.n_levels,
                pyramid.n_levels(),
            ));
        }
        let c = pyramid.uniform_channels().ok_or_else(|| {
            Error::Invalid("deformable sampling needs equal channels per level".into())
        })?;
        if c != self.out_proj.c_in() {
            return Err(Error::dim("msdff level channels", self.out_proj.c_in(), c));
        }
        if q.len() != self.c_query() {
            return Err(Error::dim("msdff query", self.c_query(), q.len()));
        }
        Ok(())
    }
}

/// One deformable sample: where it landed and how much it counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub level: usize,
    pub position: [f64; 2],
    pub weight: f64,
}

/// Sample positions and normalized weights for a query around `reference`.
pub fn msdff_sample_points(
    reference: [f64; 2],
    pyramid: &FeaturePyramid,
    q: &[f64],
    params: &MsdffParams,
) -> Result<Vec<SamplePoint>> {
    params.check(pyramid, q)?;
    let offsets = params.offset_layer.forward(q)?;
    let weights = softmax(&params.weight_layer.forward(q)?);
    let mut out = Vec::with_capacity(weights.len());
    for (i, level) in pyramid.levels.iter().enumerate() {
        for j in 0..params.n_samples {
            let t = i * params.n_samples + j;
            out.push(SamplePoint {
                level: i,
                position: [
                    reference[0] + offsets[2 * t] / level.width() as f64,
                    reference[1] + offsets[2 * t + 1] / level.height() as f64,
                ],
                weight: weights[t],
            });
        }
    }
    Ok(out)
}

/// Concatenated per-level samples at `reference`.
pub fn sample_all_levels(reference: [f64; 2], pyramid: &FeaturePyramid) -> Vec<f64> {
    pyramid
        .levels
        .iter()
        .flat_map(|l| bilinear_sample(l, reference))
        .collect()
}

/// Single-point fusion: project the concatenated per-level samples.
/// `None` (not in view) samples zeros, leaving only the projection bias.
pub fn sff_sample(
    reference: Option<[f64; 2]>,
    pyramid: &FeaturePyramid,
    out_proj: &AffineLayer,
) -> Result<Vec<f64>> {
    let input = match reference {
        Some(r) => sample_all_levels(r, pyramid),
        None => vec![0.0; pyramid.total_channels()],
    };
    out_proj.forward(&input)
}

/// Weighted sum of deformable samples, before the output projection.
fn msdff_aggregate(
    reference: [f64; 2],
    pyramid: &FeaturePyramid,
    q: &[f64],
    params: &MsdffParams,
) -> Result<Vec<f64>> {
    let points = msdff_sample_points(reference, pyramid, q, params)?;
    let mut agg = vec![0.0; params.out_proj.c_in()];
    for p in &points {
        bilinear_sample_into(&pyramid.levels[p.level], p.position, p.weight, &mut agg);
    }
    Ok(agg)
}

/// Deformable multi-scale fusion for query `q` at `reference`.
pub fn msdff_sample(
    reference: Option<[f64; 2]>,
    pyramid: &FeaturePyramid,
    q: &[f64],
    params: &MsdffParams,
) -> Result<Vec<f64>> {
    let agg = match reference {
        Some(r) => msdff_aggregate(r, pyramid, q, params)?,
        None => {
            params.check(pyramid, q)?;
            vec![0.0; params.out_proj.c_in()]
        }
    };
    params.out_proj.forward(&agg)
}

/// Output of [`msdff_sample`] with analytic Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdffJacobians {
    pub value: Vec<f64>,
    /// Row-major `C_out × C_q`.
    pub d_query: Vec<f64>,
    /// Row-major `C_out × 2`.
    pub d_reference: Vec<f64>,
}

pub fn msdff_jacobians(
    reference: [f64; 2],
    pyramid: &FeaturePyramid,
    q: &[f64],
    params: &MsdffParams,
) -> Result<MsdffJacobians> {
    params.check(pyramid, q)?;
    let cq = params.c_query();
    let c = params.out_proj.c_in();
    let offsets = params.offset_layer.forward(q)?;
    let w = softmax(&params.weight_layer.forward(q)?);

    // abar = Σ_t w_t · A_w[t]
    let mut abar = vec![0.0; cq];
    for (t, &wt) in w.iter().enumerate() {
        for (a, &r) in abar.iter_mut().zip(params.weight_layer.row(t)) {
            *a += wt * r;
        }
    }

    let mut agg = vec![0.0; c];
    let mut d_agg_q = vec![0.0; c * cq];
    let mut d_agg_ref = vec![0.0; c * 2];
    for (i, level) in pyramid.levels.iter().enumerate() {
        let (wi, hi) = (level.width() as f64, level.height() as f64);
        for j in 0..params.n_samples {
            let t = i * params.n_samples + j;
            let pos = [
                reference[0] + offsets[2 * t] / wi,
                reference[1] + offsets[2 * t + 1] / hi,
            ];
            let (s, dx, dy) = bilinear_with_jacobian(level, pos);
            let wt = w[t];
            let aw = params.weight_layer.row(t);
            let aox = params.offset_layer.row(2 * t);
            let aoy = params.offset_layer.row(2 * t + 1);
            for k in 0..c {
                agg[k] += wt * s[k];
                d_agg_ref[2 * k] += wt * dx[k];
                d_agg_ref[2 * k + 1] += wt * dy[k];
                let row = &mut d_agg_q[k * cq..(k + 1) * cq];
                for m in 0..cq {
                    row[m] += wt * (s[k] * aw[m] + dx[k] * aox[m] / wi + dy[k] * aoy[m] / hi);
                }
            }
        }
    }
    // softmax coupling: − agg ⊗ abar
    for k in 0..c {
        for m in 0..cq {
            d_agg_q[k * cq + m] -= agg[k] * abar[m];
        }
    }

    let value = params.out_proj.forward(&agg)?;
    let c_out = params.out_proj.c_out();
    let mut d_query = vec![0.0; c_out * cq];
    let mut d_reference = vec![0.0; c_out * 2];
    for o in 0..c_out {
        let wrow = params.out_proj.row(o);
        for k in 0..c {
            for m in 0..cq {
                d_query[o * cq + m] += wrow[k] * d_agg_q[k * cq + m];
            }
            d_reference[2 * o] += wrow[k] * d_agg_ref[2 * k];
            d_reference[2 * o + 1] += wrow[k] * d_agg_ref[2 * k + 1];
        }
    }
    Ok(MsdffJacobians {
        value,
        d_query,
        d_reference,
    })
}

/// Initial query `Affine([f_vox, f_img¹, p])`, with `p` the voxel center
/// normalized by the grid extent.
pub fn init_query(
    f_vox: &[f64],
    f_img_level1: &[f64],
    p_norm: [f64; 3],
    layer: &AffineLayer,
) -> Result<Vec<f64>> {
    let mut cat = Vec::with_capacity(f_vox.len() + f_img_level1.len() + 3);
    cat.extend_from_slice(f_vox);
    cat.extend_from_slice(f_img_level1);
    cat.extend_from_slice(&p_norm);
    layer.forward(&cat)
}

/// Additive fusion.
pub fn fuse_features(f_img: &[f64], f_vox: &[f64]) -> Result<Vec<f64>> {
    if f_img.len() != f_vox.len() {
        return Err(Error::dim("fusion operands", f_vox.len(), f_img.len()));
    }
    Ok(f_img.iter().zip(f_vox).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSampler {
    Sff(SffParams),
    Msdff(MsdffParams),
}

impl ImageSampler {
    pub fn kind(&self) -> FusionKind {
        match self {
            ImageSampler::Sff(_) => FusionKind::Sff,
            ImageSampler::Msdff(_) => FusionKind::Msdff,
        }
    }

    pub fn out_proj(&self) -> &AffineLayer {
        match self {
            ImageSampler::Sff(p) => &p.out_proj,
            ImageSampler::Msdff(p) => &p.out_proj,
        }
    }

    pub fn out_proj_mut(&mut self) -> &mut AffineLayer {
        match self {
            ImageSampler::Sff(p) => &mut p.out_proj,
            ImageSampler::Msdff(p) => &mut p.out_proj,
        }
    }
}

impl Parameterized for ImageSampler {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        match self {
            ImageSampler::Sff(p) => p.out_proj.export(&format!("{prefix}.out_proj"), store),
            ImageSampler::Msdff(p) => {
                p.offset_layer.export(&format!("{prefix}.offset"), store);
                p.weight_layer.export(&format!("{prefix}.weight"), store);
                p.out_proj.export(&format!("{prefix}.out_proj"), store);
            }
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        match self {
            ImageSampler::Sff(p) => p.out_proj.import(&format!("{prefix}.out_proj"), store),
            ImageSampler::Msdff(p) => {
                p.offset_layer.import(&format!("{prefix}.offset"), store)?;
                p.weight_layer.import(&format!("{prefix}.weight"), store)?;
                p.out_proj.import(&format!("{prefix}.out_proj"), store)
            }
        }
    }
}

/// Frame-level inputs shared by every fusion block.
#[derive(Debug, Clone, Copy)]
pub struct FusionContext<'a> {
    pub pyramid: &'a FeaturePyramid,
    pub calib: &'a CalibrationSet,
    /// Cropped radar points `(x, y, z)`, the source of voxel centroids.
    pub points: &'a [[f64; 3]],
}

/// The image half of a fusion block: sampler, optional query
/// initialization, and the out-of-view policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFusion {
    pub sampler: ImageSampler,
    /// Present on the first deformable block only; later blocks use the
    /// voxel feature itself as the query.
    pub query_init: Option<AffineLayer>,
    /// Zero the image contribution of out-of-view voxels entirely instead of
    /// passing the projection bias through.
    pub zero_out_of_view: bool,
}

impl ImageFusion {
    /// Adds sampled image features to every voxel of `x`, projecting each
    /// voxel's centroid as the reference point.
    pub fn fuse(
        &self,
        x: &SparseTensor,
        centroids: &CentroidMap,
        ctx: &FusionContext<'_>,
    ) -> Result<SparseTensor> {
        let c = x.channels();
        if self.sampler.out_proj().c_out() != c {
            return Err(Error::dim(
                "fusion output width",
                c,
                self.sampler.out_proj().c_out(),
            ));
        }
        if centroids.len() != x.len() {
            return Err(Error::dim("fusion centroids", x.len(), centroids.len()));
        }
        let extent = x.spec.range.extent();
        let rows = par::map_range(x.len(), |k| -> Result<Vec<f64>> {
            let f_vox = x.feature(k);
            let proj = project_point(centroids.0[k].position, ctx.calib);
            let reference = proj.in_view.then_some(proj.normalized);
            if reference.is_none() && self.zero_out_of_view {
                return Ok(f_vox.to_vec());
            }
            let f_img = match &self.sampler {
                ImageSampler::Sff(p) => sff_sample(reference, ctx.pyramid, &p.out_proj)?,
                ImageSampler::Msdff(p) => {
                    let q = match &self.query_init {
                        Some(layer) => {
                            let level1 = &ctx.pyramid.levels[0];
                            let f1 = match reference {
                                Some(r) => bilinear_sample(level1, r),
                                None => vec![0.0; level1.channels()],
                            };
                            let center = x.spec.voxel_center(x.coords()[k], x.stride);
                            let p_norm = std::array::from_fn(|a| {
                                (center[a] - x.spec.range.min[a]) / extent[a]
                            });
                            init_query(f_vox, &f1, p_norm, layer)?
                        }
                        None => f_vox.to_vec(),
                    };
                    msdff_sample(reference, ctx.pyramid, &q, p)?
                }
            };
            fuse_features(&f_img, f_vox)
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        x.with_features(rows.concat(), c)
    }

    /// Sampler (and query initializer, when `first` and deformable) for a
    /// block of width `c`, seeded by name under `prefix`.
    pub fn seeded(
        kind: FusionKind,
        c: usize,
        pyramid_channels: &[usize],
        n_samples: usize,
        first: bool,
        seed: u64,
        prefix: &str,
    ) -> Result<Self> {
        let n_levels = pyramid_channels.len();
        if n_levels == 0 {
            return Err(Error::Config(
                "image pyramid needs at least one level".into(),
            ));
        }
        let (sampler, query_init) = match kind {
            FusionKind::Sff => {
                let total = pyramid_channels.iter().sum();
                let out_proj = AffineLayer::seeded(
                    total,
                    c,
                    &mut SeededRng::for_param(seed, &format!("{prefix}.out_proj")),
                );
                (ImageSampler::Sff(SffParams { out_proj }), None)
            }
            FusionKind::Msdff => {
                let cl = pyramid_channels[0];
                if pyramid_channels.iter().any(|&v| v != cl) {
                    return Err(Error::Config(
                        "deformable fusion needs the same channel count on every level".into(),
                    ));
                }
                let params = MsdffParams::seeded(c, cl, c, n_levels, n_samples, seed, prefix);
                let query_init = first.then(|| {
                    AffineLayer::seeded(
                        c + cl + 3,
                        c,
                        &mut SeededRng::for_param(seed, &format!("{prefix}.query_init")),
                    )
                });
                (ImageSampler::Msdff(params), query_init)
            }
        };
        Ok(Self {
            sampler,
            query_init,
            zero_out_of_view: false,
        })
    }
}

impl Parameterized for ImageFusion {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.sampler.export(prefix, store);
        if let Some(q) = &self.query_init {
            q.export(&format!("{prefix}.query_init"), store);
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.sampler.import(prefix, store)?;
        if let Some(q) = &mut self.query_init {
            q.import(&format!("{prefix}.query_init"), store)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock {
    pub block: OrdinaryBlock,
    pub fusion: ImageFusion,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub tensor: SparseTensor,
    pub centroids: CentroidMap,
}

impl FusionBlock {
    pub fn forward(&self, x: &SparseTensor, ctx: &FusionContext<'_>) -> Result<FusionOutput> {
        fusion_block_forward(x, ctx, self)
    }
}

/// BR: entry conv → centroids → sample → fuse → residuals.
/// AR: entry conv → residuals → centroids → sample → fuse.
pub fn fusion_block_forward(
    x: &SparseTensor,
    ctx: &FusionContext<'_>,
    block: &FusionBlock,
) -> Result<FusionOutput> {
    let entry = block.block.entry_forward(x)?;
    let centroids = compute_centroids(ctx.points, &entry.spec, entry.coords(), entry.stride);
    let tensor = match block.placement {
        Placement::Br => {
            let fused = block.fusion.fuse(&entry, &centroids, ctx)?;
            block.block.residual_forward(fused)?
        }
        Placement::Ar => {
            let processed = block.block.residual_forward(entry)?;
            block.fusion.fuse(&processed, &centroids, ctx)?
        }
    };
    Ok(FusionOutput { tensor, centroids })
}

impl Parameterized for FusionBlock {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.block.export(prefix, store);
        self.fusion.export(&format!("{prefix}.fusion"), store);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.block.import(prefix, store)?;
        self.fusion.import(&format!("{prefix}.fusion"), store)
    }
}
