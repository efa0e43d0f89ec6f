//! Multi-scale BEV neck: bring the last backbone stages to a common stride
//! and sum everything that lands on the same `(x, y)` column.

use crate::error::{Error, Result};
use crate::pillar::BevMap;
use crate::voxel::{Coord, SparseTensor};

/// Multiplies coordinates by `x.stride / reference_stride`.
pub fn rescale_coords(x: &SparseTensor, reference_stride: u32) -> Result<SparseTensor> {
    if reference_stride == 0
        || x.stride < reference_stride
        || !x.stride.is_multiple_of(reference_stride)
    {
        return Err(Error::Invalid(format!(
            "cannot rescale stride {} to {}",
            x.stride, reference_stride
        )));
    }
    let f = (x.stride / reference_stride) as i32;
    let coords: Vec<Coord> = x.coords().iter().map(|c| c.map(|v| v * f)).collect();
    SparseTensor::new(
        coords,
        x.features().to_vec(),
        x.channels(),
        reference_stride,
        x.spec,
    )
}

/// Rescales every tensor to the finest input stride and sums per column.
/// The result does not depend on the input order.
pub fn combine_multiscale(tensors: &[SparseTensor]) -> Result<BevMap> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Invalid("neck needs at least one tensor".into()))?;
    let reference = tensors
        .iter()
        .map(|t| t.stride)
        .min()
        .unwrap_or(first.stride);
    let c = first.channels();
    let mut rows: Vec<(Coord, &[f64])> = Vec::new();
    let rescaled = tensors
        .iter()
        .map(|t| {
            if t.channels() != c {
                return Err(Error::dim("neck channels", c, t.channels()));
            }
            if t.spec != first.spec {
                return Err(Error::Invalid(
                    "neck inputs come from different grids".into(),
                ));
            }
            rescale_coords(t, reference)
        })
        .collect::<Result<Vec<_>>>()?;
    for t in &rescaled {
        rows.extend(
            t.coords()
                .iter()
                .enumerate()
                .map(|(k, &co)| (co, t.feature(k))),
        );
    }
    rows.sort_by(|a, b| {
        (a.0[1], a.0[2], a.0[0])
            .cmp(&(b.0[1], b.0[2], b.0[0]))
            .then_with(|| bits(a.1).cmp(&bits(b.1)))
    });
    let dims = first.spec.dims_at(reference);
    let s = f64::from(reference);
    let spec = first.spec;
    let mut bev = BevMap::zeros(
        dims[1],
        dims[2],
        c,
        spec.range,
        [spec.cell[0] * s, spec.cell[1] * s],
    );
    for (co, f) in rows {
        for (o, v) in bev.at_mut(co[1] as usize, co[2] as usize).iter_mut().zip(f) {
            *o += v;
        }
    }
    Ok(bev)
}

fn bits(f: &[f64]) -> Vec<u64> {
    f.iter().map(|v| v.to_bits()).collect()
}
