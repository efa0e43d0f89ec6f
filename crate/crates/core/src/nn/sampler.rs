//! Bilinear sampling with zero padding, `align_corners = false`.
//!
//! A normalized coordinate `(x̃, ỹ)` addresses source position
//! `(x̃·W − 0.5, ỹ·H − 0.5)` in pixel-center units, so `(0.5/W, 0.5/H)` is the
//! center of pixel `(0, 0)`. Neighbors outside the map contribute zero.

use super::FeatureMap;

struct Taps {
    x0: i64,
    y0: i64,
    fx: f64,
    fy: f64,
}

fn taps(map: &FeatureMap, coord: [f64; 2]) -> Taps {
    let sx = coord[0] * map.width() as f64 - 0.5;
    let sy = coord[1] * map.height() as f64 - 0.5;
    let x0 = sx.floor();
    let y0 = sy.floor();
    Taps {
        x0: x0 as i64,
        y0: y0 as i64,
        fx: sx - x0,
        fy: sy - y0,
    }
}

fn texel(map: &FeatureMap, x: i64, y: i64) -> Option<&[f64]> {
    if x < 0 || y < 0 || x >= map.width() as i64 || y >= map.height() as i64 {
        None
    } else {
        Some(map.pixel(y as usize, x as usize))
    }
}

/// Accumulates `scale · sample(map, coord)` into `out`.
pub fn bilinear_sample_into(map: &FeatureMap, coord: [f64; 2], scale: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), map.channels());
    if !(coord[0].is_finite() && coord[1].is_finite()) {
        return;
    }
    let t = taps(map, coord);
    let corners = [
        (0, 0, (1.0 - t.fx) * (1.0 - t.fy)),
        (1, 0, t.fx * (1.0 - t.fy)),
        (0, 1, (1.0 - t.fx) * t.fy),
        (1, 1, t.fx * t.fy),
    ];
    for (dx, dy, w) in corners {
        if w == 0.0 {
            continue;
        }
        if let Some(v) = texel(map, t.x0 + dx, t.y0 + dy) {
            let k = scale * w;
            for (o, &s) in out.iter_mut().zip(v) {
                *o += k * s;
            }
        }
    }
}

pub fn bilinear_sample(map: &FeatureMap, coord: [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; map.channels()];
    bilinear_sample_into(map, coord, 1.0, &mut out);
    out
}

/// Sampled value and its derivatives with respect to `x̃` and `ỹ`.
pub fn bilinear_with_jacobian(map: &FeatureMap, coord: [f64; 2]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = map.channels();
    let mut val = vec![0.0; c];
    let mut dx = vec![0.0; c];
    let mut dy = vec![0.0; c];
    let t = taps(map, coord);
    let w = map.width() as f64;
    let h = map.height() as f64;
    // (dx, dy, weight, d weight/d sx, d weight/d sy)
    let corners = [
        (
            0,
            0,
            (1.0 - t.fx) * (1.0 - t.fy),
            -(1.0 - t.fy),
            -(1.0 - t.fx),
        ),
        (1, 0, t.fx * (1.0 - t.fy), 1.0 - t.fy, -t.fx),
        (0, 1, (1.0 - t.fx) * t.fy, -t.fy, 1.0 - t.fx),
        (1, 1, t.fx * t.fy, t.fy, t.fx),
    ];
    for (ox, oy, wt, dwx, dwy) in corners {
        if let Some(v) = texel(map, t.x0 + ox, t.y0 + oy) {
            for k in 0..c {
                val[k] += wt * v[k];
                dx[k] += dwx * w * v[k];
                dy[k] += dwy * h * v[k];
            }
        }
    }
    (val, dx, dy)
}

/// Distance, in source pixels, from `coord` to the nearest integer grid line
/// where the sampler's derivative jumps.
pub fn distance_to_cell_edge(map: &FeatureMap, coord: [f64; 2]) -> f64 {
    let t = taps(map, coord);
    t.fx.min(1.0 - t.fx).min(t.fy).min(1.0 - t.fy)
}
