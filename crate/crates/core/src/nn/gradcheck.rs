//! Central finite differences, used as the oracle for analytic Jacobians.

/// `∂f/∂x_k ≈ (f(x + h·e_k) − f(x − h·e_k)) / 2h` for every `k`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function, row-major `m × n` for `f: R^n → R^m`.
pub fn finite_diff_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m * n];
    for (k, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[i * n + k] = v;
        }
    }
    out
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
