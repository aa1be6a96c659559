//! Central-difference Jacobian, used as the reference for the analytic one.

/// `J[i][j] ≈ (f(x + h_j e_j) − f(x − h_j e_j)) / 2h_j` with
/// `h_j = h·max(|x_j|, scale_j)`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], scale: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut xp = x.to_vec();
    for j in 0..n {
        let hj = h * x[j].abs().max(scale[j]);
        xp[j] = x[j] + hj;
        let fp = f(&xp);
        xp[j] = x[j] - hj;
        let fm = f(&xp);
        xp[j] = x[j];
        let inv = 1.0 / (2.0 * hj);
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) * inv;
        }
    }
    jac
}

/// Richardson extrapolation of two central differences at `h` and `h/2`;
/// cancels the `h²` term, which dominates near tightly smoothed corners.
pub fn richardson_jacobian<F>(f: F, x: &[f64], scale: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let coarse = finite_diff_jacobian(&f, x, scale, h);
    let mut fine = finite_diff_jacobian(&f, x, scale, h / 2.0);
    for (rf, rc) in fine.iter_mut().zip(&coarse) {
        for (a, b) in rf.iter_mut().zip(rc) {
            *a = (4.0 * *a - b) / 3.0;
        }
    }
    fine
}

/// Largest row-normwise relative difference `max_i ‖a_i − b_i‖∞ / ‖a_i‖∞`.
pub fn jacobian_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            let den = ra.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let num = ra.iter().zip(rb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            if den > 0.0 {
                num / den
            } else {
                num
            }
        })
        .fold(0.0, f64::max)
}
