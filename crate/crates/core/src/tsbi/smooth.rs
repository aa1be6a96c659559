//! Smooth replacements for `sgn` and `|·|`.

use crate::scalar::Scalar;

/// `x / sqrt(x² + eps)`: odd, bounded by 1, derivative `eps / (x² + eps)^{3/2}`.
pub fn smooth_sgn<S: Scalar>(x: S, eps: f64) -> S {
    x / (x * x + eps).sqrt()
}

/// `sqrt(x² + eps)`: within `sqrt(eps)` above `|x|`.
pub fn smooth_abs<S: Scalar>(x: S, eps: f64) -> S {
    (x * x + eps).sqrt()
}

/// `max(x, 0)` built from [`smooth_abs`].
pub fn smooth_ramp<S: Scalar>(x: S, eps: f64) -> S {
    (x + smooth_abs(x, eps)) * 0.5
}
