//! Scalar abstraction shared by the residual code.
//!
//! Every residual in the inverter block is written once, generic over
//! [`Scalar`]. Evaluating it with `f64` gives residual values; evaluating it
//! with [`Dual`] gives the residual together with its exact partial
//! derivatives with respect to the seeded local variables, which is how the
//! solver stamps the inverter rows of the Jacobian.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the residual functions.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;

    fn powi2(self) -> Self {
        self * self
    }

    /// Clamp on the value; derivatives are zeroed when the clamp is active.
    fn clamp_value(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v < lo {
            Self::cst(lo)
        } else if v > hi {
            Self::cst(hi)
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Forward-mode dual number carrying `N` partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N] }
    }

    /// Independent variable number `k`.
    pub fn var(v: f64, k: usize) -> Self {
        let mut g = [0.0; N];
        g[k] = 1.0;
        Self { v, g }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut g = self.g;
        for x in g.iter_mut() {
            *x *= dv;
        }
        Self { v, g }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, g }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, g }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut g = [0.0; N];
        for k in 0..N {
            g[k] = self.g[k] * o.v + self.v * o.g[k];
        }
        Self { v: self.v * o.v, g }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut g = [0.0; N];
        for k in 0..N {
            g[k] = (self.g[k] - v * o.g[k]) * inv;
        }
        Self { v, g }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self { v: self.v + o, g: self.g }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self { v: self.v - o, g: self.g }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S, y: S) -> S {
        (x * y + x.exp()) / (y.powi2() + 1.0).sqrt() - x * 3.0
    }

    #[test]
    fn dual_matches_central_difference() {
        let (x, y) = (0.7, -1.3);
        let d = f(Dual::<2>::var(x, 0), Dual::<2>::var(y, 1));
        assert!((d.v - f(x, y)).abs() < 1e-15);
        let h = 1e-6;
        let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!((d.g[0] - fx).abs() < 1e-8);
        assert!((d.g[1] - fy).abs() < 1e-8);
    }

    #[test]
    fn clamp_zeroes_derivative_when_active() {
        let d = Dual::<1>::var(2.0, 0).clamp_value(-1.0, 1.0);
        assert_eq!(d.v, 1.0);
        assert_eq!(d.g[0], 0.0);
        let d = Dual::<1>::var(0.5, 0).clamp_value(-1.0, 1.0);
        assert_eq!(d.g[0], 1.0);
    }
}
