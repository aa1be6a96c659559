//! Rectangular-coordinate phasors.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Complex electrical quantity `re + j·im`. RMS convention throughout.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Phasor<S = f64> {
    pub re: S,
    pub im: S,
}

impl<S: Scalar> Phasor<S> {
    pub fn new(re: S, im: S) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(self) -> S {
        self.re * self.re + self.im * self.im
    }

    /// `Re(self · conj(other))`, the active power of a voltage/current pair.
    pub fn dot(self, other: Self) -> S {
        self.re * other.re + self.im * other.im
    }

    /// `Im(self · conj(other))`, the reactive power of a voltage/current pair.
    pub fn cross(self, other: Self) -> S {
        self.im * other.re - self.re * other.im
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }

    pub fn scale_by(self, k: S) -> Self {
        Self::new(self.re * k, self.im * k)
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn value(self) -> Phasor<f64> {
        Phasor::new(self.re.value(), self.im.value())
    }
}

impl Phasor<f64> {
    pub const ZERO: Self = Self { re: 0.0, im: 0.0 };

    pub fn from_polar(mag: f64, angle_rad: f64) -> Self {
        Self::new(mag * angle_rad.cos(), mag * angle_rad.sin())
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn arg(self) -> f64 {
        self.im.atan2(self.re)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn inv(self) -> Self {
        let d = self.norm_sqr();
        Self::new(self.re / d, -self.im / d)
    }

    pub fn div(self, other: Self) -> Self {
        self * other.inv()
    }

    pub fn lift<S: Scalar>(self) -> Phasor<S> {
        Phasor::new(S::cst(self.re), S::cst(self.im))
    }
}

impl<S: Scalar> Add for Phasor<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl<S: Scalar> Sub for Phasor<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

impl<S: Scalar> Neg for Phasor<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.im)
    }
}

impl<S: Scalar> Mul for Phasor<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}
