//! LCL output filter with series-damped capacitor branch.

use super::params::LclParams;
use crate::phasor::Phasor;
use crate::scalar::Scalar;

/// Admittance of the damped capacitor branch `1/(r_damp − j/(ωc))`.
pub(crate) fn cap_admittance(p: &LclParams) -> Phasor {
    if p.r_damp.is_infinite() {
        return Phasor::ZERO;
    }
    Phasor::new(p.r_damp, -1.0 / (p.omega * p.c)).inv()
}

fn cmul<S: Scalar>(z: Phasor, x: Phasor<S>) -> Phasor<S> {
    Phasor::new(x.re * z.re - x.im * z.im, x.re * z.im + x.im * z.re)
}

pub fn lcl_residuals(p: &LclParams, v_ac: Phasor, i_ac: Phasor, v_m: Phasor, v_t2: Phasor, i_t2: Phasor) -> [f64; 6] {
    residuals(p, v_ac, i_ac, v_m, v_t2, i_t2)
}

pub(crate) fn residuals<S: Scalar>(p: &LclParams, v_ac: Phasor<S>, i_ac: Phasor<S>, v_m: Phasor<S>, v_t2: Phasor<S>, i_t2: Phasor<S>) -> [S; 6] {
    let z1 = Phasor::new(p.r1, p.omega * p.l1);
    let z2 = Phasor::new(p.r2, p.omega * p.l2);
    let e1 = v_ac - v_m - cmul(z1, i_ac);
    let e2 = i_ac - cmul(cap_admittance(p), v_m) - i_t2;
    let e3 = v_m - v_t2 - cmul(z2, i_t2);
    [e1.re, e1.im, e2.re, e2.im, e3.re, e3.im]
}

/// Resistive loss in r1, r2 and the damping resistor.
pub(crate) fn loss(p: &LclParams, i_ac: Phasor, v_m: Phasor, i_t2: Phasor) -> f64 {
    let i_cap = cap_admittance(p) * v_m;
    let damp = if p.r_damp.is_finite() { i_cap.norm_sqr() * p.r_damp } else { 0.0 };
    i_ac.norm_sqr() * p.r1 + i_t2.norm_sqr() * p.r2 + damp
}
