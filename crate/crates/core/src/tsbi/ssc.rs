//! Second-stage H-bridge under unipolar SPWM.

use std::f64::consts::{PI, SQRT_2};

use super::params::{SscParams, TsbiParams};
use super::smooth::smooth_abs;
use super::TsbiState;
use crate::phasor::Phasor;
use crate::scalar::Scalar;

/// Per-device average and RMS currents of one transistor and one diode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceCurrents {
    pub it_avg: f64,
    pub it_rms: f64,
    pub id_avg: f64,
    pub id_rms: f64,
}

/// `(2√2/π)·f_sw·(t_on + t_off + t_doff)·|I_AC|`, drawn from the DC link.
pub fn ssc_switching_current(p: &SscParams, i_ac_mag: f64) -> f64 {
    switching_current(p, i_ac_mag)
}

pub(crate) fn switching_current<S: Scalar>(p: &SscParams, i_ac_mag: S) -> S {
    i_ac_mag * (2.0 * SQRT_2 / PI * p.f_sw * (p.timing.t_on() + p.timing.t_off() + p.t_doff))
}

pub fn ssc_device_currents(m_cosphi: f64, i_ac_mag: f64) -> DeviceCurrents {
    let x = m_cosphi.abs().min(1.0);
    let a = SQRT_2 * i_ac_mag / (8.0 * PI);
    let r = i_ac_mag / (6.0 * PI.sqrt());
    DeviceCurrents {
        it_avg: a * (4.0 + PI * x),
        id_avg: a * (4.0 - PI * x),
        it_rms: r * (9.0 * PI + 24.0 * x).sqrt(),
        id_rms: r * (9.0 * PI - 24.0 * x).sqrt(),
    }
}

pub fn ssc_conduction_loss(p: &SscParams, m_cosphi: f64, i_ac_mag: f64) -> f64 {
    conduction_loss(p, m_cosphi.abs(), i_ac_mag)
}

/// Total conduction loss of four transistors and four diodes; `x = |M cos φ|`.
pub(crate) fn conduction_loss<S: Scalar>(p: &SscParams, x: S, i: S) -> S {
    let lin = (x * (PI * p.v_t) + 4.0 * p.v_t + (-(x * PI) + 4.0) * p.v_d) * i * (SQRT_2 / (2.0 * PI));
    let quad = (x * (8.0 * p.r_t) + 3.0 * PI * p.r_t + (-(x * 8.0) + 3.0 * PI) * p.r_d) * i * i * (1.0 / (3.0 * PI));
    lin + quad
}

pub fn ssc_conduction_voltage(p_c: f64, i_ac: Phasor, eps_mag: f64) -> Phasor {
    conduction_voltage(p_c, i_ac, eps_mag)
}

pub(crate) fn conduction_voltage<S: Scalar>(p_c: S, i_ac: Phasor<S>, eps_mag: f64) -> Phasor<S> {
    let k = p_c / (i_ac.norm_sqr() + eps_mag);
    i_ac.scale_by(k)
}

pub fn m_cosphi(m_r: f64, m_i: f64, i_ac: Phasor, eps_mag: f64) -> f64 {
    ((m_r * i_ac.re + m_i * i_ac.im) / (i_ac.abs() + eps_mag.sqrt())).clamp(-1.0, 1.0)
}

/// Smooth variant used inside the residuals: `|I_AC|` is replaced by
/// `sqrt(|I_AC|² + eps_mag)`.
pub(crate) fn m_cosphi_smooth<S: Scalar>(m: Phasor<S>, i_ac: Phasor<S>, i_mag: S, eps_mag: f64) -> S {
    (m.dot(i_ac) / (i_mag + eps_mag.sqrt())).clamp_value(-1.0, 1.0)
}

/// Regularized `|I_AC|`.
pub(crate) fn i_mag<S: Scalar>(i_ac: Phasor<S>, eps_mag: f64) -> S {
    (i_ac.norm_sqr() + eps_mag).sqrt()
}

/// Conduction loss and its series voltage at the given modulation and current.
pub(crate) fn conduction<S: Scalar>(p: &TsbiParams, m: Phasor<S>, i_ac: Phasor<S>) -> (S, Phasor<S>) {
    let im = i_mag(i_ac, p.eps_mag);
    let x = smooth_abs(m_cosphi_smooth(m, i_ac, im, p.eps_mag), p.eps_pf);
    let p_c = conduction_loss(&p.ssc, x, im);
    (p_c, conduction_voltage(p_c, i_ac, p.eps_mag))
}

pub fn ssc_residuals(p: &TsbiParams, s: &TsbiState) -> (f64, f64, f64) {
    residuals(p, s.i_dc, Phasor::new(s.m_r, s.m_i), s.v_ac, s.i_ac)
}

pub(crate) fn residuals<S: Scalar>(p: &TsbiParams, i_dc: S, m: Phasor<S>, v_ac: Phasor<S>, i_ac: Phasor<S>) -> (S, S, S) {
    let k = p.v_dc / SQRT_2;
    let (_, vc) = conduction(p, m, i_ac);
    let i_sw = switching_current(&p.ssc, i_mag(i_ac, p.eps_mag));
    let v_id = m.scale(k);
    let r1 = v_ac.re - v_id.re + vc.re;
    let r2 = v_ac.im - v_id.im + vc.im;
    let r3 = (i_dc - i_sw) * p.v_dc - v_id.dot(i_ac);
    (r1, r2, r3)
}

/// `(switching, reverse recovery, conduction)` losses at a state.
pub(crate) fn losses(p: &TsbiParams, s: &TsbiState) -> (f64, f64, f64) {
    let im = i_mag(s.i_ac, p.eps_mag);
    let t = &p.ssc.timing;
    let coeff = 2.0 * SQRT_2 / PI * p.ssc.f_sw * im * p.v_dc;
    let (_, vc) = conduction(p, Phasor::new(s.m_r, s.m_i), s.i_ac);
    (coeff * (t.t_on() + t.t_off()), coeff * p.ssc.t_doff, vc.dot(s.i_ac))
}
