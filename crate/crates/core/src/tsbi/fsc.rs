//! First-stage (DC/DC buck-boost) converter.

use super::params::{FscParams, TsbiParams};
use super::smooth::{smooth_abs, smooth_sgn};
use super::TsbiState;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub fn fsc_voltage_gain(d: f64) -> Result<f64> {
    if !(d > 0.0 && d < 1.0) {
        return Err(invalid(format!("duty cycle {d} outside (0, 1)")));
    }
    Ok(gain(d))
}

#[inline]
pub(crate) fn gain<S: Scalar>(d: S) -> S {
    d / (-d + 1.0)
}

/// Shunt switching-loss currents `(I_SW^T1, I_SW^DC)`.
pub fn fsc_switching_currents(p: &FscParams, i_t1: f64, i_dc: f64, eps: f64) -> (f64, f64) {
    switching_currents(p, i_t1, i_dc, eps)
}

pub(crate) fn switching_currents<S: Scalar>(p: &FscParams, i_t1: S, i_dc: S, eps: f64) -> (S, S) {
    let k = p.switching_coeff();
    (smooth_abs(i_t1, eps) * k, smooth_abs(i_dc, eps) * k)
}

/// Series conduction drops `(V_C^T1, V_C^DC)`.
pub fn fsc_conduction_drops(p: &FscParams, d: f64, i_t1: f64, i_dc: f64, eps: f64) -> (f64, f64) {
    conduction_drops(p, d, i_t1, i_dc, eps)
}

pub(crate) fn conduction_drops<S: Scalar>(p: &FscParams, d: S, i_t1: S, i_dc: S, eps: f64) -> (S, S) {
    let r = 2.0 * p.r_t + p.r_l;
    let drop = |i: S| smooth_sgn(i, eps) * (2.0 * p.v_t0) + i * r;
    (d * drop(i_t1), (-d + 1.0) * drop(i_dc))
}

pub fn fsc_residuals(p: &TsbiParams, s: &TsbiState) -> (f64, f64) {
    residuals(p, s.v_t1, s.i_t1, s.d, s.i_dc)
}

pub(crate) fn residuals<S: Scalar>(p: &TsbiParams, v_t1: S, i_t1: S, d: S, i_dc: S) -> (S, S) {
    let g = gain(d);
    let (i_sw1, i_swdc) = switching_currents(&p.fsc, i_t1, i_dc, p.eps_sgn);
    let (vc1, vcdc) = conduction_drops(&p.fsc, d, i_t1, i_dc, p.eps_sgn);
    let r1 = -(g * (v_t1 - vc1)) + p.v_dc + vcdc;
    let r2 = i_dc - (i_t1 - i_sw1) / g + i_swdc;
    (r1, r2)
}

/// `(switching, conduction)` loss of the stage at a state satisfying its residuals.
pub(crate) fn losses(p: &TsbiParams, s: &TsbiState) -> (f64, f64) {
    let (i_sw1, i_swdc) = fsc_switching_currents(&p.fsc, s.i_t1, s.i_dc, p.eps_sgn);
    let (vc1, vcdc) = fsc_conduction_drops(&p.fsc, s.d, s.i_t1, s.i_dc, p.eps_sgn);
    let i_p = s.i_t1 - i_sw1;
    let i_s = i_p / gain(s.d);
    (s.v_t1 * i_sw1 + p.v_dc * i_swdc, vc1 * i_p + vcdc * i_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsbi::params::presets;

    fn table2() -> FscParams {
        TsbiParams::reference(400.0, 10e3, 60.0).fsc
    }

    #[test]
    fn gain_examples() {
        assert_eq!(fsc_voltage_gain(0.5).unwrap(), 1.0);
        assert!((fsc_voltage_gain(0.25).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for d in [0.1, 0.3, 0.77] {
            let g = fsc_voltage_gain(d).unwrap() * fsc_voltage_gain(1.0 - d).unwrap();
            assert!((g - 1.0).abs() < 1e-14);
        }
        assert!(fsc_voltage_gain(0.0).is_err());
        assert!(fsc_voltage_gain(1.0).is_err());
    }

    #[test]
    fn switching_currents_examples() {
        let p = table2();
        let (a, _) = fsc_switching_currents(&p, 10.0, 0.0, 1e-6);
        assert!((a - 0.049).abs() < 1e-8);
        let (z, _) = fsc_switching_currents(&p, 0.0, 0.0, 1e-6);
        assert!((z - p.switching_coeff() * 1e-3).abs() < 1e-15);
        let (m, _) = fsc_switching_currents(&p, -10.0, 0.0, 1e-6);
        assert_eq!(a, m);
    }

    #[test]
    fn conduction_drop_examples() {
        let p = table2();
        assert_eq!(p.r_l, presets::FSC_INDUCTOR_R);
        let (v1, _) = fsc_conduction_drops(&p, 0.5, 10.0, 0.0, 1e-6);
        assert!((v1 - 0.559).abs() < 1e-6);
        let (a, b) = fsc_conduction_drops(&p, 0.5, 0.0, 0.0, 1e-6);
        assert_eq!((a, b), (0.0, 0.0));
        let (f1, f2) = fsc_conduction_drops(&p, 0.4, 7.0, 5.0, 1e-6);
        let (r1, r2) = fsc_conduction_drops(&p, 0.4, -7.0, -5.0, 1e-6);
        assert_eq!((f1, f2), (-r1, -r2));
        assert!(f1 * 7.0 > 0.0 && r2 * -5.0 > 0.0);
    }

    #[test]
    fn lossless_identities() {
        let p = TsbiParams::reference(400.0, 10e3, 60.0).lossless();
        let mut s = TsbiState::zero();
        s.d = 0.5;
        s.v_t1 = 400.0;
        s.i_t1 = 12.0;
        s.i_dc = 12.0;
        let (r1, r2) = fsc_residuals(&p, &s);
        assert!(r1.abs() < 1e-12);
        assert!(r2.abs() < 1e-12);
    }

    /// Solve both residuals for `(v_t1, i_dc)` at fixed `(d, i_t1)` by
    /// fixed-point iteration, then compare the port power difference with the
    /// reported losses.
    #[test]
    fn lossy_power_balance() {
        let p = TsbiParams::reference(400.0, 10e3, 60.0);
        for &(d, i_t1) in &[(0.6, 20.0), (0.35, -15.0), (0.5, 0.3)] {
            let mut s = TsbiState::zero();
            s.d = d;
            s.i_t1 = i_t1;
            s.v_t1 = p.v_dc / gain(d);
            for _ in 0..200 {
                let (i_sw1, i_swdc) = fsc_switching_currents(&p.fsc, s.i_t1, s.i_dc, p.eps_sgn);
                s.i_dc = (s.i_t1 - i_sw1) / gain(d) - i_swdc;
                let (vc1, vcdc) = fsc_conduction_drops(&p.fsc, d, s.i_t1, s.i_dc, p.eps_sgn);
                s.v_t1 = (p.v_dc + vcdc) / gain(d) + vc1;
            }
            let (r1, r2) = fsc_residuals(&p, &s);
            assert!(r1.abs() < 1e-10 && r2.abs() < 1e-12, "{r1} {r2}");
            let (sw, cond) = losses(&p, &s);
            let gap = s.v_t1 * s.i_t1 - p.v_dc * s.i_dc - sw - cond;
            assert!(gap.abs() < 1e-9, "gap {gap}");
            assert!(sw >= 0.0 && cond >= 0.0);
        }
    }
}
