//! Two-stage bidirectional inverter: FSC, SSC, LCL filter and the assembled
//! 16-equation block per inverter.

pub mod fsc;
pub mod lcl;
pub mod params;
pub mod smooth;
pub mod ssc;

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::control::{ctrl_current, ctrl_current_s, p_residual, q_residual, ControlSpec, PLaw, QLaw};
use crate::dermodels::{coarse_mpp, Der};
use crate::error::{invalid, Result};
use crate::netmodel::Phase;
use crate::phasor::Phasor;
use crate::scalar::Scalar;

pub use fsc::{fsc_conduction_drops, fsc_residuals, fsc_switching_currents, fsc_voltage_gain};
pub use lcl::lcl_residuals;
pub use params::{presets, DiodeSpec, FscParams, LclParams, MosfetSpec, SscParams, SwitchTiming, TsbiParams};
pub use smooth::{smooth_abs, smooth_sgn};
pub use ssc::{m_cosphi, ssc_conduction_loss, ssc_conduction_voltage, ssc_device_currents, ssc_residuals, ssc_switching_current, DeviceCurrents};

/// Unknowns per inverter.
pub const BLOCK: usize = 16;

pub const STATE_NAMES: [&str; BLOCK] =
    ["v_t1", "i_t1", "d", "i_dc", "m_r", "m_i", "v_ac_re", "v_ac_im", "i_ac_re", "i_ac_im", "v_m_re", "v_m_im", "i_t2_re", "i_t2_im", "p_ctrl", "q_ctrl"];

pub const ROW_NAMES: [&str; BLOCK] = [
    "der",
    "fsc_kvl",
    "fsc_kcl",
    "ssc_re",
    "ssc_im",
    "ssc_power",
    "lcl_kvl1_re",
    "lcl_kvl1_im",
    "lcl_kcl_re",
    "lcl_kcl_im",
    "lcl_kvl2_re",
    "lcl_kvl2_im",
    "ctrl_i_re",
    "ctrl_i_im",
    "p_law",
    "q_law",
];

pub(crate) const IDX_D: usize = 2;
pub(crate) const IDX_M: usize = 4;
pub(crate) const IDX_I_T2: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsbiState {
    pub v_t1: f64,
    pub i_t1: f64,
    pub d: f64,
    pub i_dc: f64,
    pub m_r: f64,
    pub m_i: f64,
    pub v_ac: Phasor,
    pub i_ac: Phasor,
    pub v_m: Phasor,
    pub i_t2: Phasor,
    pub p_ctrl: f64,
    pub q_ctrl: f64,
}

impl TsbiState {
    pub fn zero() -> Self {
        Self::from_array(&[0.0; BLOCK])
    }

    pub fn to_array(&self) -> [f64; BLOCK] {
        [
            self.v_t1,
            self.i_t1,
            self.d,
            self.i_dc,
            self.m_r,
            self.m_i,
            self.v_ac.re,
            self.v_ac.im,
            self.i_ac.re,
            self.i_ac.im,
            self.v_m.re,
            self.v_m.im,
            self.i_t2.re,
            self.i_t2.im,
            self.p_ctrl,
            self.q_ctrl,
        ]
    }

    pub fn from_array(x: &[f64]) -> Self {
        Self {
            v_t1: x[0],
            i_t1: x[1],
            d: x[2],
            i_dc: x[3],
            m_r: x[4],
            m_i: x[5],
            v_ac: Phasor::new(x[6], x[7]),
            i_ac: Phasor::new(x[8], x[9]),
            v_m: Phasor::new(x[10], x[11]),
            i_t2: Phasor::new(x[12], x[13]),
            p_ctrl: x[14],
            q_ctrl: x[15],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite()) && self.d > 0.0 && self.d < 1.0 && self.m_r.hypot(self.m_i) <= 1.0 + 1e-12
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fsc_switching: f64,
    pub fsc_conduction: f64,
    pub ssc_switching: f64,
    pub ssc_reverse_recovery: f64,
    pub ssc_conduction: f64,
    pub lcl_resistive: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.components().iter().sum()
    }

    pub fn components(&self) -> [f64; 6] {
        [self.fsc_switching, self.fsc_conduction, self.ssc_switching, self.ssc_reverse_recovery, self.ssc_conduction, self.lcl_resistive]
    }
}

pub fn loss_breakdown(p: &TsbiParams, s: &TsbiState) -> LossBreakdown {
    let (fsc_switching, fsc_conduction) = fsc::losses(p, s);
    let (ssc_switching, ssc_reverse_recovery, ssc_conduction) = ssc::losses(p, s);
    LossBreakdown {
        fsc_switching,
        fsc_conduction,
        ssc_switching,
        ssc_reverse_recovery,
        ssc_conduction,
        lcl_resistive: lcl::loss(&p.lcl, s.i_ac, s.v_m, s.i_t2),
    }
}

/// One inverter attached phase-to-neutral at a network node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inverter {
    pub id: String,
    pub node: String,
    pub phase: Phase,
    pub params: TsbiParams,
    pub der: Der,
    pub control: ControlSpec,
}

impl Inverter {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.der.validate()?;
        self.control.validate(&self.der)
    }

    /// Divisors bringing each residual row to O(1) at rated operation.
    pub fn row_scales(&self) -> [f64; BLOCK] {
        let v = self.params.v_dc;
        let i = self.params.i_scale();
        let s = self.params.s_rated;
        let der = if self.der.is_pv() { i } else { v };
        let p_law = match self.control.p_law {
            PLaw::ConstantP { .. } => s,
            PLaw::Mppt => i,
        };
        [der, v, i, v, v, s, v, v, i, i, v, v, i, i, p_law, s]
    }

    /// Unscaled residuals. `v_t2` in volts; `v_base` converts it to p.u. for
    /// voltage-dependent laws; `eps_v` regularizes the controlled source, V².
    pub(crate) fn residuals<S: Scalar>(&self, x: &[S], v_t2: Phasor<S>, v_base: f64, eps_v: f64) -> [S; BLOCK] {
        let p = &self.params;
        let (v_t1, i_t1, d, i_dc) = (x[0], x[1], x[2], x[3]);
        let m = Phasor::new(x[4], x[5]);
        let v_ac = Phasor::new(x[6], x[7]);
        let i_ac = Phasor::new(x[8], x[9]);
        let v_m = Phasor::new(x[10], x[11]);
        let i_t2 = Phasor::new(x[12], x[13]);
        let (p_ctrl, q_ctrl) = (x[14], x[15]);

        let r_der = self.der.residual(v_t1, i_t1);
        let (f1, f2) = fsc::residuals(p, v_t1, i_t1, d, i_dc);
        let (s1, s2, s3) = ssc::residuals(p, i_dc, m, v_ac, i_ac);
        let l = lcl::residuals(&p.lcl, v_ac, i_ac, v_m, v_t2, i_t2);
        let ic = i_t2 - ctrl_current_s(v_t2, p_ctrl, q_ctrl, eps_v);
        let r_p = p_residual(&self.control.p_law, &self.der, p_ctrl, v_t1, i_t1);
        let v_mag = match self.control.q_law {
            QLaw::VoltVar(_) => (v_t2.norm_sqr() / (v_base * v_base)).sqrt(),
            _ => S::cst(1.0),
        };
        let r_q = q_residual(&self.control.q_law, p_ctrl, q_ctrl, v_mag);
        [r_der, f1, f2, s1, s2, s3, l[0], l[1], l[2], l[3], l[4], l[5], ic.re, ic.im, r_p, r_q]
    }

    /// Lossless forward estimate of the block at terminal voltage `v_t2` (volts).
    pub fn initial_state(&self, v_t2: Phasor) -> Result<TsbiState> {
        let p = &self.params;
        let (v_t1, p_dc) = match &self.der {
            Der::Battery { params, soc } => {
                let p_set = match self.control.p_law {
                    PLaw::ConstantP { p_set } => p_set,
                    PLaw::Mppt => 0.0,
                };
                let i = params.current_for_power(*soc, p_set).unwrap_or(0.0);
                (params.v_oc(*soc) - i * params.r_int, p_set)
            }
            Der::Pv { params } => {
                let mpp = coarse_mpp(params, 200)?;
                match self.control.p_law {
                    PLaw::Mppt => (mpp.v_mp, mpp.p_mp),
                    PLaw::ConstantP { p_set } => (mpp.v_mp, p_set),
                }
            }
        };
        if !(v_t1 > 0.0) {
            return Err(invalid(format!("inverter {}: non-positive T1 voltage estimate", self.id)));
        }
        let q = match self.control.q_law {
            QLaw::ConstantQ { q_set } => q_set,
            _ => 0.0,
        };
        let i_t2 = ctrl_current(v_t2, p_dc, q, 0.0);
        let z2 = Phasor::new(p.lcl.r2, p.lcl.omega * p.lcl.l2);
        let v_m = v_t2 + z2 * i_t2;
        let i_ac = i_t2 + lcl::cap_admittance(&p.lcl) * v_m;
        let z1 = Phasor::new(p.lcl.r1, p.lcl.omega * p.lcl.l1);
        let v_ac = v_m + z1 * i_ac;
        let mut m = v_ac.scale(SQRT_2 / p.v_dc);
        if m.abs() > 0.95 {
            m = m.scale(0.95 / m.abs());
        }
        let p_ac = v_ac.dot(i_ac);
        let d = (p.v_dc / (p.v_dc + v_t1)).clamp(0.02, 0.98);
        Ok(TsbiState { v_t1, i_t1: p_ac / v_t1, d, i_dc: p_ac / p.v_dc, m_r: m.re, m_i: m.im, v_ac, i_ac, v_m, i_t2, p_ctrl: p_dc, q_ctrl: q })
    }

    /// Literal flat start: unity FSC gain, |m| = 0.8 aligned with the local
    /// phase, zero currents.
    pub fn flat_state(&self, v_t2: Phasor) -> Result<TsbiState> {
        let p = &self.params;
        let v_t1 = match &self.der {
            Der::Battery { params, soc } => params.v_oc(*soc),
            Der::Pv { params } => coarse_mpp(params, 200)?.v_mp,
        };
        let m = Phasor::from_polar(0.8, v_t2.arg());
        let (p_ctrl, q_ctrl) = match (self.control.p_law, self.control.q_law) {
            (PLaw::ConstantP { p_set }, QLaw::ConstantQ { q_set }) => (p_set, q_set),
            (PLaw::ConstantP { p_set }, _) => (p_set, 0.0),
            (_, QLaw::ConstantQ { q_set }) => (0.0, q_set),
            _ => (0.0, 0.0),
        };
        Ok(TsbiState {
            v_t1,
            i_t1: 0.0,
            d: 0.5,
            i_dc: 0.0,
            m_r: m.re,
            m_i: m.im,
            v_ac: m.scale(p.v_dc / SQRT_2),
            i_ac: Phasor::ZERO,
            v_m: v_t2,
            i_t2: Phasor::ZERO,
            p_ctrl,
            q_ctrl,
        })
    }
}

/// The 16 residuals of one inverter at terminal voltage `v_t2` (volts).
/// `v_base` is the per-unit voltage base used by voltage-sensing laws.
pub fn assemble_inverter_block(p: &TsbiParams, s: &TsbiState, der: &Der, ctrl: &ControlSpec, v_t2: Phasor, v_base: f64) -> [f64; BLOCK] {
    let inv = Inverter { id: String::new(), node: String::new(), phase: Phase::A, params: *p, der: *der, control: *ctrl };
    inv.residuals(&s.to_array(), v_t2, v_base, crate::netmodel::DEFAULT_EPS_V * v_base * v_base)
}

/// Port powers and losses of a solved inverter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyAudit {
    pub p_t1: f64,
    pub p_t2: f64,
    pub losses: LossBreakdown,
}

impl EnergyAudit {
    pub fn new(p: &TsbiParams, s: &TsbiState, v_t2: Phasor) -> Self {
        Self { p_t1: s.v_t1 * s.i_t1, p_t2: v_t2.dot(s.i_t2), losses: loss_breakdown(p, s) }
    }

    pub fn mismatch(&self) -> f64 {
        self.p_t1 - self.p_t2 - self.losses.total()
    }

    /// Output over input in the direction of power flow.
    pub fn efficiency(&self) -> f64 {
        if self.p_t1 >= 0.0 {
            self.p_t2 / self.p_t1
        } else {
            self.p_t1 / self.p_t2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dermodels::BatteryParams;

    #[test]
    fn state_roundtrip() {
        let x: Vec<f64> = (0..BLOCK).map(|k| k as f64 * 1.5 - 3.0).collect();
        let s = TsbiState::from_array(&x);
        assert_eq!(s.to_array().to_vec(), x);
    }

    #[test]
    fn lossless_initial_state_satisfies_block() {
        let mut params = TsbiParams::reference(400.0, 10e3, 60.0).lossless();
        params.eps_mag = 1e-30;
        params.eps_sgn = 1e-30;
        let bat = BatteryParams { r_int: 0.0, v_oc_nom: 400.0, ..BatteryParams::powerwall() };
        let inv = Inverter {
            id: "x".into(),
            node: "n".into(),
            phase: Phase::A,
            params,
            der: Der::Battery { params: bat, soc: 0.5 },
            control: ControlSpec::constant(5000.0, 0.0),
        };
        let v_t2 = Phasor::new(240.0, 0.0);
        let s = inv.initial_state(v_t2).unwrap();
        let r = inv.residuals(&s.to_array(), v_t2, 240.0, 0.0);
        let sc = inv.row_scales();
        for k in 0..BLOCK {
            assert!((r[k] / sc[k]).abs() < 1e-9, "{} {}", ROW_NAMES[k], r[k]);
        }
        assert!((s.p_ctrl - s.v_t1 * s.i_t1).abs() < 1e-9);
    }

    #[test]
    fn zero_power_losses_small() {
        let p = TsbiParams::reference(400.0, 10e3, 60.0);
        let mut s = TsbiState::zero();
        s.d = 0.5;
        s.v_t1 = 400.0;
        let l = loss_breakdown(&p, &s);
        assert!(l.total() < 1e-2, "{l:?}");
    }

    #[test]
    fn reversed_currents_same_losses() {
        let p = TsbiParams::reference(400.0, 10e3, 60.0);
        let mut s = TsbiState::zero();
        s.d = 0.45;
        s.v_t1 = 380.0;
        s.i_t1 = 12.0;
        s.i_dc = 11.5;
        s.m_r = 0.8;
        s.m_i = 0.1;
        s.i_ac = Phasor::new(20.0, -3.0);
        s.v_m = Phasor::new(240.0, 10.0);
        s.i_t2 = Phasor::new(20.0, -4.0);
        let a = loss_breakdown(&p, &s);
        let mut r = s;
        r.i_t1 = -s.i_t1;
        r.i_dc = -s.i_dc;
        r.i_ac = -s.i_ac;
        r.i_t2 = -s.i_t2;
        let b = loss_breakdown(&p, &r);
        assert!((a.ssc_conduction - b.ssc_conduction).abs() < 1e-12);
        assert!((a.lcl_resistive - b.lcl_resistive).abs() < 1e-12);
        assert!((a.ssc_switching - b.ssc_switching).abs() < 1e-12);
    }
}
