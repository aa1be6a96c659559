//! Active/reactive power control laws and the controlled current source at T2.

use serde::{Deserialize, Serialize};

use crate::dermodels::{pv_didv, Der};
use crate::error::{invalid, Result};
use crate::phasor::Phasor;
use crate::scalar::Scalar;
use crate::tsbi::smooth::smooth_ramp;

pub const DEFAULT_EPS_VV: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PLaw {
    ConstantP { p_set: f64 },
    Mppt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfSign {
    /// Absorbing reactive power.
    Leading,
    /// Injecting reactive power.
    Lagging,
}

impl PfSign {
    fn factor(self) -> f64 {
        match self {
            PfSign::Leading => -1.0,
            PfSign::Lagging => 1.0,
        }
    }
}

/// Piecewise-linear Volt-VAR curve in p.u. voltage, vars output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltVarCurve {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub q_max: f64,
    pub q_min: f64,
    #[serde(default = "default_eps_vv")]
    pub eps_vv: f64,
}

fn default_eps_vv() -> f64 {
    DEFAULT_EPS_VV
}

impl VoltVarCurve {
    /// Breakpoints (0.90, 0.98, 1.02, 1.10) p.u. and ±0.25 p.u. of the rating.
    pub fn default_for(s_rated: f64) -> Self {
        Self { v1: 0.90, v2: 0.98, v3: 1.02, v4: 1.10, q_max: 0.25 * s_rated, q_min: -0.25 * s_rated, eps_vv: DEFAULT_EPS_VV }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v1 < self.v2 && self.v2 <= self.v3 && self.v3 < self.v4) {
            return Err(invalid("volt-var breakpoints must satisfy v1 < v2 <= v3 < v4"));
        }
        if !(self.q_max >= 0.0 && self.q_min <= 0.0) {
            return Err(invalid("volt-var requires q_max >= 0 >= q_min"));
        }
        if !(self.eps_vv > 0.0) {
            return Err(invalid("eps_vv must be positive"));
        }
        Ok(())
    }

    /// Exact piecewise curve.
    pub fn piecewise(&self, v: f64) -> f64 {
        if v <= self.v1 {
            self.q_max
        } else if v < self.v2 {
            self.q_max * (self.v2 - v) / (self.v2 - self.v1)
        } else if v <= self.v3 {
            0.0
        } else if v < self.v4 {
            self.q_min * (v - self.v3) / (self.v4 - self.v3)
        } else {
            self.q_min
        }
    }

    /// Bound on `|voltvar_q − piecewise|` over all voltages.
    pub fn smoothing_bound(&self) -> f64 {
        (self.q_max / (self.v2 - self.v1) + self.q_min.abs() / (self.v4 - self.v3)) * self.eps_vv.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum QLaw {
    ConstantQ { q_set: f64 },
    ConstantPf { pf: f64, sign: PfSign },
    VoltVar(VoltVarCurve),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub p_law: PLaw,
    pub q_law: QLaw,
}

impl ControlSpec {
    pub fn constant(p_set: f64, q_set: f64) -> Self {
        Self { p_law: PLaw::ConstantP { p_set }, q_law: QLaw::ConstantQ { q_set } }
    }

    pub fn validate(&self, der: &Der) -> Result<()> {
        if let PLaw::Mppt = self.p_law {
            if !der.is_pv() {
                return Err(invalid("MPPT control requires a PV source"));
            }
        }
        match self.q_law {
            QLaw::ConstantPf { pf, .. } if !(pf > 0.0 && pf <= 1.0) => Err(invalid(format!("power factor {pf} outside (0, 1]"))),
            QLaw::VoltVar(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

/// Current injected at T2 that delivers `(p_ctrl, q_ctrl)` at voltage `v_t2`.
pub fn ctrl_current(v_t2: Phasor, p_ctrl: f64, q_ctrl: f64, eps_v: f64) -> Phasor {
    ctrl_current_s(v_t2, p_ctrl, q_ctrl, eps_v)
}

pub(crate) fn ctrl_current_s<S: Scalar>(v: Phasor<S>, p: S, q: S, eps_v: f64) -> Phasor<S> {
    let den = v.norm_sqr() + eps_v;
    Phasor::new((p * v.re + q * v.im) / den, (p * v.im - q * v.re) / den)
}

pub fn p_law_residual(law: &PLaw, der: &Der, p_ctrl: f64, v_t1: f64, i_t1: f64) -> f64 {
    p_residual(law, der, p_ctrl, v_t1, i_t1)
}

pub(crate) fn p_residual<S: Scalar>(law: &PLaw, der: &Der, p_ctrl: S, v_t1: S, i_t1: S) -> S {
    match (law, der) {
        (PLaw::ConstantP { p_set }, _) => p_ctrl - *p_set,
        (PLaw::Mppt, Der::Pv { params }) => i_t1 + v_t1 * pv_didv(params, v_t1, i_t1),
        // rejected by ControlSpec::validate
        (PLaw::Mppt, Der::Battery { .. }) => p_ctrl,
    }
}

pub fn voltvar_q(c: &VoltVarCurve, v_mag: f64) -> f64 {
    voltvar_q_s(c, v_mag)
}

pub(crate) fn voltvar_q_s<S: Scalar>(c: &VoltVarCurve, v: S) -> S {
    let e = c.eps_vv;
    let seg1 = smooth_ramp(v - c.v1, e) - smooth_ramp(v - c.v2, e);
    let seg2 = smooth_ramp(v - c.v3, e) - smooth_ramp(v - c.v4, e);
    -(seg1 * (c.q_max / (c.v2 - c.v1))) + c.q_max + seg2 * (c.q_min / (c.v4 - c.v3))
}

pub fn q_law_residual(law: &QLaw, p_ctrl: f64, q_ctrl: f64, v_t2_mag_pu: f64) -> f64 {
    q_residual(law, p_ctrl, q_ctrl, v_t2_mag_pu)
}

pub(crate) fn q_residual<S: Scalar>(law: &QLaw, p_ctrl: S, q_ctrl: S, v_mag_pu: S) -> S {
    match law {
        QLaw::ConstantQ { q_set } => q_ctrl - *q_set,
        QLaw::ConstantPf { pf, sign } => q_ctrl * *pf - p_ctrl * (sign.factor() * (1.0 - pf * pf).sqrt()),
        QLaw::VoltVar(c) => q_ctrl - voltvar_q_s(c, v_mag_pu),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApparentPower {
    pub s_mag: f64,
    pub s_rated: f64,
}

impl ApparentPower {
    pub fn ok(&self) -> bool {
        self.s_mag <= self.s_rated
    }
}

/// Flags operating points above the inverter rating; advisory only.
pub fn apparent_power_check(p_ctrl: f64, q_ctrl: f64, s_rated: f64) -> ApparentPower {
    ApparentPower { s_mag: p_ctrl.hypot(q_ctrl), s_rated }
}
