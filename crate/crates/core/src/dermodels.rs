//! DC-side device models: zeroth-order battery and single-diode PV.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{Dual, Scalar};

/// Exponent argument clamp for the diode term.
pub const EXP_ARG_MAX: f64 = 350.0;

const SOC_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    /// Charge capacity in coulombs.
    pub c_batt: f64,
    pub v_oc_nom: f64,
    pub r_int: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub i_max: f64,
    /// Optional affine open-circuit curve: `V_OC = v_oc_nom + ocv_slope·SOC`.
    #[serde(default)]
    pub ocv_slope: f64,
}

impl BatteryParams {
    /// 13.5 kWh pack at 50 V nominal, 36 mΩ.
    pub fn powerwall() -> Self {
        Self { c_batt: 13.5e3 * 3600.0 / 50.0, v_oc_nom: 50.0, r_int: 0.036, soc_min: 0.1, soc_max: 0.9, i_max: 200.0, ocv_slope: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_batt > 0.0 && self.c_batt.is_finite()) {
            return Err(invalid("battery c_batt must be positive"));
        }
        if !(self.r_int >= 0.0 && self.r_int.is_finite()) {
            return Err(invalid("battery r_int must be non-negative"));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(invalid("battery SOC limits must satisfy 0 <= min < max <= 1"));
        }
        if !(self.v_oc_nom > 0.0 && self.i_max > 0.0) {
            return Err(invalid("battery v_oc_nom and i_max must be positive"));
        }
        Ok(())
    }

    pub fn v_oc(&self, soc: f64) -> f64 {
        self.v_oc_nom + self.ocv_slope * soc
    }

    /// Stored energy in joules between `soc_min` and `soc`.
    pub fn energy_capacity_j(&self) -> f64 {
        self.c_batt * self.v_oc_nom
    }

    /// Discharge current (positive) that delivers terminal power `p_w`.
    pub fn current_for_power(&self, soc: f64, p_w: f64) -> Result<f64> {
        let voc = self.v_oc(soc);
        if self.r_int == 0.0 {
            return Ok(p_w / voc);
        }
        // voc·i − r·i² = p
        let disc = voc * voc - 4.0 * self.r_int * p_w;
        if disc < 0.0 {
            return Err(invalid(format!("battery cannot deliver {p_w} W")));
        }
        Ok((voc - disc.sqrt()) / (2.0 * self.r_int))
    }
}

/// Terminal voltage for discharge current `i_batt` (positive out of the cell).
pub fn battery_terminal_voltage(params: &BatteryParams, soc: f64, i_batt: f64) -> f64 {
    params.v_oc(soc) - i_batt * params.r_int
}

/// Trapezoidal SOC step. Errors when the result leaves the limits by more than 1e-9.
pub fn soc_update(params: &BatteryParams, soc_t: f64, i_t: f64, i_t1: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid("soc_update: dt must be positive"));
    }
    let soc = soc_t - dt / (2.0 * params.c_batt) * (i_t + i_t1);
    if soc < params.soc_min - SOC_TOL || soc > params.soc_max + SOC_TOL {
        return Err(Error::SocBounds { soc, min: params.soc_min, max: params.soc_max });
    }
    Ok(soc.clamp(params.soc_min, params.soc_max))
}

pub(crate) fn battery_residual<S: Scalar>(p: &BatteryParams, soc: f64, v: S, i: S) -> S {
    v - (i * (-p.r_int) + p.v_oc(soc))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams {
    pub i_ph: f64,
    pub i_0: f64,
    pub r_s: f64,
    pub r_sh: f64,
    pub n_d: f64,
    pub n_s: f64,
    /// Thermal voltage per cell.
    pub v_t: f64,
}

impl PvParams {
    /// Single-diode fit of a 72-cell 400 W module at STC
    /// (Voc 49.3 V, Isc 10.47 A, Vmp 40.6 V, Imp 9.86 A).
    pub fn lg400() -> Self {
        Self { i_ph: 10.47592714049103, i_0: 3.1188640286891454e-10, r_s: 0.2662658444656892, r_sh: 470.34549502005444, n_d: 1.1, n_s: 72.0, v_t: 0.025693 }
    }

    /// `n` identical modules in series.
    pub fn series_string(&self, n: u32) -> Self {
        let k = n as f64;
        Self { r_s: self.r_s * k, r_sh: self.r_sh * k, n_s: self.n_s * k, ..*self }
    }

    pub fn v_th(&self) -> f64 {
        self.n_d * self.n_s * self.v_t
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.i_ph >= 0.0 && self.i_0 > 0.0 && self.r_s >= 0.0 && self.r_sh > 0.0 && self.n_d > 0.0 && self.n_s >= 1.0 && self.v_t > 0.0;
        let finite = [self.i_ph, self.i_0, self.r_s, self.r_sh, self.n_d, self.n_s, self.v_t].iter().all(|x| x.is_finite());
        if !(ok && finite) {
            return Err(invalid(format!("inconsistent PV parameters {self:?}")));
        }
        Ok(())
    }
}

#[inline]
fn diode_exp<S: Scalar>(arg: S) -> S {
    arg.clamp_value(f64::NEG_INFINITY, EXP_ARG_MAX).exp()
}

/// Implicit single-diode residual `g(V, I)`; zero on the I–V curve, increasing in `I`.
pub(crate) fn pv_residual<S: Scalar>(p: &PvParams, v: S, i: S) -> S {
    let vd = v + i * p.r_s;
    i - p.i_ph + (diode_exp(vd / p.v_th()) - 1.0) * p.i_0 + vd / p.r_sh
}

/// `dI/dV` along the I–V curve at `(v, i)`.
pub(crate) fn pv_didv<S: Scalar>(p: &PvParams, v: S, i: S) -> S {
    let vd = v + i * p.r_s;
    let a = diode_exp(vd / p.v_th()) * (p.i_0 / p.v_th()) + 1.0 / p.r_sh;
    -(a / (a * p.r_s + 1.0))
}

/// Terminal current at voltage `v_pv`, safeguarded Newton inside a bracket.
pub fn pv_current(params: &PvParams, v_pv: f64) -> Result<f64> {
    params.validate()?;
    if !v_pv.is_finite() {
        return Err(Error::NonFinite("pv_current"));
    }
    let g = |i: f64| pv_residual(params, v_pv, i);
    // g is strictly increasing in i.
    let vth = params.v_th();
    let rs0 = params.i_ph - params.i_0 * ((v_pv / vth).min(EXP_ARG_MAX).exp() - 1.0) - v_pv / params.r_sh;
    let mut lo = rs0.min(0.0);
    let mut hi = params.i_ph.max(0.0);
    let mut expand = 0;
    while g(lo) > 0.0 {
        lo = lo * 2.0 - 1.0;
        expand += 1;
        if expand > 200 {
            return Err(Error::NoBracket("pv_current"));
        }
    }
    while g(hi) < 0.0 {
        hi = hi * 2.0 + 1.0;
        expand += 1;
        if expand > 200 {
            return Err(Error::NoBracket("pv_current"));
        }
    }
    let mut i = rs0.clamp(lo, hi);
    for _ in 0..200 {
        let d = pv_residual(params, Dual::<1>::constant(v_pv), Dual::<1>::var(i, 0));
        if d.v == 0.0 {
            return Ok(i);
        }
        if d.v > 0.0 {
            hi = i;
        } else {
            lo = i;
        }
        let mut next = i - d.v / d.g[0];
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - i).abs() <= 1e-15 * (1.0 + i.abs()) || hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            i = next;
            break;
        }
        i = next;
    }
    if g(i).abs() > 1e-10 {
        return Err(Error::NoConvergence { what: "pv_current", iterations: 200, residual: g(i).abs() });
    }
    Ok(i)
}

/// Open-circuit voltage: the root of `g(V, 0)`.
pub fn open_circuit_voltage(params: &PvParams) -> Result<f64> {
    params.validate()?;
    let f = |v: f64| pv_residual(params, v, 0.0);
    if f(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = params.v_th() * (params.i_ph / params.i_0 + 1.0).ln().max(1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoBracket("open_circuit_voltage"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppPoint {
    pub v_mp: f64,
    pub i_mp: f64,
    pub p_mp: f64,
}

/// Coarse argmax of `V·I(V)` over `n` evenly spaced points on `[0, Voc]`.
pub fn coarse_mpp(params: &PvParams, n: usize) -> Result<MppPoint> {
    let voc = open_circuit_voltage(params)?;
    let mut best = MppPoint { v_mp: 0.0, i_mp: pv_current(params, 0.0)?, p_mp: 0.0 };
    for k in 0..n {
        let v = voc * k as f64 / (n - 1) as f64;
        let i = pv_current(params, v)?;
        if v * i > best.p_mp {
            best = MppPoint { v_mp: v, i_mp: i, p_mp: v * i };
        }
    }
    Ok(best)
}

fn mpp_equations<S: Scalar>(p: &PvParams, v: S, i: S) -> [S; 2] {
    let vth = p.v_th();
    let vd = v + i * p.r_s;
    let chi = diode_exp(vd / vth);
    let f1 = i - p.i_ph + (chi - 1.0) * p.i_0 + vd / p.r_sh;
    // I·(I0·Rs·Rsh·χ + Vth(Rs+Rsh)) = V·(I0·Rsh·χ + Vth), scaled by 1/(Vth·Rsh)
    let den = chi * (p.i_0 * p.r_s * p.r_sh) + vth * (p.r_s + p.r_sh);
    let num = chi * (p.i_0 * p.r_sh) + vth;
    let f2 = (i * den - v * num) / (vth * p.r_sh);
    [f1, f2]
}

/// Maximum power point by 2-variable Newton on `(V_MP, I_MP)`.
pub fn solve_mpp(params: &PvParams) -> Result<MppPoint> {
    params.validate()?;
    let start = coarse_mpp(params, 50)?;
    if start.p_mp <= 0.0 {
        return Ok(MppPoint { v_mp: 0.0, i_mp: 0.0, p_mp: 0.0 });
    }
    let (mut v, mut i) = (start.v_mp, start.i_mp);
    let norm = |f: [f64; 2]| f[0].abs().max(f[1].abs());
    let eval = |v: f64, i: f64| {
        let f = mpp_equations(params, v, i);
        [f[0], f[1]]
    };
    let scale = params.i_ph.max(1e-12);
    const MAX_ITER: usize = 100;
    for iter in 0..MAX_ITER {
        let f = mpp_equations(params, Dual::<2>::var(v, 0), Dual::<2>::var(i, 1));
        let fv = [f[0].v, f[1].v];
        if norm(fv) <= 1e-13 * scale {
            return Ok(MppPoint { v_mp: v, i_mp: i, p_mp: v * i });
        }
        let (a, b, c, d) = (f[0].g[0], f[0].g[1], f[1].g[0], f[1].g[1]);
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoConvergence { what: "solve_mpp", iterations: iter, residual: norm(fv) });
        }
        let dv = -(d * fv[0] - b * fv[1]) / det;
        let di = -(-c * fv[0] + a * fv[1]) / det;
        let mut t = 1.0;
        let n0 = norm(fv);
        loop {
            let (vn, in_) = (v + t * dv, i + t * di);
            if norm(eval(vn, in_)) < n0 || t < 1e-8 {
                v = vn;
                i = in_;
                break;
            }
            t *= 0.5;
        }
    }
    let r = norm(eval(v, i));
    log::warn!("solve_mpp stopped at V={v}, I={i}, residual {r:e}");
    Err(Error::NoConvergence { what: "solve_mpp", iterations: MAX_ITER, residual: r })
}

/// DC source attached at terminal T1 of an inverter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Der {
    Battery { params: BatteryParams, soc: f64 },
    Pv { params: PvParams },
}

impl Der {
    pub fn validate(&self) -> Result<()> {
        match self {
            Der::Battery { params, soc } => {
                params.validate()?;
                if !(*soc >= params.soc_min && *soc <= params.soc_max) {
                    return Err(Error::SocBounds { soc: *soc, min: params.soc_min, max: params.soc_max });
                }
                Ok(())
            }
            Der::Pv { params } => params.validate(),
        }
    }

    /// I–V residual at T1.
    pub(crate) fn residual<S: Scalar>(&self, v: S, i: S) -> S {
        match self {
            Der::Battery { params, soc } => battery_residual(params, *soc, v, i),
            Der::Pv { params } => pv_residual(params, v, i),
        }
    }

    pub fn is_pv(&self) -> bool {
        matches!(self, Der::Pv { .. })
    }
}
