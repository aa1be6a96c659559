use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Transition intervals of one switching device, seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchTiming {
    pub t_delay_on: f64,
    pub t_rise: f64,
    pub t_delay_off: f64,
    pub t_fall: f64,
}

impl SwitchTiming {
    pub fn t_on(&self) -> f64 {
        self.t_delay_on + self.t_rise
    }

    pub fn t_off(&self) -> f64 {
        self.t_delay_off + self.t_fall
    }

    pub fn zero() -> Self {
        Self { t_delay_on: 0.0, t_rise: 0.0, t_delay_off: 0.0, t_fall: 0.0 }
    }
}

/// Four-switch buck-boost stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FscParams {
    pub v_t0: f64,
    pub r_t: f64,
    pub r_l: f64,
    pub timing: SwitchTiming,
    pub f_sw: f64,
}

impl FscParams {
    /// `f_sw·(t_on + t_off)`, the switching-current coefficient.
    pub fn switching_coeff(&self) -> f64 {
        self.f_sw * (self.timing.t_on() + self.timing.t_off())
    }
}

/// H-bridge stage under unipolar SPWM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SscParams {
    pub v_t: f64,
    pub r_t: f64,
    pub v_d: f64,
    pub r_d: f64,
    pub timing: SwitchTiming,
    /// Effective diode recovery duration.
    pub t_doff: f64,
    pub f_sw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LclParams {
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub r_damp: f64,
    pub r1: f64,
    pub r2: f64,
    /// Fundamental angular frequency, rad/s.
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsbiParams {
    pub fsc: FscParams,
    pub ssc: SscParams,
    pub lcl: LclParams,
    pub v_dc: f64,
    pub s_rated: f64,
    /// Smoothing of `sgn`/`|·|` on DC-side currents, A².
    pub eps_sgn: f64,
    /// Regularization of `|I_AC|`, A².
    pub eps_mag: f64,
    /// Smoothing of `|M cos φ|` in the conduction-loss split.
    #[serde(default = "default_eps_pf")]
    pub eps_pf: f64,
}

pub const DEFAULT_EPS_SGN: f64 = 1e-6;
pub const DEFAULT_EPS_MAG: f64 = 1e-9;
pub const DEFAULT_EPS_PF: f64 = 1e-8;

fn default_eps_pf() -> f64 {
    DEFAULT_EPS_PF
}

/// Conduction model of a MOSFET plus its switching intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosfetSpec {
    pub v_t0: f64,
    pub r_t: f64,
    pub timing: SwitchTiming,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiodeSpec {
    pub v_d0: f64,
    pub r_d: f64,
    pub t_rr: f64,
}

pub mod presets {
    use super::*;

    pub const MOSFET_SPW47N60C3: MosfetSpec =
        MosfetSpec { v_t0: 0.30, r_t: 0.025, timing: SwitchTiming { t_delay_on: 14e-9, t_rise: 15e-9, t_delay_off: 58e-9, t_fall: 11e-9 } };

    pub const DIODE_MUR460: DiodeSpec = DiodeSpec { v_d0: 1.10, r_d: 0.050, t_rr: 75e-9 };

    /// FSC inductor winding resistance.
    pub const FSC_INDUCTOR_R: f64 = 1.8e-3;
    pub const F_SW_FSC: f64 = 50e3;
    pub const F_SW_SSC: f64 = 16e3;

    /// Apparent-power ratings, VA.
    pub const RATINGS: [f64; 4] = [5.8e3, 7.6e3, 10e3, 11.5e3];

    pub fn lcl_reznik(omega: f64) -> LclParams {
        LclParams { l1: 2.23e-3, l2: 0.045e-3, c: 15e-6, r_damp: 0.55, r1: 5e-3, r2: 5e-3, omega }
    }

    pub fn mosfet(name: &str) -> Option<MosfetSpec> {
        match name {
            "mosfet_spw47n60c3" => Some(MOSFET_SPW47N60C3),
            _ => None,
        }
    }

    pub fn diode(name: &str) -> Option<DiodeSpec> {
        match name {
            "diode_mur460" => Some(DIODE_MUR460),
            _ => None,
        }
    }

    pub fn lcl(name: &str, omega: f64) -> Option<LclParams> {
        match name {
            "lcl_reznik" => Some(lcl_reznik(omega)),
            _ => None,
        }
    }
}

impl TsbiParams {
    /// Component set from the reference parameter table with the given
    /// DC-link voltage, rating and grid frequency.
    pub fn reference(v_dc: f64, s_rated: f64, freq_hz: f64) -> Self {
        let m = presets::MOSFET_SPW47N60C3;
        let d = presets::DIODE_MUR460;
        Self::from_devices(m, d, presets::lcl_reznik(2.0 * std::f64::consts::PI * freq_hz), v_dc, s_rated)
    }

    pub fn from_devices(m: MosfetSpec, d: DiodeSpec, lcl: LclParams, v_dc: f64, s_rated: f64) -> Self {
        Self {
            fsc: FscParams { v_t0: m.v_t0, r_t: m.r_t, r_l: presets::FSC_INDUCTOR_R, timing: m.timing, f_sw: presets::F_SW_FSC },
            ssc: SscParams { v_t: m.v_t0, r_t: m.r_t, v_d: d.v_d0, r_d: d.r_d, timing: m.timing, t_doff: d.t_rr, f_sw: presets::F_SW_SSC },
            lcl,
            v_dc,
            s_rated,
            eps_sgn: DEFAULT_EPS_SGN,
            eps_mag: DEFAULT_EPS_MAG,
            eps_pf: DEFAULT_EPS_PF,
        }
    }

    /// Same topology with every loss mechanism removed.
    pub fn lossless(&self) -> Self {
        let mut p = *self;
        p.fsc.v_t0 = 0.0;
        p.fsc.r_t = 0.0;
        p.fsc.r_l = 0.0;
        p.fsc.timing = SwitchTiming::zero();
        p.ssc.v_t = 0.0;
        p.ssc.r_t = 0.0;
        p.ssc.v_d = 0.0;
        p.ssc.r_d = 0.0;
        p.ssc.timing = SwitchTiming::zero();
        p.ssc.t_doff = 0.0;
        p.lcl.r1 = 0.0;
        p.lcl.r2 = 0.0;
        p.lcl.r_damp = f64::INFINITY;
        p
    }

    /// Current scale used to normalize current-valued residual rows.
    pub fn i_scale(&self) -> f64 {
        self.s_rated / self.v_dc
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("fsc.v_t0", self.fsc.v_t0),
            ("fsc.r_t", self.fsc.r_t),
            ("fsc.r_l", self.fsc.r_l),
            ("fsc.f_sw", self.fsc.f_sw),
            ("ssc.v_t", self.ssc.v_t),
            ("ssc.r_t", self.ssc.r_t),
            ("ssc.v_d", self.ssc.v_d),
            ("ssc.r_d", self.ssc.r_d),
            ("ssc.t_doff", self.ssc.t_doff),
            ("ssc.f_sw", self.ssc.f_sw),
            ("lcl.r1", self.lcl.r1),
            ("lcl.r2", self.lcl.r2),
            ("lcl.r_damp", self.lcl.r_damp),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || v.is_nan() {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        for t in [self.fsc.timing, self.ssc.timing] {
            if [t.t_delay_on, t.t_rise, t.t_delay_off, t.t_fall].iter().any(|x| !(*x >= 0.0)) {
                return Err(invalid("switch timings must be >= 0"));
            }
        }
        if self.fsc.switching_coeff() >= 1.0 {
            return Err(invalid("fsc f_sw·(t_on + t_off) must be < 1"));
        }
        for (name, v) in [("lcl.l1", self.lcl.l1), ("lcl.l2", self.lcl.l2), ("lcl.c", self.lcl.c), ("lcl.omega", self.lcl.omega)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.v_dc > 0.0 && self.s_rated > 0.0) {
            return Err(invalid("v_dc and s_rated must be positive"));
        }
        if !(self.eps_sgn > 0.0 && self.eps_mag > 0.0 && self.eps_pf > 0.0) {
            return Err(invalid("smoothing constants must be positive"));
        }
        Ok(())
    }
}
