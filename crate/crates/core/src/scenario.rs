//! JSON scenario schema with named component presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::dermodels::{BatteryParams, Der, PvParams};
use crate::error::{invalid, Result};
use crate::netmodel::{BranchSpec, LoadSpec, NetworkModel, NodeSpec, PerUnitBase, Phase};
use crate::solver::{CoupledSystem, SolverOptions};
use crate::tsbi::params::{presets, DiodeSpec, LclParams, MosfetSpec, DEFAULT_EPS_MAG, DEFAULT_EPS_PF, DEFAULT_EPS_SGN};
use crate::tsbi::{Inverter, TsbiParams};

/// Either a preset name or an explicit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Preset<T> {
    Named(String),
    Explicit(T),
}

/// LCL values without the frequency, which comes from the network base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LclSpec {
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub r_damp: f64,
    pub r1: f64,
    pub r2: f64,
}

fn resolve<T: Copy>(p: &Preset<T>, what: &str, lookup: impl Fn(&str) -> Option<T>) -> Result<T> {
    match p {
        Preset::Named(n) => lookup(n).ok_or_else(|| invalid(format!("unknown {what} preset '{n}'"))),
        Preset::Explicit(v) => Ok(*v),
    }
}

fn d_mosfet() -> Preset<MosfetSpec> {
    Preset::Named("mosfet_spw47n60c3".into())
}
fn d_diode() -> Preset<DiodeSpec> {
    Preset::Named("diode_mur460".into())
}
fn d_lcl() -> Preset<LclSpec> {
    Preset::Named("lcl_reznik".into())
}
fn d_r_l() -> f64 {
    presets::FSC_INDUCTOR_R
}
fn d_f_fsc() -> f64 {
    presets::F_SW_FSC
}
fn d_f_ssc() -> f64 {
    presets::F_SW_SSC
}
fn d_s_rated() -> f64 {
    10e3
}
fn d_eps_sgn() -> f64 {
    DEFAULT_EPS_SGN
}
fn d_eps_mag() -> f64 {
    DEFAULT_EPS_MAG
}
fn d_eps_pf() -> f64 {
    DEFAULT_EPS_PF
}

/// Inverter component set; every field except `v_dc` defaults to the
/// reference parameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsbiParamsSpec {
    #[serde(default = "d_mosfet")]
    pub mosfet: Preset<MosfetSpec>,
    #[serde(default = "d_diode")]
    pub diode: Preset<DiodeSpec>,
    #[serde(default = "d_lcl")]
    pub lcl: Preset<LclSpec>,
    #[serde(default = "d_r_l")]
    pub r_l: f64,
    #[serde(default = "d_f_fsc")]
    pub f_sw_fsc: f64,
    #[serde(default = "d_f_ssc")]
    pub f_sw_ssc: f64,
    pub v_dc: f64,
    #[serde(default = "d_s_rated")]
    pub s_rated: f64,
    #[serde(default = "d_eps_sgn")]
    pub eps_sgn: f64,
    #[serde(default = "d_eps_mag")]
    pub eps_mag: f64,
    #[serde(default = "d_eps_pf")]
    pub eps_pf: f64,
}

impl TsbiParamsSpec {
    pub fn reference(v_dc: f64, s_rated: f64) -> Self {
        Self {
            mosfet: d_mosfet(),
            diode: d_diode(),
            lcl: d_lcl(),
            r_l: d_r_l(),
            f_sw_fsc: d_f_fsc(),
            f_sw_ssc: d_f_ssc(),
            v_dc,
            s_rated,
            eps_sgn: DEFAULT_EPS_SGN,
            eps_mag: DEFAULT_EPS_MAG,
            eps_pf: DEFAULT_EPS_PF,
        }
    }

    pub fn resolve(&self, omega: f64) -> Result<TsbiParams> {
        let m = resolve(&self.mosfet, "mosfet", presets::mosfet)?;
        let d = resolve(&self.diode, "diode", presets::diode)?;
        let lcl = match &self.lcl {
            Preset::Named(n) => presets::lcl(n, omega).ok_or_else(|| invalid(format!("unknown lcl preset '{n}'")))?,
            Preset::Explicit(s) => LclParams { l1: s.l1, l2: s.l2, c: s.c, r_damp: s.r_damp, r1: s.r1, r2: s.r2, omega },
        };
        let mut p = TsbiParams::from_devices(m, d, lcl, self.v_dc, self.s_rated);
        p.fsc.r_l = self.r_l;
        p.fsc.f_sw = self.f_sw_fsc;
        p.ssc.f_sw = self.f_sw_ssc;
        p.eps_sgn = self.eps_sgn;
        p.eps_mag = self.eps_mag;
        p.eps_pf = self.eps_pf;
        p.validate()?;
        Ok(p)
    }
}

fn d_modules() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DerSpec {
    /// Presets: `powerwall`.
    Battery { params: Preset<BatteryParams>, soc: f64 },
    /// Presets: `lg400`; `modules` in series.
    Pv {
        params: Preset<PvParams>,
        #[serde(default = "d_modules")]
        modules: u32,
    },
}

impl DerSpec {
    pub fn resolve(&self) -> Result<Der> {
        let der = match self {
            DerSpec::Battery { params, soc } => {
                Der::Battery { params: resolve(params, "battery", |n| (n == "powerwall").then(BatteryParams::powerwall))?, soc: *soc }
            }
            DerSpec::Pv { params, modules } => {
                if *modules == 0 {
                    return Err(invalid("pv modules must be >= 1"));
                }
                let p = resolve(params, "pv", |n| (n == "lg400").then(PvParams::lg400))?;
                Der::Pv { params: p.series_string(*modules) }
            }
        };
        der.validate()?;
        Ok(der)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterSpec {
    pub id: String,
    pub node: String,
    pub phase: Phase,
    pub params: TsbiParamsSpec,
    pub der: DerSpec,
    pub control: ControlSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub base: PerUnitBase,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub inverters: Vec<InverterSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ScenarioFile {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn inverters(&self) -> Result<Vec<Inverter>> {
        let omega = self.base.omega();
        self.inverters
            .iter()
            .map(|s| {
                let inv = Inverter {
                    id: s.id.clone(),
                    node: s.node.clone(),
                    phase: s.phase,
                    params: s.params.resolve(omega)?,
                    der: s.der.resolve()?,
                    control: s.control,
                };
                inv.validate().map_err(|e| invalid(format!("inverter {}: {e}", s.id)))?;
                Ok(inv)
            })
            .collect()
    }

    pub fn network(&self) -> Result<NetworkModel> {
        NetworkModel::new(self.base, self.nodes.clone(), self.branches.clone(), self.loads.clone())
    }

    pub fn system(&self) -> Result<CoupledSystem> {
        CoupledSystem::new(self.network()?, self.inverters()?)
    }
}
