//! Deterministic synthetic test systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ControlSpec, PLaw, PfSign, QLaw, VoltVarCurve};
use crate::dermodels::{BatteryParams, PvParams};
use crate::netmodel::{impedance_to_block, BranchSpec, LoadSpec, NodeKind, NodeSpec, PerUnitBase, Phase};
use crate::phasor::Phasor;
use crate::scenario::{DerSpec, InverterSpec, Preset, ScenarioFile, TsbiParamsSpec};
use crate::solver::SolverOptions;

/// Reactive policy applied to every inverter of a fixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QPolicy {
    UnityPf,
    VoltVar,
}

impl QPolicy {
    fn law(self, s_rated: f64) -> QLaw {
        match self {
            QPolicy::UnityPf => QLaw::ConstantPf { pf: 1.0, sign: PfSign::Lagging },
            QPolicy::VoltVar => QLaw::VoltVar(VoltVarCurve::default_for(s_rated)),
        }
    }
}

pub const V_BASE: f64 = 240.0;
pub const S_RATED: f64 = 10e3;
/// DC link of the fixture inverters.
pub const V_DC: f64 = 400.0;

fn base(s_base: f64) -> PerUnitBase {
    PerUnitBase { s_base, v_base: V_BASE, freq: 60.0 }
}

fn slack(id: &str, phases: &[Phase]) -> NodeSpec {
    NodeSpec {
        id: id.into(),
        phases: phases.to_vec(),
        kind: NodeKind::Slack,
        slack_voltage: phases.iter().map(|p| Phasor::from_polar(1.0, p.nominal_angle())).collect(),
    }
}

fn load_node(id: String, phases: &[Phase]) -> NodeSpec {
    NodeSpec { id, phases: phases.to_vec(), kind: NodeKind::Load, slack_voltage: vec![] }
}

/// Line with self impedance `zs` and mutual `zm` on the given phases, p.u.
pub fn line(from: &str, to: &str, phases: &[Phase], zs: Phasor, zm: Phasor) -> BranchSpec {
    let mut z = [[Phasor::ZERO; 3]; 3];
    for &a in phases {
        for &b in phases {
            z[a.index()][b.index()] = if a == b { zs } else { zm };
        }
    }
    let (g, b) = impedance_to_block(z).expect("fixture line impedance is invertible");
    BranchSpec { from: from.into(), to: to.into(), g, b }
}

/// 380 V nominal pack sized for a 10 kVA inverter.
pub fn hv_battery() -> BatteryParams {
    BatteryParams { c_batt: 36.0 * 3600.0, v_oc_nom: 380.0, r_int: 0.05, soc_min: 0.1, soc_max: 0.9, i_max: 40.0, ocv_slope: 0.0 }
}

pub fn battery_inverter(id: &str, node: &str, phase: Phase, p_set: f64, q_law: QLaw) -> InverterSpec {
    InverterSpec {
        id: id.into(),
        node: node.into(),
        phase,
        params: TsbiParamsSpec::reference(V_DC, S_RATED),
        der: DerSpec::Battery { params: Preset::Explicit(hv_battery()), soc: 0.5 },
        control: ControlSpec { p_law: PLaw::ConstantP { p_set }, q_law },
    }
}

/// Ten LG400 modules in series under MPPT.
pub fn pv_inverter(id: &str, node: &str, phase: Phase, q_law: QLaw) -> InverterSpec {
    InverterSpec {
        id: id.into(),
        node: node.into(),
        phase,
        params: TsbiParamsSpec::reference(V_DC, S_RATED),
        der: DerSpec::Pv { params: Preset::Named("lg400".into()), modules: 10 },
        control: ControlSpec { p_law: PLaw::Mppt, q_law },
    }
}

/// Slack plus one single-phase load node, optionally with one battery inverter.
pub fn two_node(p_set: Option<f64>) -> ScenarioFile {
    let ph = [Phase::A];
    ScenarioFile {
        base: base(S_RATED),
        nodes: vec![slack("s", &ph), load_node("n".into(), &ph)],
        branches: vec![line("s", "n", &ph, Phasor::new(0.01, 0.02), Phasor::ZERO)],
        loads: vec![LoadSpec { node: "n".into(), phase: Phase::A, p: 1000.0, q: 200.0 }],
        inverters: p_set.map(|p| vec![battery_inverter("inv1", "n", Phase::A, p, QLaw::ConstantQ { q_set: 0.0 })]).unwrap_or_default(),
        solver: SolverOptions::default(),
    }
}

/// Slack and three three-phase buses in a chain with mutually coupled lines,
/// unbalanced loads and three inverters (discharging battery, PV, charging battery).
pub fn four_bus(q: QPolicy) -> ScenarioFile {
    let ph = Phase::ALL;
    let zs = Phasor::new(0.004, 0.009);
    let zm = Phasor::new(0.001, 0.004);
    let mut loads = Vec::new();
    for (k, node) in ["n1", "n2", "n3"].iter().enumerate() {
        for (j, &p) in ph.iter().enumerate() {
            let w = 9000.0 + 3000.0 * ((k + 2 * j) % 3) as f64;
            loads.push(LoadSpec { node: (*node).into(), phase: p, p: w, q: 0.33 * w });
        }
    }
    let law = q.law(S_RATED);
    ScenarioFile {
        base: base(100e3),
        nodes: vec![slack("s", &ph), load_node("n1".into(), &ph), load_node("n2".into(), &ph), load_node("n3".into(), &ph)],
        branches: vec![line("s", "n1", &ph, zs, zm), line("n1", "n2", &ph, zs, zm), line("n2", "n3", &ph, zs, zm)],
        loads,
        inverters: vec![
            battery_inverter("bat_n2a", "n2", Phase::A, 6000.0, law),
            pv_inverter("pv_n3b", "n3", Phase::B, law),
            battery_inverter("bat_n3c", "n3", Phase::C, -3000.0, law),
        ],
        solver: SolverOptions::default(),
    }
}

/// Ten-node three-phase chain with five inverters on the far half.
pub fn ten_node(q: QPolicy) -> ScenarioFile {
    let ph = Phase::ALL;
    let zs = Phasor::new(0.003, 0.006);
    let zm = Phasor::new(0.001, 0.0025);
    let mut nodes = vec![slack("n0", &ph)];
    let mut branches = Vec::new();
    let mut loads = Vec::new();
    for k in 1..10 {
        let id = format!("n{k}");
        nodes.push(load_node(id.clone(), &ph));
        branches.push(line(&format!("n{}", k - 1), &id, &ph, zs, zm));
        for (j, &p) in ph.iter().enumerate() {
            let w = 5000.0 + 1500.0 * ((k + j) % 3) as f64;
            loads.push(LoadSpec { node: id.clone(), phase: p, p: w, q: 0.3 * w });
        }
    }
    let law = q.law(S_RATED);
    let inverters = vec![
        pv_inverter("pv5a", "n5", Phase::A, law),
        battery_inverter("bat6b", "n6", Phase::B, 4000.0, law),
        pv_inverter("pv7c", "n7", Phase::C, law),
        battery_inverter("bat8a", "n8", Phase::A, -2000.0, law),
        pv_inverter("pv9b", "n9", Phase::B, law),
    ];
    ScenarioFile { base: base(100e3), nodes, branches, loads, inverters, solver: SolverOptions::default() }
}

/// Radial three-phase feeder: a trunk with laterals, `n_nodes` nodes in total
/// including the slack, and `n_inv` single-phase inverters on lateral nodes.
pub fn synthetic_feeder(n_nodes: usize, n_inv: usize, q: QPolicy, seed: u64) -> ScenarioFile {
    assert!(n_nodes >= 11, "feeder needs at least one trunk node and a lateral");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ph = Phase::ALL;
    let trunk = (n_nodes - 1) / 10;
    let zt = (Phasor::new(1.0e-4, 2.0e-4), Phasor::new(0.3e-4, 0.8e-4));
    let zl = (Phasor::new(2.0e-3, 2.5e-3), Phasor::new(0.5e-3, 1.0e-3));
    let phase_scale = [1.0, 1.15, 0.85];

    let mut nodes = vec![slack("src", &ph)];
    let mut branches = Vec::new();
    let mut loads = Vec::new();
    let mut lateral_nodes = Vec::new();
    let mut prev = "src".to_string();
    for t in 0..trunk {
        let id = format!("t{t}");
        nodes.push(load_node(id.clone(), &ph));
        branches.push(line(&prev, &id, &ph, zt.0, zt.1));
        prev = id;
    }
    let mut remaining = n_nodes - 1 - trunk;
    let per_lateral = remaining.div_ceil(trunk);
    for t in 0..trunk {
        let len = per_lateral.min(remaining);
        remaining -= len;
        let mut up = format!("t{t}");
        for k in 0..len {
            let id = format!("l{t}_{k}");
            nodes.push(load_node(id.clone(), &ph));
            branches.push(line(&up, &id, &ph, zl.0, zl.1));
            for (j, &p) in ph.iter().enumerate() {
                let w = rng.gen_range(600.0..1400.0) * phase_scale[j];
                loads.push(LoadSpec { node: id.clone(), phase: p, p: w, q: 0.33 * w });
            }
            lateral_nodes.push(id.clone());
            up = id;
        }
    }
    let law = q.law(S_RATED);
    let mut inverters = Vec::with_capacity(n_inv);
    let stride = lateral_nodes.len() / n_inv.max(1);
    for k in 0..n_inv {
        let node = &lateral_nodes[(k * stride + rng.gen_range(0..stride.max(1))).min(lateral_nodes.len() - 1)];
        let phase = ph[rng.gen_range(0..3)];
        let inv = if k % 2 == 0 {
            pv_inverter(&format!("pv{k}"), node, phase, law)
        } else {
            let p = rng.gen_range(-3000.0..6000.0);
            battery_inverter(&format!("bat{k}"), node, phase, p, law)
        };
        inverters.push(inv);
    }
    let solver = SolverOptions { max_iter: 25, ..SolverOptions::default() };
    ScenarioFile { base: base(100e3), nodes, branches, loads, inverters, solver }
}

/// LG400 module, exposed for drivers that need a PV preset without a scenario.
pub fn lg400_string(modules: u32) -> PvParams {
    PvParams::lg400().series_string(modules)
}
