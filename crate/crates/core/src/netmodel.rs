//! Unbalanced three-phase network in current-injection form.
//!
//! Each node/phase contributes two real KCL rows: the real and imaginary part
//! of the current leaving the node through the branches plus the net current
//! drawn by the elements attached to it. Voltages are per-unit, rectangular.
//! Slack node/phases keep their voltage unknowns; their KCL rows are replaced
//! by `V - V_slack = 0`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phasor::Phasor;

pub const DEFAULT_EPS_V: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    /// Nominal balanced angle: 0, -120 and +120 degrees.
    pub fn nominal_angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * std::f64::consts::PI / 3.0,
            Phase::C => 2.0 * std::f64::consts::PI / 3.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

/// Per-phase power base, line-to-neutral voltage base and system frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerUnitBase {
    pub s_base: f64,
    pub v_base: f64,
    pub freq: f64,
}

impl PerUnitBase {
    pub fn i_base(&self) -> f64 {
        self.s_base / self.v_base
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.freq
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s_base", self.s_base), ("v_base", self.v_base), ("freq", self.freq)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub phases: Vec<Phase>,
    pub kind: NodeKind,
    /// One per-unit voltage per declared phase, slack nodes only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slack_voltage: Vec<Phasor>,
}

/// Series branch with a 3×3 per-unit admittance block `G + jB`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub from: String,
    pub to: String,
    pub g: [[f64; 3]; 3],
    pub b: [[f64; 3]; 3],
}

/// Constant-PQ load in watts and vars (consumption positive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub node: String,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
}

/// Current drawn by a constant-PQ element at voltage `v`.
///
/// `I = conj(S / V)` with the `|V|²` denominator regularized by `eps_v`.
pub fn load_injection_current(v: Phasor, p: f64, q: f64, eps_v: f64) -> Result<Phasor> {
    if !(v.is_finite() && p.is_finite() && q.is_finite() && eps_v.is_finite()) {
        return Err(Error::NonFinite("load_injection_current"));
    }
    let den = v.norm_sqr() + eps_v;
    if den <= 0.0 {
        return Err(invalid("load_injection_current: |v|² + eps_v must be positive"));
    }
    Ok(pq_current(v, p, q, eps_v))
}

#[inline]
pub(crate) fn pq_current(v: Phasor, p: f64, q: f64, eps_v: f64) -> Phasor {
    let den = v.norm_sqr() + eps_v;
    Phasor::new((p * v.re + q * v.im) / den, (p * v.im - q * v.re) / den)
}

/// Partial derivatives of [`pq_current`] with respect to `(v.re, v.im)`:
/// `[[dIr/dVr, dIr/dVi], [dIi/dVr, dIi/dVi]]`.
pub(crate) fn pq_current_jacobian(v: Phasor, p: f64, q: f64, eps_v: f64) -> [[f64; 2]; 2] {
    let den = v.norm_sqr() + eps_v;
    let d2 = den * den;
    let nr = p * v.re + q * v.im;
    let ni = p * v.im - q * v.re;
    [[(p * den - nr * 2.0 * v.re) / d2, (q * den - nr * 2.0 * v.im) / d2], [(-q * den - ni * 2.0 * v.re) / d2, (p * den - ni * 2.0 * v.im) / d2]]
}

/// Net current drawn at one node/phase: loads minus generators.
///
/// Elements are `(p, q)` pairs in per-unit at the common voltage `v`.
pub fn net_injection(loads: &[(f64, f64)], gens: &[(f64, f64)], v: Phasor, eps_v: f64) -> Result<Phasor> {
    let mut acc = Phasor::ZERO;
    for &(p, q) in loads {
        acc = acc + load_injection_current(v, p, q, eps_v)?;
    }
    for &(p, q) in gens {
        acc = acc - load_injection_current(v, p, q, eps_v)?;
    }
    Ok(acc)
}

/// One off-diagonal or diagonal entry of the bus admittance matrix.
#[derive(Clone, Copy, Debug)]
pub(crate) struct YEntry {
    pub col: usize,
    pub g: f64,
    pub b: f64,
}

/// Validated, indexed network. Immutable after construction.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    pub base: PerUnitBase,
    pub nodes: Vec<NodeSpec>,
    pub branches: Vec<BranchSpec>,
    pub loads: Vec<LoadSpec>,
    node_index: HashMap<String, usize>,
    /// `slot_of[node][phase]` is the node/phase unknown index.
    slot_of: Vec<[Option<usize>; 3]>,
    /// `(node, phase)` for every slot.
    slots: Vec<(usize, Phase)>,
    /// Per-slot slack voltage, if the slot belongs to a slack node.
    slack: Vec<Option<Phasor>>,
    /// Aggregated per-unit PQ load per slot.
    slot_load: Vec<(f64, f64)>,
    ybus: Vec<Vec<YEntry>>,
    pub eps_v: f64,
}

impl NetworkModel {
    pub fn new(base: PerUnitBase, nodes: Vec<NodeSpec>, branches: Vec<BranchSpec>, loads: Vec<LoadSpec>) -> Result<Self> {
        base.validate()?;
        let mut node_index = HashMap::with_capacity(nodes.len());
        let mut slot_of = Vec::with_capacity(nodes.len());
        let mut slots = Vec::new();
        let mut slack = Vec::new();
        let mut n_slack = 0usize;
        for (k, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), k).is_some() {
                return Err(invalid(format!("duplicate node id {}", n.id)));
            }
            if n.phases.is_empty() {
                return Err(invalid(format!("node {} has no phases", n.id)));
            }
            let mut row = [None; 3];
            for &ph in &n.phases {
                if row[ph.index()].is_some() {
                    return Err(invalid(format!("node {} repeats phase {}", n.id, ph.label())));
                }
                row[ph.index()] = Some(slots.len());
                slots.push((k, ph));
            }
            match n.kind {
                NodeKind::Slack => {
                    n_slack += 1;
                    if n.slack_voltage.len() != n.phases.len() {
                        return Err(invalid(format!("slack node {} needs {} voltages, got {}", n.id, n.phases.len(), n.slack_voltage.len())));
                    }
                    for v in &n.slack_voltage {
                        if !v.is_finite() {
                            return Err(Error::NonFinite("slack_voltage"));
                        }
                        slack.push(Some(*v));
                    }
                }
                NodeKind::Load => {
                    if !n.slack_voltage.is_empty() {
                        return Err(invalid(format!("load node {} carries a slack voltage", n.id)));
                    }
                    slack.extend(std::iter::repeat(None).take(n.phases.len()));
                }
            }
            slot_of.push(row);
        }
        if n_slack == 0 {
            return Err(invalid("network has no slack node"));
        }

        let mut ybus: Vec<Vec<YEntry>> = vec![Vec::new(); slots.len()];
        for br in &branches {
            let i = *node_index.get(&br.from).ok_or_else(|| invalid(format!("branch from unknown node {}", br.from)))?;
            let j = *node_index.get(&br.to).ok_or_else(|| invalid(format!("branch to unknown node {}", br.to)))?;
            if i == j {
                return Err(invalid(format!("branch {} -> {} is a self loop", br.from, br.to)));
            }
            for ph in Phase::ALL {
                for gm in Phase::ALL {
                    let (g, b) = (br.g[ph.index()][gm.index()], br.b[ph.index()][gm.index()]);
                    if !(g.is_finite() && b.is_finite()) {
                        return Err(Error::NonFinite("branch block"));
                    }
                    if g == 0.0 && b == 0.0 {
                        continue;
                    }
                    let slots_ok = [slot_of[i][ph.index()], slot_of[i][gm.index()], slot_of[j][ph.index()], slot_of[j][gm.index()]];
                    let [Some(ip), Some(ig), Some(jp), Some(jg)] = slots_ok else {
                        return Err(invalid(format!("branch {} -> {} couples phase {}{} absent at an endpoint", br.from, br.to, ph.label(), gm.label())));
                    };
                    // I_i^ph += Y (V_i^gm - V_j^gm); I_j^ph += Y (V_j^gm - V_i^gm)
                    ybus[ip].push(YEntry { col: ig, g, b });
                    ybus[ip].push(YEntry { col: jg, g: -g, b: -b });
                    ybus[jp].push(YEntry { col: jg, g, b });
                    ybus[jp].push(YEntry { col: ig, g: -g, b: -b });
                }
            }
        }
        for row in ybus.iter_mut() {
            row.sort_by_key(|e| e.col);
            let mut merged: Vec<YEntry> = Vec::with_capacity(row.len());
            for e in row.drain(..) {
                match merged.last_mut() {
                    Some(last) if last.col == e.col => {
                        last.g += e.g;
                        last.b += e.b;
                    }
                    _ => merged.push(e),
                }
            }
            *row = merged;
        }

        let mut slot_load = vec![(0.0, 0.0); slots.len()];
        for l in &loads {
            if !(l.p.is_finite() && l.q.is_finite()) {
                return Err(Error::NonFinite("load"));
            }
            let n = *node_index.get(&l.node).ok_or_else(|| invalid(format!("load at unknown node {}", l.node)))?;
            let s = slot_of[n][l.phase.index()].ok_or_else(|| invalid(format!("load at node {} on absent phase {}", l.node, l.phase.label())))?;
            slot_load[s].0 += l.p / base.s_base;
            slot_load[s].1 += l.q / base.s_base;
        }

        Ok(Self { base, nodes, branches, loads, node_index, slot_of, slots, slack, slot_load, ybus, eps_v: DEFAULT_EPS_V })
    }

    pub fn with_eps_v(mut self, eps_v: f64) -> Self {
        self.eps_v = eps_v;
        self
    }

    /// Number of node/phase slots; the voltage state has twice this length.
    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn slot(&self, node: usize, phase: Phase) -> Option<usize> {
        self.slot_of.get(node).and_then(|r| r[phase.index()])
    }

    pub fn slot_by_id(&self, id: &str, phase: Phase) -> Option<usize> {
        self.node_index(id).and_then(|n| self.slot(n, phase))
    }

    pub fn slot_info(&self, slot: usize) -> (&str, Phase) {
        let (n, ph) = self.slots[slot];
        (&self.nodes[n].id, ph)
    }

    pub fn slack_voltage(&self, slot: usize) -> Option<Phasor> {
        self.slack[slot]
    }

    pub fn slot_load(&self, slot: usize) -> (f64, f64) {
        self.slot_load[slot]
    }

    pub(crate) fn ybus_row(&self, slot: usize) -> &[YEntry] {
        &self.ybus[slot]
    }

    /// Flat-start voltages: slack values at slack slots, `1∠nominal` elsewhere.
    pub fn flat_voltages(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.n_slots());
        for (k, &(_, ph)) in self.slots.iter().enumerate() {
            let p = self.slack[k].unwrap_or_else(|| Phasor::from_polar(1.0, ph.nominal_angle()));
            v.push(p.re);
            v.push(p.im);
        }
        v
    }

    pub fn voltage(&self, v_all: &[f64], slot: usize) -> Phasor {
        Phasor::new(v_all[2 * slot], v_all[2 * slot + 1])
    }

    /// Current leaving `slot` through all branches, per-unit.
    pub fn branch_current(&self, v_all: &[f64], slot: usize) -> Phasor {
        let mut acc = Phasor::ZERO;
        for e in &self.ybus[slot] {
            let v = self.voltage(v_all, e.col);
            acc.re += e.g * v.re - e.b * v.im;
            acc.im += e.g * v.im + e.b * v.re;
        }
        acc
    }

    /// Current drawn by the aggregated PQ loads at `slot`.
    pub fn load_current(&self, v_all: &[f64], slot: usize) -> Phasor {
        let (p, q) = self.slot_load[slot];
        if p == 0.0 && q == 0.0 {
            return Phasor::ZERO;
        }
        pq_current(self.voltage(v_all, slot), p, q, self.eps_v)
    }

    /// Complex power delivered into the network from the slack slots and
    /// dissipated in the branches, per-unit: returns `(losses, load power)`.
    pub fn power_summary(&self, v_all: &[f64]) -> (Phasor, Phasor) {
        let mut loss = Phasor::ZERO;
        let mut load = Phasor::ZERO;
        for k in 0..self.n_slots() {
            let v = self.voltage(v_all, k);
            let i = self.branch_current(v_all, k);
            loss.re += v.dot(i);
            loss.im += v.cross(i);
            let (p, q) = self.slot_load[k];
            load.re += p;
            load.im += q;
        }
        (loss, load)
    }
}

/// KCL residual of the network for a voltage state covering every slot.
///
/// `injections[k]` is the net current drawn at slot `k` by attached elements
/// (loads minus generators), per-unit. Slack rows hold `V - V_slack`.
pub fn kcl_residual(net: &NetworkModel, v_all: &[f64], injections: &[Phasor]) -> Result<Vec<f64>> {
    let n = net.n_slots();
    if v_all.len() != 2 * n {
        return Err(Error::Dimension { expected: 2 * n, got: v_all.len() });
    }
    if injections.len() != n {
        return Err(Error::Dimension { expected: n, got: injections.len() });
    }
    let mut r = vec![0.0; 2 * n];
    for k in 0..n {
        if let Some(vs) = net.slack[k] {
            let v = net.voltage(v_all, k);
            r[2 * k] = v.re - vs.re;
            r[2 * k + 1] = v.im - vs.im;
        } else {
            let i = net.branch_current(v_all, k);
            r[2 * k] = i.re + injections[k].re;
            r[2 * k + 1] = i.im + injections[k].im;
        }
    }
    Ok(r)
}

/// Series admittance block of a line from its 3×3 series impedance (per-unit).
///
/// Missing phases are expressed by a zero row and column in `z`; they get a
/// zero row and column in the result.
pub fn impedance_to_block(z: [[Phasor; 3]; 3]) -> Result<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let present: Vec<usize> = (0..3).filter(|&k| z[k][k].abs() > 0.0).collect();
    let n = present.len();
    let mut a: Vec<Vec<Phasor>> = present.iter().map(|&r| present.iter().map(|&c| z[r][c]).collect()).collect();
    let mut inv: Vec<Vec<Phasor>> = (0..n).map(|r| (0..n).map(|c| if r == c { Phasor::new(1.0, 0.0) } else { Phasor::ZERO }).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap_or(col);
        if a[piv][col].abs() == 0.0 {
            return Err(invalid("singular line impedance"));
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col].inv();
        for c in 0..n {
            a[col][c] = a[col][c] * d;
            inv[col][c] = inv[col][c] * d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for c in 0..n {
                    a[r][c] = a[r][c] - f * a[col][c];
                    inv[r][c] = inv[r][c] - f * inv[col][c];
                }
            }
        }
    }
    let mut g = [[0.0; 3]; 3];
    let mut b = [[0.0; 3]; 3];
    for (ri, &r) in present.iter().enumerate() {
        for (ci, &c) in present.iter().enumerate() {
            g[r][c] = inv[ri][ci].re;
            b[r][c] = inv[ri][ci].im;
        }
    }
    Ok((g, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Phasor, b: Phasor, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn load_current_examples() {
        let i = load_injection_current(Phasor::new(1.0, 0.0), 1.0, 0.0, 0.0).unwrap();
        assert!(close(i, Phasor::new(1.0, 0.0), 1e-15));
        let i = load_injection_current(Phasor::new(1.0, 0.0), 0.0, 1.0, 0.0).unwrap();
        // I^I = (p·vI − q·vR)/|v|² = −1
        assert!(close(i, Phasor::new(0.0, -1.0), 1e-15));
        // ((1·0.8 + 0.5·0.6)/1, (1·0.6 − 0.5·0.8)/1)
        let i = load_injection_current(Phasor::new(0.8, 0.6), 1.0, 0.5, 0.0).unwrap();
        assert!(close(i, Phasor::new(1.1, 0.2), 1e-15));
    }

    #[test]
    fn load_current_rejects_non_finite() {
        assert!(load_injection_current(Phasor::new(f64::NAN, 0.0), 1.0, 0.0, 0.0).is_err());
        assert!(load_injection_current(Phasor::new(0.0, 0.0), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn reactive_sign_pattern() {
        let v = Phasor::new(0.95, -0.2);
        let d = v.norm_sqr();
        let i = load_injection_current(v, 0.7, -0.3, 0.0).unwrap();
        assert!((i.re - (0.7 * v.re + (-0.3) * v.im) / d).abs() < 1e-15);
    }

    #[test]
    fn net_injection_examples() {
        let v = Phasor::new(1.0, 0.0);
        let z = net_injection(&[(1.0, 0.0)], &[(1.0, 0.0)], v, 0.0).unwrap();
        assert!(close(z, Phasor::ZERO, 1e-15));
        assert_eq!(net_injection(&[], &[], v, 0.0).unwrap(), Phasor::ZERO);
        let two = net_injection(&[(1.0, 0.0), (1.0, 0.0)], &[], v, 0.0).unwrap();
        assert!(close(two, Phasor::new(2.0, 0.0), 1e-15));
    }

    fn two_node(g: f64) -> NetworkModel {
        let base = PerUnitBase { s_base: 1.0, v_base: 1.0, freq: 60.0 };
        let nodes = vec![
            NodeSpec { id: "s".into(), phases: vec![Phase::A], kind: NodeKind::Slack, slack_voltage: vec![Phasor::new(1.0, 0.0)] },
            NodeSpec { id: "n".into(), phases: vec![Phase::A], kind: NodeKind::Load, slack_voltage: vec![] },
        ];
        let mut gb = [[0.0; 3]; 3];
        gb[0][0] = g;
        let branches = vec![BranchSpec { from: "s".into(), to: "n".into(), g: gb, b: [[0.0; 3]; 3] }];
        NetworkModel::new(base, nodes, branches, vec![]).unwrap()
    }

    #[test]
    fn kcl_examples() {
        let net = two_node(1.0);
        let z = [Phasor::ZERO; 2];
        let r = kcl_residual(&net, &[1.0, 0.0, 1.0, 0.0], &z).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15));
        // 1·(1 − v) = p/v at v = 0.9, p = 0.09
        let v = [1.0, 0.0, 0.9, 0.0];
        let inj = [Phasor::ZERO, load_injection_current(Phasor::new(0.9, 0.0), 0.09, 0.0, 0.0).unwrap()];
        let r = kcl_residual(&net, &v, &inj).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15), "{r:?}");
    }

    #[test]
    fn kcl_dimension_mismatch() {
        let net = two_node(1.0);
        assert!(matches!(kcl_residual(&net, &[1.0, 0.0], &[Phasor::ZERO; 2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rejects_phase_absent_at_endpoint() {
        let base = PerUnitBase { s_base: 1.0, v_base: 1.0, freq: 60.0 };
        let nodes = vec![
            NodeSpec { id: "s".into(), phases: vec![Phase::A], kind: NodeKind::Slack, slack_voltage: vec![Phasor::new(1.0, 0.0)] },
            NodeSpec { id: "n".into(), phases: vec![Phase::A], kind: NodeKind::Load, slack_voltage: vec![] },
        ];
        let mut g = [[0.0; 3]; 3];
        g[1][1] = 1.0;
        let br = vec![BranchSpec { from: "s".into(), to: "n".into(), g, b: [[0.0; 3]; 3] }];
        assert!(NetworkModel::new(base, nodes, br, vec![]).is_err());
    }

    #[test]
    fn impedance_block_inverts() {
        let mut z = [[Phasor::ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                z[i][j] = if i == j { Phasor::new(0.02, 0.04) } else { Phasor::new(0.005, 0.015) };
            }
        }
        let (g, b) = impedance_to_block(z).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Phasor::ZERO;
                for k in 0..3 {
                    acc = acc + Phasor::new(g[i][k], b[i][k]) * z[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc - Phasor::new(want, 0.0)).abs() < 1e-12);
            }
        }
    }
}
