use serde::Serialize;

use super::{linear, newton, NewtonSystem, SolverOptions, TraceRow, D_MAX, D_MIN};
use crate::error::{invalid, Result};
use crate::netmodel::{pq_current_jacobian, NetworkModel};
use crate::phasor::Phasor;
use crate::scalar::Dual;
use crate::tsbi::{loss_breakdown, EnergyAudit, Inverter, LossBreakdown, TsbiState, BLOCK, IDX_D, IDX_I_T2, IDX_M, ROW_NAMES, STATE_NAMES};

/// Local unknowns plus the two terminal-voltage components.
const NSEED: usize = BLOCK + 2;
type D18 = Dual<NSEED>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Lossless forward estimate of each inverter from the flat network voltage.
    #[default]
    Estimate,
    /// `d = 0.5`, `|m| = 0.8`, zero currents.
    Flat,
}

/// Network plus attached inverters as one square system.
///
/// Unknown layout: `[v_re, v_im]` per network slot (p.u.), then 16 SI
/// unknowns per inverter.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    pub net: NetworkModel,
    pub inverters: Vec<Inverter>,
    inv_slot: Vec<usize>,
    /// Inverters attached at each slot.
    slot_invs: Vec<Vec<usize>>,
    scales: Vec<[f64; BLOCK]>,
    n_net: usize,
}

impl CoupledSystem {
    pub fn new(net: NetworkModel, inverters: Vec<Inverter>) -> Result<Self> {
        let mut inv_slot = Vec::with_capacity(inverters.len());
        let mut slot_invs = vec![Vec::new(); net.n_slots()];
        let mut seen = std::collections::HashSet::new();
        for (k, inv) in inverters.iter().enumerate() {
            inv.validate()?;
            if !seen.insert(inv.id.as_str()) {
                return Err(invalid(format!("duplicate inverter id {}", inv.id)));
            }
            let slot = net
                .slot_by_id(&inv.node, inv.phase)
                .ok_or_else(|| invalid(format!("inverter {} attached to missing node/phase {}.{}", inv.id, inv.node, inv.phase.label())))?;
            if (inv.params.lcl.omega - net.base.omega()).abs() > 1e-9 * net.base.omega() {
                log::warn!("inverter {}: filter frequency differs from network base", inv.id);
            }
            inv_slot.push(slot);
            slot_invs[slot].push(k);
        }
        let scales = inverters.iter().map(|i| i.row_scales()).collect();
        let n_net = 2 * net.n_slots();
        Ok(Self { net, inverters, inv_slot, slot_invs, scales, n_net })
    }

    pub fn dim(&self) -> usize {
        self.n_net + BLOCK * self.inverters.len()
    }

    pub fn n_net(&self) -> usize {
        self.n_net
    }

    pub fn offset(&self, k: usize) -> usize {
        self.n_net + BLOCK * k
    }

    pub fn inverter_slot(&self, k: usize) -> usize {
        self.inv_slot[k]
    }

    fn v_base(&self) -> f64 {
        self.net.base.v_base
    }

    fn eps_v_si(&self) -> f64 {
        self.net.eps_v * self.v_base() * self.v_base()
    }

    /// Terminal voltage of inverter `k`, volts.
    pub fn terminal_voltage(&self, x: &[f64], k: usize) -> Phasor {
        self.net.voltage(x, self.inv_slot[k]).scale(self.v_base())
    }

    pub fn inverter_state(&self, x: &[f64], k: usize) -> TsbiState {
        let o = self.offset(k);
        TsbiState::from_array(&x[o..o + BLOCK])
    }

    /// Typical magnitude of each unknown, for finite-difference steps.
    pub fn column_scales(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.n_net];
        for inv in &self.inverters {
            let p = &inv.params;
            let (v, i, w) = (p.v_dc, p.i_scale(), p.s_rated);
            s.extend_from_slice(&[v, i, 1.0, i, 1.0, 1.0, v, v, i, i, v, v, i, i, w, w]);
        }
        s
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let i_base = self.net.base.i_base();
        let mut r = vec![0.0; self.dim()];
        for k in 0..self.net.n_slots() {
            let v = self.net.voltage(x, k);
            if let Some(vs) = self.net.slack_voltage(k) {
                r[2 * k] = v.re - vs.re;
                r[2 * k + 1] = v.im - vs.im;
                continue;
            }
            let mut i = self.net.branch_current(x, k) + self.net.load_current(x, k);
            for &j in &self.slot_invs[k] {
                let o = self.offset(j) + IDX_I_T2;
                i = i - Phasor::new(x[o], x[o + 1]).scale(1.0 / i_base);
            }
            r[2 * k] = i.re;
            r[2 * k + 1] = i.im;
        }
        for (j, inv) in self.inverters.iter().enumerate() {
            let o = self.offset(j);
            let v_t2 = self.terminal_voltage(x, j);
            let ri = inv.residuals(&x[o..o + BLOCK], v_t2, self.v_base(), self.eps_v_si());
            for q in 0..BLOCK {
                r[o + q] = ri[q] / self.scales[j][q];
            }
        }
        r
    }

    /// Exact Jacobian as merged `(row, col, value)` triplets.
    pub fn jacobian_triplets(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        let i_base = self.net.base.i_base();
        let mut t = Vec::new();
        for k in 0..self.net.n_slots() {
            let (rr, ri) = (2 * k, 2 * k + 1);
            if self.net.slack_voltage(k).is_some() {
                t.push((rr, rr, 1.0));
                t.push((ri, ri, 1.0));
                continue;
            }
            for e in self.net.ybus_row(k) {
                let (cr, ci) = (2 * e.col, 2 * e.col + 1);
                t.push((rr, cr, e.g));
                t.push((rr, ci, -e.b));
                t.push((ri, cr, e.b));
                t.push((ri, ci, e.g));
            }
            let (p, q) = self.net.slot_load(k);
            if p != 0.0 || q != 0.0 {
                let jl = pq_current_jacobian(self.net.voltage(x, k), p, q, self.net.eps_v);
                t.push((rr, rr, jl[0][0]));
                t.push((rr, ri, jl[0][1]));
                t.push((ri, rr, jl[1][0]));
                t.push((ri, ri, jl[1][1]));
            }
            for &j in &self.slot_invs[k] {
                let o = self.offset(j) + IDX_I_T2;
                t.push((rr, o, -1.0 / i_base));
                t.push((ri, o + 1, -1.0 / i_base));
            }
        }
        let vb = self.v_base();
        for (j, inv) in self.inverters.iter().enumerate() {
            let o = self.offset(j);
            let slot = self.inv_slot[j];
            let mut xd = [D18::constant(0.0); BLOCK];
            for q in 0..BLOCK {
                xd[q] = D18::var(x[o + q], q);
            }
            let v = self.net.voltage(x, slot);
            let v_t2 = Phasor::new(D18::var(v.re, BLOCK) * vb, D18::var(v.im, BLOCK + 1) * vb);
            let rd = inv.residuals(&xd, v_t2, vb, self.eps_v_si());
            for q in 0..BLOCK {
                let s = self.scales[j][q];
                for c in 0..BLOCK {
                    t.push((o + q, o + c, rd[q].g[c] / s));
                }
                t.push((o + q, 2 * slot, rd[q].g[BLOCK] / s));
                t.push((o + q, 2 * slot + 1, rd[q].g[BLOCK + 1] / s));
            }
        }
        linear::merge_triplets(t)
    }

    pub fn jacobian_dense(&self, x: &[f64]) -> Vec<Vec<f64>> {
        linear::dense(self.dim(), &self.jacobian_triplets(x))
    }

    pub fn row_label(&self, row: usize) -> String {
        if row < self.n_net {
            let (id, ph) = self.net.slot_info(row / 2);
            format!("kcl {}.{} {}", id, ph.label(), if row % 2 == 0 { "re" } else { "im" })
        } else {
            let k = (row - self.n_net) / BLOCK;
            format!("inverter {} {}", self.inverters[k].id, ROW_NAMES[(row - self.n_net) % BLOCK])
        }
    }

    pub fn col_label(&self, col: usize) -> String {
        if col < self.n_net {
            let (id, ph) = self.net.slot_info(col / 2);
            format!("v {}.{} {}", id, ph.label(), if col % 2 == 0 { "re" } else { "im" })
        } else {
            let k = (col - self.n_net) / BLOCK;
            format!("inverter {} {}", self.inverters[k].id, STATE_NAMES[(col - self.n_net) % BLOCK])
        }
    }
}

impl NewtonSystem for CoupledSystem {
    fn dim(&self) -> usize {
        CoupledSystem::dim(self)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        CoupledSystem::residual(self, x)
    }

    fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        self.jacobian_triplets(x)
    }

    fn step_limit(&self, dx: &[f64], limit_v: f64) -> f64 {
        let dv = super::inf_norm(&dx[..self.n_net]);
        if dv > limit_v {
            limit_v / dv
        } else {
            1.0
        }
    }

    fn project(&self, x: &mut [f64]) -> usize {
        let mut clamps = 0;
        for j in 0..self.inverters.len() {
            let o = self.offset(j);
            clamps += project_block(&mut x[o..o + BLOCK]);
        }
        clamps
    }

    fn row_label(&self, row: usize) -> String {
        CoupledSystem::row_label(self, row)
    }

    fn col_label(&self, col: usize) -> String {
        CoupledSystem::col_label(self, col)
    }
}

/// Duty and modulation clamps on one inverter block.
pub(crate) fn project_block(x: &mut [f64]) -> usize {
    x[IDX_D] = x[IDX_D].clamp(D_MIN, D_MAX);
    let m = x[IDX_M].hypot(x[IDX_M + 1]);
    if m > 1.0 {
        x[IDX_M] /= m;
        x[IDX_M + 1] /= m;
        1
    } else {
        0
    }
}

pub fn initialize_state(sys: &CoupledSystem, mode: InitMode) -> Result<Vec<f64>> {
    let mut x = sys.net.flat_voltages();
    x.reserve(BLOCK * sys.inverters.len());
    for (j, inv) in sys.inverters.iter().enumerate() {
        let v_t2 = sys.terminal_voltage(&x, j);
        let s = match mode {
            InitMode::Estimate => inv.initial_state(v_t2)?,
            InitMode::Flat => inv.flat_state(v_t2)?,
        };
        x.extend_from_slice(&s.to_array());
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct InverterResult {
    pub id: String,
    pub state: TsbiState,
    pub v_t2: Phasor,
    pub audit: EnergyAudit,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub state: Vec<f64>,
    pub losses: Vec<LossBreakdown>,
    pub inverters: Vec<InverterResult>,
    pub trace: Vec<TraceRow>,
    pub m_clamps: usize,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }
}

pub fn solve_power_flow(sys: &CoupledSystem, opts: &SolverOptions) -> Result<SolveReport> {
    let mode = if opts.flat_start { InitMode::Flat } else { InitMode::Estimate };
    let x0 = initialize_state(sys, mode)?;
    solve_from(sys, x0, opts)
}

pub(crate) fn solve_from(sys: &CoupledSystem, x0: Vec<f64>, opts: &SolverOptions) -> Result<SolveReport> {
    let out = newton(sys, x0, opts)?;
    let inverters: Vec<InverterResult> = (0..sys.inverters.len())
        .map(|j| {
            let state = sys.inverter_state(&out.x, j);
            let v_t2 = sys.terminal_voltage(&out.x, j);
            InverterResult { id: sys.inverters[j].id.clone(), state, v_t2, audit: EnergyAudit::new(&sys.inverters[j].params, &state, v_t2) }
        })
        .collect();
    let losses = inverters.iter().zip(&sys.inverters).map(|(r, inv)| loss_breakdown(&inv.params, &r.state)).collect();
    Ok(SolveReport {
        converged: out.converged,
        iterations: out.iterations,
        residual_history: out.history,
        state: out.x,
        losses,
        inverters,
        trace: out.trace,
        m_clamps: out.m_clamps,
    })
}
