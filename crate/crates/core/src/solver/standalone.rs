//! Single inverter at a fixed terminal voltage.

use super::coupled::project_block;
use super::{linear, newton, NewtonSystem, SolverOptions};
use crate::control::PLaw;
use crate::error::{invalid, Error, Result};
use crate::phasor::Phasor;
use crate::scalar::Dual;
use crate::tsbi::{EnergyAudit, Inverter, TsbiState, BLOCK, ROW_NAMES, STATE_NAMES};

struct Fixed<'a> {
    inv: &'a Inverter,
    v_t2: Phasor,
    v_base: f64,
    eps_v: f64,
    scales: [f64; BLOCK],
}

impl Fixed<'_> {
    fn jac(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut xd = [Dual::<BLOCK>::constant(0.0); BLOCK];
        for q in 0..BLOCK {
            xd[q] = Dual::var(x[q], q);
        }
        let rd = self.inv.residuals(&xd, self.v_t2.lift(), self.v_base, self.eps_v);
        let mut t = Vec::with_capacity(BLOCK * BLOCK);
        for q in 0..BLOCK {
            for c in 0..BLOCK {
                t.push((q, c, rd[q].g[c] / self.scales[q]));
            }
        }
        linear::merge_triplets(t)
    }
}

impl NewtonSystem for Fixed<'_> {
    fn dim(&self) -> usize {
        BLOCK
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let r = self.inv.residuals(x, self.v_t2, self.v_base, self.eps_v);
        (0..BLOCK).map(|q| r[q] / self.scales[q]).collect()
    }

    fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        self.jac(x)
    }

    fn step_limit(&self, _: &[f64], _: f64) -> f64 {
        1.0
    }

    fn project(&self, x: &mut [f64]) -> usize {
        project_block(x)
    }

    fn row_label(&self, row: usize) -> String {
        format!("inverter {} {}", self.inv.id, ROW_NAMES[row])
    }

    fn col_label(&self, col: usize) -> String {
        format!("inverter {} {}", self.inv.id, STATE_NAMES[col])
    }
}

#[derive(Clone, Debug)]
pub struct InverterSolution {
    pub state: TsbiState,
    pub v_t2: Phasor,
    pub iterations: usize,
    pub residual: f64,
    pub audit: EnergyAudit,
    /// `d(state)/d(p_set)` for constant-P control.
    pub dstate_dp: Option<[f64; BLOCK]>,
}

/// Solve one inverter with its AC terminal held at `v_t2` (volts).
/// `eps_v` regularizes the controlled source, V².
pub fn solve_inverter(inv: &Inverter, v_t2: Phasor, v_base: f64, eps_v: f64, warm: Option<&TsbiState>, opts: &SolverOptions) -> Result<InverterSolution> {
    inv.validate()?;
    if !(v_t2.is_finite() && v_t2.abs() > 0.0) {
        return Err(invalid("terminal voltage must be finite and nonzero"));
    }
    let sys = Fixed { inv, v_t2, v_base, eps_v, scales: inv.row_scales() };
    let x0 = match warm {
        Some(s) => s.to_array().to_vec(),
        None => inv.initial_state(v_t2)?.to_array().to_vec(),
    };
    let out = newton(&sys, x0, opts)?;
    let residual = *out.history.last().unwrap();
    if !out.converged {
        return Err(Error::NoConvergence { what: "inverter", iterations: out.iterations, residual });
    }
    let state = TsbiState::from_array(&out.x);
    let dstate_dp = match inv.control.p_law {
        PLaw::ConstantP { .. } => {
            let mut e = vec![0.0; BLOCK];
            e[14] = 1.0 / sys.scales[14];
            let dx = linear::solve(BLOCK, &sys.jac(&out.x), &e).ok_or_else(|| Error::Singular { row: sys.row_label(14) })?;
            let mut a = [0.0; BLOCK];
            a.copy_from_slice(&dx);
            Some(a)
        }
        PLaw::Mppt => None,
    };
    Ok(InverterSolution { state, v_t2, iterations: out.iterations, residual, audit: EnergyAudit::new(&inv.params, &state, v_t2), dstate_dp })
}
