//! Damped Newton–Raphson on the coupled network + inverter system.

mod coupled;
mod fd;
pub(crate) mod linear;
mod standalone;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coupled::{initialize_state, solve_power_flow, CoupledSystem, InitMode, InverterResult, SolveReport};
pub use fd::{finite_diff_jacobian, jacobian_error, richardson_jacobian};
pub use standalone::{solve_inverter, InverterSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol_inf: f64,
    pub max_iter: usize,
    /// Initial step factor.
    pub damping: f64,
    /// Largest per-iteration voltage update, p.u.
    pub step_limit_v: f64,
    pub flat_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_inf: 1e-8, max_iter: 50, damping: 1.0, step_limit_v: 0.2, flat_start: false }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_inf > 0.0) || self.max_iter == 0 || !(self.damping > 0.0 && self.damping <= 1.0) || !(self.step_limit_v > 0.0) {
            return Err(Error::Invalid(format!("bad solver options {self:?}")));
        }
        Ok(())
    }
}

pub(crate) const D_MIN: f64 = 0.02;
pub(crate) const D_MAX: f64 = 0.98;
const MAX_BACKTRACK: usize = 20;

/// One Newton iteration as written to the trace CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub residual_inf: f64,
    pub step_norm: f64,
    pub damping: f64,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// A square nonlinear system in the form the Newton driver needs.
pub(crate) trait NewtonSystem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    /// Merged `(row, col, value)` entries.
    fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)>;
    /// Largest admissible fraction of the full step `dx` given the voltage step limit.
    fn step_limit(&self, dx: &[f64], limit_v: f64) -> f64;
    /// Clamps variables back into their domain; returns how many modulation clamps fired.
    fn project(&self, x: &mut [f64]) -> usize;
    fn row_label(&self, row: usize) -> String;
    fn col_label(&self, col: usize) -> String;
}

pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub m_clamps: usize,
}

pub(crate) fn inf_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

fn singular<S: NewtonSystem>(sys: &S, t: &[(usize, usize, f64)], r: &[f64]) -> Error {
    let (rows, cols) = linear::structurally_empty(sys.dim(), t);
    let row = if let Some(&k) = rows.first() {
        sys.row_label(k)
    } else if let Some(&k) = cols.first() {
        format!("column {}", sys.col_label(k))
    } else {
        let k = (0..r.len()).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())).unwrap_or(0);
        sys.row_label(k)
    };
    Error::Singular { row }
}

pub(crate) fn newton<S: NewtonSystem>(sys: &S, x0: Vec<f64>, opts: &SolverOptions) -> Result<NewtonOutcome> {
    opts.validate()?;
    let mut x = x0;
    let mut m_clamps = sys.project(&mut x);
    let mut r = sys.residual(&x);
    let mut norm = inf_norm(&r);
    if !norm.is_finite() {
        return Err(Error::NonFinite("initial residual"));
    }
    let mut history = vec![norm];
    let mut trace = vec![TraceRow { iter: 0, residual_inf: norm, step_norm: 0.0, damping: 0.0 }];
    let mut iterations = 0;
    while norm >= opts.tol_inf && iterations < opts.max_iter {
        iterations += 1;
        let jac = sys.jacobian(&x);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = linear::solve(sys.dim(), &jac, &rhs).ok_or_else(|| singular(sys, &jac, &r))?;
        let mut alpha = opts.damping * sys.step_limit(&dx, opts.step_limit_v).min(1.0);
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACK {
            let mut xt: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            let clamps = sys.project(&mut xt);
            let rt = sys.residual(&xt);
            let nt = inf_norm(&rt);
            if nt <= norm {
                accepted = Some((xt, rt, nt, clamps));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, rt, nt, clamps)) = accepted else {
            log::debug!("line search failed at iteration {iterations}, residual {norm:e}");
            break;
        };
        m_clamps += clamps;
        let step = alpha * inf_norm(&dx);
        x = xt;
        r = rt;
        norm = nt;
        history.push(norm);
        trace.push(TraceRow { iter: iterations, residual_inf: norm, step_norm: step, damping: alpha });
        log::trace!("newton iter {iterations}: |F| = {norm:e}, alpha = {alpha}");
    }
    if m_clamps > 0 {
        log::warn!("modulation magnitude clamped to 1 in {m_clamps} step(s)");
    }
    Ok(NewtonOutcome { converged: norm < opts.tol_inf, x, iterations, history, trace, m_clamps })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x² = 2`, `x·y = 3` with a dummy label map.
    struct Toy;

    impl NewtonSystem for Toy {
        fn dim(&self) -> usize {
            2
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] * x[0] - 2.0, x[0] * x[1] - 3.0]
        }
        fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
            vec![(0, 0, 2.0 * x[0]), (1, 0, x[1]), (1, 1, x[0])]
        }
        fn step_limit(&self, _: &[f64], _: f64) -> f64 {
            1.0
        }
        fn project(&self, _: &mut [f64]) -> usize {
            0
        }
        fn row_label(&self, row: usize) -> String {
            format!("r{row}")
        }
        fn col_label(&self, col: usize) -> String {
            format!("c{col}")
        }
    }

    #[test]
    fn converges_quadratically_and_monotonically() {
        let opts = SolverOptions { tol_inf: 1e-14, ..Default::default() };
        let out = newton(&Toy, vec![1.0, 1.0], &opts).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.iterations < 10);
    }

    #[test]
    fn singular_names_row() {
        let e = newton(&Toy, vec![0.0, 0.0], &SolverOptions::default()).err().unwrap();
        assert!(matches!(e, Error::Singular { .. }), "{e}");
    }

    #[test]
    fn trace_csv_header() {
        let rows = [TraceRow { iter: 0, residual_inf: 1.5, step_norm: 0.0, damping: 0.0 }];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iter,residual_inf,step_norm,damping\n0,1.5,0.0,0.0"));
    }
}
