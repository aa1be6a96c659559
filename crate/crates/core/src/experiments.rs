//! Experiment drivers shared by the CLI and the acceptance tests.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlSpec, PLaw, QLaw};
use crate::dermodels::Der;
use crate::error::{invalid, Result};
use crate::fixtures;
use crate::phasor::Phasor;
use crate::solver::{solve_inverter, SolverOptions};
use crate::tdbench::{compare_with_steady_state, match_power, Modulation, SteadyValues, TdConfig, TdLoad, TdMetrics};
use crate::tsbi::{EnergyAudit, Inverter, LossBreakdown, TsbiParams};

/// Battery inverter held at a fixed AC terminal, used by the single-inverter experiments.
pub fn bench_inverter(params: TsbiParams, p_set: f64, q_set: f64) -> Inverter {
    Inverter {
        id: "bench".into(),
        node: "grid".into(),
        phase: crate::netmodel::Phase::A,
        params,
        der: Der::Battery { params: fixtures::hv_battery(), soc: 0.5 },
        control: ControlSpec { p_law: PLaw::ConstantP { p_set }, q_law: QLaw::ConstantQ { q_set } },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdOperatingPoint {
    pub v_dc: f64,
    /// Grid RMS voltage behind the filter.
    pub v_grid: f64,
    pub p_out: f64,
    /// Metric window, fundamental cycles.
    pub cycles: usize,
}

impl Default for TdOperatingPoint {
    fn default() -> Self {
        Self { v_dc: 200.0, v_grid: 120.0, p_out: 1440.0, cycles: 18 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TdValidation {
    pub config: TdConfig,
    pub metrics: TdMetrics,
    pub td: SteadyValues,
    pub model: SteadyValues,
    /// Percent error per quantity.
    pub errors: [f64; 5],
}

/// Solve the averaged model at the operating point, then drive the switching
/// bench with the same modulation depth and adjust its angle until the bench
/// delivers the same output power.
pub fn validate_td(op: &TdOperatingPoint) -> Result<TdValidation> {
    let freq = 60.0;
    let params = TsbiParams::reference(op.v_dc, 10e3, freq);
    let inv = bench_inverter(params, op.p_out, 0.0);
    let v = Phasor::new(op.v_grid, 0.0);
    let sol = solve_inverter(&inv, v, op.v_grid, 0.0, None, &SolverOptions::default())?;
    let m = Phasor::new(sol.state.m_r, sol.state.m_i);
    let model = SteadyValues::predict(&params.ssc, m, sol.state.i_ac);
    let cfg = TdConfig::reference(op.v_dc, Modulation { m: m.abs(), theta: m.arg() }, TdLoad::Grid { v });
    let (config, _, metrics) = match_power(&cfg, &params.ssc, &params.lcl, op.p_out, op.cycles, 1e-4 * op.p_out)?;
    let td = SteadyValues::from(&metrics);
    Ok(TdValidation { config, metrics, td, model, errors: compare_with_steady_state(&td, &model) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffPoint {
    pub p_w: f64,
    pub q_var: f64,
    pub eta: f64,
    pub losses: LossBreakdown,
    pub converged: bool,
}

/// Sweep of output-side efficiency `P_T2 / P_T1` over a row-major `(P, Q)`
/// grid, points solved in parallel; `n_p` and `n_q` include both ends.
pub fn efficiency_sweep(params: TsbiParams, v_t2: f64, p_range: (f64, f64), q_range: (f64, f64), n_p: usize, n_q: usize) -> Result<Vec<EffPoint>> {
    if n_p == 0 || n_q == 0 || p_range.0 > p_range.1 || q_range.0 > q_range.1 {
        return Err(invalid("empty sweep range"));
    }
    let lin = |(a, b): (f64, f64), n: usize, k: usize| if n == 1 { a } else { a + (b - a) * k as f64 / (n - 1) as f64 };
    for (p, q) in [(p_range.0, q_range.0), (p_range.1, q_range.1), (p_range.0, q_range.1), (p_range.1, q_range.0)] {
        if p.hypot(q) > params.s_rated * (1.0 + 1e-9) {
            return Err(invalid(format!("sweep corner ({p}, {q}) exceeds s_rated {}", params.s_rated)));
        }
    }
    let v = Phasor::new(v_t2, 0.0);
    let opts = SolverOptions::default();
    let grid: Vec<(f64, f64)> = (0..n_p).flat_map(|i| (0..n_q).map(move |j| (i, j))).map(|(i, j)| (lin(p_range, n_p, i), lin(q_range, n_q, j))).collect();
    Ok(grid
        .par_iter()
        .map(|&(p, q)| match solve_inverter(&bench_inverter(params, p, q), v, v_t2, 0.0, None, &opts) {
            Ok(s) => EffPoint { p_w: p, q_var: q, eta: s.audit.efficiency(), losses: s.audit.losses, converged: true },
            Err(e) => {
                log::warn!("sweep point ({p}, {q}) failed: {e}");
                EffPoint { p_w: p, q_var: q, eta: f64::NAN, losses: LossBreakdown::default(), converged: false }
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub p_set: f64,
    pub q_set: f64,
    pub v_mag: f64,
    pub v_ang: f64,
    pub audit: EnergyAudit,
}

/// Randomized single-inverter operating points in both power directions,
/// seeded; rows come back in generation order.
pub fn audit_points(n: usize, seed: u64) -> Result<Vec<AuditRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = TsbiParams::reference(fixtures::V_DC, fixtures::S_RATED, 60.0);
    let cases: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let s = rng.gen_range(0.02..0.95) * params.s_rated;
            let phi = rng.gen_range(-0.5..0.5f64);
            let v = rng.gen_range(0.92..1.08) * fixtures::V_BASE;
            let ang = rng.gen_range(-PI..PI);
            (sign * s * phi.cos(), s * phi.sin(), v, ang)
        })
        .collect();
    let opts = SolverOptions::default();
    cases
        .par_iter()
        .map(|&(p, q, v, ang)| {
            let sol = solve_inverter(&bench_inverter(params, p, q), Phasor::from_polar(v, ang), fixtures::V_BASE, 0.0, None, &opts)?;
            Ok(AuditRow { p_set: p, q_set: q, v_mag: v, v_ang: ang, audit: sol.audit })
        })
        .collect()
}

/// Worst row-normwise error between the analytic Jacobian and extrapolated
/// central differences at `samples` states scattered around `x_ref` by `spread`
/// column scales; one entry per sample.
pub fn jacobian_check(sys: &crate::solver::CoupledSystem, x_ref: &[f64], samples: usize, spread: f64, seed: u64) -> Vec<f64> {
    use crate::solver::{jacobian_error, richardson_jacobian};
    let scale = sys.column_scales();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..samples).map(|_| x_ref.iter().zip(&scale).map(|(v, s)| v + spread * s * rng.gen_range(-1.0..1.0)).collect()).collect();
    xs.par_iter().map(|x| jacobian_error(&sys.jacobian_dense(x), &richardson_jacobian(|y| sys.residual(y), x, &scale, 1e-5))).collect()
}

/// Mean distance of inverter terminal voltage magnitudes (p.u.) from the
/// Volt-VAR dead band `[v2, v3]` of the default curve.
pub fn deadband_distance(sys: &crate::solver::CoupledSystem, x: &[f64]) -> f64 {
    let c = crate::control::VoltVarCurve::default_for(1.0);
    let n = sys.inverters.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|k| {
            let v = sys.net.voltage(&x[..sys.n_net()], sys.inverter_slot(k)).abs();
            (c.v2 - v).max(0.0) + (v - c.v3).max(0.0)
        })
        .sum();
    sum / n as f64
}
