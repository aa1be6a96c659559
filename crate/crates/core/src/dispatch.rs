//! Day-ahead battery scheduling with either a constant-efficiency model kept
//! apart by a complementarity penalty (CE-CS) or the TSBI loss model with a
//! single signed inverter power.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlSpec, PLaw, QLaw};
use crate::dermodels::{BatteryParams, Der};
use crate::error::{invalid, Error, Result};
use crate::netmodel::Phase;
use crate::phasor::Phasor;
use crate::solver::{solve_inverter, SolverOptions};
use crate::tsbi::{Inverter, TsbiParams, TsbiState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum DispatchModel {
    CeCs { eta_c: f64, eta_d: f64, eps_cs: f64 },
    Tsbi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchScenario {
    pub dt: f64,
    /// Currency per kWh.
    pub price: Vec<f64>,
    pub load: Vec<f64>,
    pub pv_available: Vec<f64>,
    pub battery: BatteryParams,
    pub soc0: f64,
    pub inverter: TsbiParams,
    /// RMS AC terminal voltage.
    pub v_ac: f64,
    pub model: DispatchModel,
    /// Continuous charge/discharge limit, W.
    #[serde(default = "d_p_limit")]
    pub p_limit: f64,
    /// Value of energy left in the battery at the end, per kWh. Defaults to
    /// the lowest price of the day.
    #[serde(default)]
    pub terminal_price: Option<f64>,
}

fn d_p_limit() -> f64 {
    5e3
}

impl DispatchScenario {
    pub fn horizon(&self) -> usize {
        self.price.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        if n == 0 {
            return Err(invalid("dispatch horizon must be >= 1"));
        }
        if self.load.len() != n || self.pv_available.len() != n {
            return Err(Error::Dimension { expected: n, got: self.load.len().min(self.pv_available.len()) });
        }
        if !(self.dt > 0.0 && self.v_ac > 0.0 && self.p_limit > 0.0) {
            return Err(invalid("dt, v_ac and p_limit must be positive"));
        }
        let all = self.price.iter().chain(&self.load).chain(&self.pv_available);
        if !all.clone().all(|v| v.is_finite()) || self.pv_available.iter().any(|v| *v < 0.0) {
            return Err(invalid("price, load and pv must be finite, pv non-negative"));
        }
        self.battery.validate()?;
        if !(self.battery.soc_min..=self.battery.soc_max).contains(&self.soc0) {
            return Err(Error::SocBounds { soc: self.soc0, min: self.battery.soc_min, max: self.battery.soc_max });
        }
        self.inverter.validate()?;
        if let DispatchModel::CeCs { eta_c, eta_d, eps_cs } = self.model {
            if !(eta_c > 0.0 && eta_c <= 1.0 && eta_d > 0.0 && eta_d <= 1.0) {
                return Err(invalid("efficiencies must lie in (0, 1]"));
            }
            if !(eps_cs > 0.0) {
                return Err(invalid("eps_cs must be positive"));
            }
        }
        Ok(())
    }

    /// Bound on the per-step inverter power and battery-side power.
    pub fn p_max(&self) -> f64 {
        self.p_limit.min(0.95 * self.inverter.s_rated).min(0.8 * self.battery.v_oc_nom * self.battery.i_max)
    }

    fn terminal_price(&self) -> f64 {
        self.terminal_price.unwrap_or_else(|| self.price.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient inf-norm falls below this.
    pub tol: f64,
    pub rounds: usize,
    pub rho0: f64,
    pub rho_factor: f64,
    /// Width of the smooth `max(import, 0)`, watts.
    pub smooth_w: f64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, tol: 1e-7, rounds: 5, rho0: 10.0, rho_factor: 10.0, smooth_w: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schedule {
    /// AC power out of the inverter, positive when discharging.
    pub p_inv: Vec<f64>,
    /// DC charge and discharge power, CE-CS only.
    pub p_charge: Option<Vec<f64>>,
    pub p_discharge: Option<Vec<f64>>,
    /// Battery-side power, positive when discharging.
    pub p_batt: Vec<f64>,
    /// `horizon + 1` entries starting with the initial SOC.
    pub soc: Vec<f64>,
    pub grid: Vec<f64>,
    pub cost: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Battery-side power as a function of inverter AC power, tabulated from
/// inverter solves and interpolated with cubic Hermite pieces.
#[derive(Clone, Debug)]
pub struct TsbiCurve {
    pub p_ac: Vec<f64>,
    pub p_dc: Vec<f64>,
    pub slope: Vec<f64>,
}

fn dispatch_inverter(params: TsbiParams, battery: BatteryParams, soc: f64, p_set: f64) -> Inverter {
    Inverter {
        id: "dispatch".into(),
        node: "home".into(),
        phase: Phase::A,
        params,
        der: Der::Battery { params: battery, soc },
        control: ControlSpec { p_law: PLaw::ConstantP { p_set }, q_law: QLaw::ConstantQ { q_set: 0.0 } },
    }
}

impl TsbiCurve {
    pub fn build(params: TsbiParams, battery: BatteryParams, soc: f64, v_ac: f64, p_max: f64, n: usize) -> Result<Self> {
        let n = n.max(3) | 1;
        let p_ac: Vec<f64> = (0..n).map(|k| -p_max + 2.0 * p_max * k as f64 / (n - 1) as f64).collect();
        let opts = SolverOptions::default();
        let v = Phasor::new(v_ac, 0.0);
        let pts: Vec<(f64, f64)> = p_ac
            .par_iter()
            .map(|&p| {
                let s = solve_inverter(&dispatch_inverter(params, battery, soc, p), v, v_ac, 0.0, None, &opts)?;
                let d = s.dstate_dp.expect("constant-P control has a sensitivity");
                let st: &TsbiState = &s.state;
                Ok((st.v_t1 * st.i_t1, d[0] * st.i_t1 + st.v_t1 * d[1]))
            })
            .collect::<Result<_>>()?;
        let (p_dc, slope) = pts.into_iter().unzip();
        Ok(Self { p_ac, p_dc, slope })
    }

    /// `(P_dc, dP_dc/dP_ac)`; linear extrapolation outside the table.
    pub fn eval(&self, p: f64) -> (f64, f64) {
        let n = self.p_ac.len();
        let (lo, hi) = (self.p_ac[0], self.p_ac[n - 1]);
        if p <= lo {
            return (self.p_dc[0] + self.slope[0] * (p - lo), self.slope[0]);
        }
        if p >= hi {
            return (self.p_dc[n - 1] + self.slope[n - 1] * (p - hi), self.slope[n - 1]);
        }
        let h = (hi - lo) / (n - 1) as f64;
        let k = (((p - lo) / h) as usize).min(n - 2);
        let t = (p - self.p_ac[k]) / h;
        let (y0, y1, m0, m1) = (self.p_dc[k], self.p_dc[k + 1], self.slope[k] * h, self.slope[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let y = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let dy = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / h;
        (y, dy)
    }
}

/// Per-variable power mapping of the two models.
enum Conv<'a> {
    Ce { eta_c: f64, eta_d: f64, eps: f64 },
    Tsbi(&'a TsbiCurve),
}

impl Conv<'_> {
    fn vars(&self) -> usize {
        match self {
            Conv::Ce { .. } => 2,
            Conv::Tsbi(_) => 1,
        }
    }

    /// `(p_ac, p_batt)` and their gradients with respect to the step variables.
    fn map(&self, u: &[f64]) -> (f64, f64, [f64; 2], [f64; 2]) {
        match self {
            Conv::Ce { eta_c, eta_d, .. } => {
                let (pc, pd) = (u[0], u[1]);
                (eta_d * pd - pc / eta_c, pd - pc, [-1.0 / eta_c, *eta_d], [-1.0, 1.0])
            }
            Conv::Tsbi(c) => {
                let (b, db) = c.eval(u[0]);
                (u[0], b, [1.0, 0.0], [db, 0.0])
            }
        }
    }

    fn bounds(&self, p_max: f64) -> (f64, f64) {
        match self {
            Conv::Ce { .. } => (0.0, p_max),
            Conv::Tsbi(_) => (-p_max, p_max),
        }
    }
}

struct Problem<'a> {
    scn: &'a DispatchScenario,
    conv: Conv<'a>,
    p_max: f64,
    smooth: f64,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
}

fn smax(x: f64, w: f64) -> (f64, f64) {
    let r = (x * x + w * w).sqrt();
    (0.5 * (x + r), 0.5 * (1.0 + x / r))
}

impl Problem<'_> {
    fn nv(&self) -> usize {
        self.conv.vars()
    }

    fn kwh(&self) -> f64 {
        self.scn.dt / 3.6e6
    }

    /// Cost, SOC path and battery currents for decision vector `x` in watts.
    fn simulate(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.scn.horizon();
        let b = &self.scn.battery;
        let mut soc = vec![self.scn.soc0; n + 1];
        let (mut p_ac, mut p_b, mut grid, mut cost) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for t in 0..n {
            let (pa, pb, _, _) = self.conv.map(&x[t * self.nv()..(t + 1) * self.nv()]);
            let i = b.current_for_power(soc[t], pb)?;
            soc[t + 1] = soc[t] - i * self.scn.dt / b.c_batt;
            p_ac[t] = pa;
            p_b[t] = pb;
            grid[t] = self.scn.load[t] - self.scn.pv_available[t] - pa;
            cost[t] = self.scn.price[t] * grid[t].max(0.0) * self.kwh();
        }
        Ok((p_ac, p_b, soc, grid, cost))
    }

    fn credit_per_soc(&self) -> f64 {
        self.scn.terminal_price() * self.scn.battery.energy_capacity_j() / 3.6e6
    }

    /// Penalized objective and gradient.
    fn eval(&self, x: &[f64], rho: f64) -> Option<Eval> {
        let n = self.scn.horizon();
        let nv = self.nv();
        let b = &self.scn.battery;
        let k = self.kwh();
        let mut soc = self.scn.soc0;
        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        let mut di_du = vec![[0.0; 2]; n];
        let mut dsoc = vec![0.0; n + 1];
        for t in 0..n {
            let u = &x[t * nv..(t + 1) * nv];
            let (pa, pb, ga, gb) = self.conv.map(u);
            let voc = b.v_oc(soc);
            let i = b.current_for_power(soc, pb).ok()?;
            let di_db = 1.0 / (voc - 2.0 * b.r_int * i);
            let g = self.scn.load[t] - self.scn.pv_available[t] - pa;
            let (s, ds) = smax(g, self.smooth);
            value += self.scn.price[t] * s * k;
            let dcost_dpa = -self.scn.price[t] * ds * k;
            for j in 0..nv {
                grad[t * nv + j] += dcost_dpa * ga[j];
                di_du[t][j] = di_db * gb[j];
            }
            if let Conv::Ce { eps, .. } = self.conv {
                let s2 = self.p_max * self.p_max;
                let r = (u[0] * u[1] - eps) / s2;
                value += rho * r * r;
                grad[t * nv] += 2.0 * rho * r * u[1] / s2;
                grad[t * nv + 1] += 2.0 * rho * r * u[0] / s2;
            }
            soc -= i * self.scn.dt / b.c_batt;
            let hi = (soc - b.soc_max).max(0.0);
            let lo = (b.soc_min - soc).max(0.0);
            value += rho * (hi * hi + lo * lo);
            dsoc[t + 1] = 2.0 * rho * (hi - lo);
        }
        let credit = self.credit_per_soc();
        value -= credit * (soc - self.scn.soc0);
        dsoc[n] -= credit;
        // d soc_s / d i_t = −dt / c for every s > t
        let mut tail = 0.0;
        for t in (0..n).rev() {
            tail += dsoc[t + 1];
            let d_i = -tail * self.scn.dt / b.c_batt;
            for j in 0..nv {
                grad[t * nv + j] += d_i * di_du[t][j];
            }
        }
        Some(Eval { value, grad })
    }

    fn project(&self, x: &mut [f64]) {
        let (lo, hi) = self.conv.bounds(self.p_max);
        for v in x.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    fn pg_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let (lo, hi) = self.conv.bounds(self.p_max);
        x.iter().zip(g).fold(0.0f64, |m, (xi, gi)| m.max((xi - (xi - gi).clamp(lo, hi)).abs()))
    }
}

/// Projected gradient with Armijo backtracking; returns iterations used and
/// whether the projected-gradient tolerance was met.
fn descend(pb: &Problem, x: &mut Vec<f64>, rho: f64, opts: &DispatchOptions) -> (usize, bool, f64) {
    let mut cur = pb.eval(x, rho).expect("feasible start");
    let mut alpha = 1.0;
    let mut trial = x.clone();
    for it in 0..opts.max_iter {
        let pg = pb.pg_norm(x, &cur.grad);
        if pg <= opts.tol {
            return (it, true, pg);
        }
        let mut accepted = false;
        while alpha > 1e-12 {
            for ((t, xi), gi) in trial.iter_mut().zip(x.iter()).zip(&cur.grad) {
                *t = xi - alpha * gi;
            }
            pb.project(&mut trial);
            let decrease: f64 = cur.grad.iter().zip(x.iter()).zip(&trial).map(|((g, a), b)| g * (a - b)).sum();
            if let Some(next) = pb.eval(&trial, rho) {
                if next.value <= cur.value - 1e-4 * decrease {
                    std::mem::swap(x, &mut trial);
                    cur = next;
                    accepted = true;
                    alpha *= 2.0;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            let pg = pb.pg_norm(x, &cur.grad);
            return (it, pg <= opts.tol, pg);
        }
    }
    let pg = pb.pg_norm(x, &cur.grad);
    (opts.max_iter, pg <= opts.tol, pg)
}

/// Solve the scenario from the idle schedule.
pub fn solve_dispatch(scn: &DispatchScenario, opts: &DispatchOptions) -> Result<Schedule> {
    scn.validate()?;
    let p_max = scn.p_max();
    let curve;
    let conv = match scn.model {
        DispatchModel::CeCs { eta_c, eta_d, eps_cs } => Conv::Ce { eta_c, eta_d, eps: eps_cs },
        DispatchModel::Tsbi => {
            curve = TsbiCurve::build(scn.inverter, scn.battery, scn.soc0, scn.v_ac, p_max, 161)?;
            Conv::Tsbi(&curve)
        }
    };
    let pb = Problem { scn, conv, p_max, smooth: opts.smooth_w };
    let n = scn.horizon();
    let mut x = vec![0.0; n * pb.nv()];
    let mut rho = opts.rho0;
    let (mut iterations, mut converged, mut grad_norm) = (0, false, 0.0);
    for round in 0..opts.rounds.max(1) {
        let (it, ok, pg) = descend(&pb, &mut x, rho, opts);
        log::debug!("dispatch round {round}: rho {rho:e}, {it} iterations, projected gradient {pg:e}");
        iterations += it;
        converged = ok;
        grad_norm = pg;
        rho *= opts.rho_factor;
    }
    if !converged {
        log::warn!("dispatch stopped with projected-gradient norm {grad_norm:e}");
    }
    if let Conv::Ce { eps, .. } = pb.conv {
        for u in x.chunks_mut(2) {
            split_net(u, u[1] - u[0], eps);
        }
    }
    repair_soc(&pb, &mut x)?;
    build_schedule(&pb, &x, converged, grad_norm, iterations)
}

/// Charge/discharge pair with the given net and `P_c·P_d = eps`.
fn split_net(u: &mut [f64], net: f64, eps: f64) {
    // the small root is formed without cancellation
    let small = 2.0 * eps / (net.abs() + (net * net + 4.0 * eps).sqrt());
    if net >= 0.0 {
        u[0] = small;
        u[1] = eps / small;
    } else {
        u[1] = small;
        u[0] = eps / small;
    }
}

/// Walk forward and shrink any step that would leave the SOC window so the
/// SOC lands on the bound.
fn repair_soc(pb: &Problem, x: &mut [f64]) -> Result<()> {
    let b = &pb.scn.battery;
    let nv = pb.nv();
    let mut soc = pb.scn.soc0;
    let next = |u: &[f64], soc: f64| -> Result<f64> {
        let (_, p, _, _) = pb.conv.map(u);
        Ok(soc - b.current_for_power(soc, p)? * pb.scn.dt / b.c_batt)
    };
    for t in 0..pb.scn.horizon() {
        let u = &mut x[t * nv..(t + 1) * nv];
        let s = next(u, soc)?;
        if s > b.soc_max || s < b.soc_min {
            let target = if s > b.soc_max { b.soc_max } else { b.soc_min };
            let orig: Vec<f64> = u.to_vec();
            let scaled = |k: f64, u: &mut [f64]| match pb.conv {
                Conv::Ce { eps, .. } => split_net(u, k * (orig[1] - orig[0]), eps),
                Conv::Tsbi(_) => u[0] = k * orig[0],
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                scaled(mid, u);
                let sm = next(u, soc)?;
                if (sm - target) * (s - target) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            scaled(lo, u);
        }
        soc = next(&x[t * nv..(t + 1) * nv], soc)?;
    }
    Ok(())
}

fn build_schedule(pb: &Problem, x: &[f64], converged: bool, grad_norm: f64, iterations: usize) -> Result<Schedule> {
    let (p_inv, p_batt, soc, grid, cost) = pb.simulate(x)?;
    let credit = pb.credit_per_soc() * (soc[soc.len() - 1] - pb.scn.soc0);
    let objective = cost.iter().sum::<f64>() - credit;
    let (p_charge, p_discharge) = match pb.conv {
        Conv::Ce { .. } => (Some(x.iter().step_by(2).copied().collect()), Some(x.iter().skip(1).step_by(2).copied().collect())),
        Conv::Tsbi(_) => (None, None),
    };
    Ok(Schedule { p_inv, p_charge, p_discharge, p_batt, soc, grid, cost, objective, converged, grad_norm, iterations })
}

/// Objective of leaving the battery idle all day.
pub fn idle_objective(scn: &DispatchScenario) -> f64 {
    let k = scn.dt / 3.6e6;
    (0..scn.horizon()).map(|t| scn.price[t] * (scn.load[t] - scn.pv_available[t]).max(0.0) * k).sum()
}

/// `max_t P_c·P_d`; zero for single-variable schedules.
pub fn complementarity_residual(s: &Schedule) -> f64 {
    match (&s.p_charge, &s.p_discharge) {
        (Some(c), Some(d)) => c.iter().zip(d).map(|(a, b)| a * b).fold(0.0, f64::max),
        _ => 0.0,
    }
}

/// Energy-weighted `(eta_c, eta_d)` of the inverter over AC power levels `grid` (W, positive).
pub fn effective_weighted_efficiency(params: TsbiParams, battery: BatteryParams, v_ac: f64, grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() || grid.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("efficiency grid needs positive power levels"));
    }
    let opts = SolverOptions::default();
    let v = Phasor::new(v_ac, 0.0);
    let soc = 0.5 * (battery.soc_min + battery.soc_max);
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .par_iter()
        .map(|&p| {
            let d = solve_inverter(&dispatch_inverter(params, battery, soc, p), v, v_ac, 0.0, None, &opts)?.audit;
            let c = solve_inverter(&dispatch_inverter(params, battery, soc, -p), v, v_ac, 0.0, None, &opts)?.audit;
            Ok((d.p_t1, d.p_t2, -c.p_t1, -c.p_t2))
        })
        .collect::<Result<_>>()?;
    let sum = |f: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>();
    let eta_d = sum(|r| r.1) / sum(|r| r.0);
    let eta_c = sum(|r| r.2) / sum(|r| r.3);
    Ok((eta_c, eta_d))
}

/// 13.5 kWh pack on a 380 V string.
pub fn home_battery() -> BatteryParams {
    BatteryParams { c_batt: 13.5e3 * 3600.0 / 380.0, v_oc_nom: 380.0, r_int: 0.05, soc_min: 0.1, soc_max: 0.9, i_max: 20.0, ocv_slope: 0.0 }
}

/// Residential inverter rating used by the day fixture.
pub const HOME_S_RATED: f64 = 11.5e3;
pub const HOME_V_AC: f64 = 240.0;

/// Synthetic 24-hour day: two-tier price with a 16:00-21:00 peak, bell-shaped
/// PV peaking at 6 kW around 12:30, and an evening-peak household load.
pub fn day_fixture(model: DispatchModel) -> DispatchScenario {
    let hours: Vec<f64> = (0..24).map(|h| h as f64 + 0.5).collect();
    let price = hours.iter().map(|h| if (16.0..21.0).contains(h) { 0.36 } else { 0.12 }).collect();
    let pv = hours.iter().map(|h| if (6.0..19.0).contains(h) { 6000.0 * (-((h - 12.5) / 2.5).powi(2) / 2.0).exp() } else { 0.0 }).collect();
    let load = hours
        .iter()
        .map(|h| {
            600.0 + 1000.0 * (-((h - 7.5) / 1.2).powi(2) / 2.0).exp() + 2500.0 * (-((h - 19.0) / 1.8).powi(2) / 2.0).exp() + 150.0 * (2.0 * PI * h / 24.0).sin()
        })
        .collect();
    DispatchScenario {
        dt: 3600.0,
        price,
        load,
        pv_available: pv,
        battery: home_battery(),
        soc0: 0.5,
        inverter: TsbiParams::reference(400.0, HOME_S_RATED, 60.0),
        v_ac: HOME_V_AC,
        model,
        p_limit: d_p_limit(),
        terminal_price: None,
    }
}

/// CE-CS efficiencies taken from the inverter model over ten power levels.
pub fn fixture_ce_model(scn: &DispatchScenario, eps_cs: f64) -> Result<DispatchModel> {
    let p_max = scn.p_max();
    let grid: Vec<f64> = (1..=10).map(|k| p_max * k as f64 / 10.0).collect();
    let (eta_c, eta_d) = effective_weighted_efficiency(scn.inverter, scn.battery, scn.v_ac, &grid)?;
    Ok(DispatchModel::CeCs { eta_c, eta_d, eps_cs })
}

pub fn write_schedule_csv(scn: &DispatchScenario, s: &Schedule, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "price", "load_w", "pv_w", "p_inv_w", "soc", "grid_w", "cost"])?;
    for t in 0..scn.horizon() {
        w.write_record([
            t.to_string(),
            scn.price[t].to_string(),
            scn.load[t].to_string(),
            scn.pv_available[t].to_string(),
            s.p_inv[t].to_string(),
            s.soc[t + 1].to_string(),
            s.grid[t].to_string(),
            s.cost[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ce(eta: f64) -> DispatchModel {
        DispatchModel::CeCs { eta_c: eta, eta_d: eta, eps_cs: 1e-3 }
    }

    fn small(price: Vec<f64>, load: Vec<f64>, model: DispatchModel, lossless: bool) -> DispatchScenario {
        let n = price.len();
        let mut battery = home_battery();
        if lossless {
            battery.r_int = 0.0;
        }
        DispatchScenario {
            dt: 3600.0,
            price,
            load,
            pv_available: vec![0.0; n],
            battery,
            soc0: 0.5,
            inverter: TsbiParams::reference(400.0, HOME_S_RATED, 60.0),
            v_ac: HOME_V_AC,
            model,
            p_limit: 5e3,
            terminal_price: None,
        }
    }

    fn within_bounds(scn: &DispatchScenario, s: &Schedule) {
        for soc in &s.soc {
            assert!(*soc >= scn.battery.soc_min - 1e-6 && *soc <= scn.battery.soc_max + 1e-6, "{soc}");
        }
    }

    #[test]
    fn zero_prices() {
        let scn = small(vec![0.0; 4], vec![2000.0; 4], ce(0.95), false);
        let s = solve_dispatch(&scn, &DispatchOptions::default()).unwrap();
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.grad_norm, 0.0);
        assert!(s.converged);
    }

    #[test]
    fn flat_price_lossless_matches_exhaustive() {
        let scn = small(vec![0.2; 3], vec![3000.0; 3], ce(1.0), true);
        let s = solve_dispatch(&scn, &DispatchOptions::default()).unwrap();
        within_bounds(&scn, &s);
        // exhaustive search over five power levels per step
        let levels = [-4000.0, -2000.0, 0.0, 2000.0, 4000.0];
        assert!(scn.p_max() >= 4000.0);
        let credit = scn.terminal_price() * scn.battery.energy_capacity_j() / 3.6e6;
        let mut best = f64::INFINITY;
        for a in levels {
            for b in levels {
                for c in levels {
                    let p = [a, b, c];
                    let mut soc = scn.soc0;
                    let mut obj = 0.0;
                    for t in 0..3 {
                        soc -= p[t] / scn.battery.v_oc_nom * scn.dt / scn.battery.c_batt;
                        obj += 0.2 * (3000.0 - p[t]).max(0.0) / 1000.0;
                    }
                    best = best.min(obj - credit * (soc - scn.soc0));
                }
            }
        }
        assert!(s.objective <= best + 1e-6, "{} vs {best}", s.objective);
        assert!(s.p_inv.iter().all(|p| p.abs() < 1.0), "{:?}", s.p_inv);
    }

    #[test]
    fn two_step_threshold() {
        let eta: f64 = 0.95;
        for (ratio, profitable) in [(1.1, true), (0.9, false)] {
            let mut scn = small(vec![1.0, ratio / (eta * eta)], vec![6000.0, 6000.0], ce(eta), true);
            scn.soc0 = scn.battery.soc_min;
            scn.terminal_price = Some(0.0);
            let s = solve_dispatch(&scn, &DispatchOptions::default()).unwrap();
            within_bounds(&scn, &s);
            let charged = s.soc[1] - s.soc[0];
            assert_eq!(charged > 1e-3, profitable, "ratio {ratio}: soc {:?}", s.soc);
        }
    }

    #[test]
    fn curve_slope_matches_differences() {
        let scn = day_fixture(DispatchModel::Tsbi);
        let c = TsbiCurve::build(scn.inverter, scn.battery, 0.5, scn.v_ac, scn.p_max(), 41).unwrap();
        for k in [3, 10, 30, 37] {
            let fd = (c.p_dc[k + 1] - c.p_dc[k - 1]) / (c.p_ac[k + 1] - c.p_ac[k - 1]);
            assert!((fd - c.slope[k]).abs() < 2e-3 * c.slope[k].abs(), "{k}: {fd} vs {}", c.slope[k]);
        }
        // battery supplies more than the AC side receives, and absorbs less
        assert!(c.p_dc.iter().zip(&c.p_ac).all(|(d, a)| d > a));
    }

    #[test]
    fn efficiencies() {
        let scn = day_fixture(DispatchModel::Tsbi);
        let (c, d) = effective_weighted_efficiency(scn.inverter, scn.battery, scn.v_ac, &[4000.0]).unwrap();
        assert!(c < 1.0 && d < 1.0 && c > 0.8 && d > 0.8);
        let (c2, d2) = effective_weighted_efficiency(scn.inverter, scn.battery, scn.v_ac, &[2000.0, 4000.0, 6000.0]).unwrap();
        assert!(((c2 - d2) / d2).abs() < 0.02, "{c2} {d2}");
        assert!(effective_weighted_efficiency(scn.inverter, scn.battery, scn.v_ac, &[]).is_err());
    }

    #[test]
    fn penalized_gradient_matches_differences() {
        let mut scn = day_fixture(DispatchModel::Tsbi);
        scn.soc0 = 0.85;
        let curve = TsbiCurve::build(scn.inverter, scn.battery, 0.5, scn.v_ac, scn.p_max(), 81).unwrap();
        for conv in [Conv::Tsbi(&curve), Conv::Ce { eta_c: 0.96, eta_d: 0.97, eps: 1e-3 }] {
            let pb = Problem { scn: &scn, p_max: scn.p_max(), smooth: 1.0, conv };
            let nv = pb.nv();
            let x: Vec<f64> = (0..24 * nv).map(|k| 1500.0 * ((k as f64) * 0.7).sin().abs() - if nv == 1 { 600.0 } else { 0.0 }).collect();
            let e = pb.eval(&x, 1e3).unwrap();
            for k in [0, 5, 17, 24 * nv - 1] {
                let h = 1e-3;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (pb.eval(&xp, 1e3).unwrap().value - pb.eval(&xm, 1e3).unwrap().value) / (2.0 * h);
                assert!((fd - e.grad[k]).abs() <= 1e-5 * e.grad[k].abs().max(1e-6), "{k}: {fd} vs {}", e.grad[k]);
            }
        }
    }

    #[test]
    fn complementarity_of_synthetic_schedule() {
        let s = Schedule {
            p_inv: vec![0.0; 2],
            p_charge: Some(vec![2.0, 5.0]),
            p_discharge: Some(vec![3.0, 0.0]),
            p_batt: vec![0.0; 2],
            soc: vec![0.5; 3],
            grid: vec![0.0; 2],
            cost: vec![0.0; 2],
            objective: 0.0,
            converged: true,
            grad_norm: 0.0,
            iterations: 0,
        };
        assert_eq!(complementarity_residual(&s), 6.0);
    }
}
