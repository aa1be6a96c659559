use std::f64::consts::{PI, SQRT_2};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsbi_core::control::{voltvar_q, VoltVarCurve};
use tsbi_core::dermodels::{coarse_mpp, solve_mpp, PvParams};
use tsbi_core::dispatch::{self, DispatchModel, DispatchOptions};
use tsbi_core::experiments::{self, TdOperatingPoint};
use tsbi_core::fixtures::{self, QPolicy};
use tsbi_core::report;
use tsbi_core::solver::{solve_power_flow, SolveReport};
use tsbi_core::tsbi::ssc::ssc_device_currents;
use tsbi_core::tsbi::TsbiParams;

type Outcome = (bool, String);

fn td_csv(dir: &Path) -> (experiments::TdValidation, Duration) {
    let t = Instant::now();
    let v = experiments::validate_td(&TdOperatingPoint::default()).unwrap();
    let el = t.elapsed();
    report::write_td_table(&v, &dir.join("td_errors.csv")).unwrap();
    (v, el)
}

fn c01_time_domain_validation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (v, el) = td_csv(dir.path());
    let worst = v.errors.iter().copied().fold(0.0, f64::max);
    let p_ok = (v.metrics.p_out_avg - 1440.0).abs() < 0.5;
    let m = &v.metrics;
    let identity = (m.i_t_rms.powi(2) + m.i_d_rms.powi(2)) / (m.i_ac.abs().powi(2) / 2.0) - 1.0;
    let ok = worst < 5.0 && p_ok && el < Duration::from_secs(60) && identity.abs() < 0.03;
    (ok, format!("errors {:?} %, p_out {:.3} W, rms identity {identity:.2e}, {el:?}", v.errors, m.p_out_avg))
}

fn c02_algebraic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.gen_range(-1.0..=1.0);
        let i = rng.gen_range(1e-3..1e3);
        let d = ssc_device_currents(x, i);
        let e1 = ((d.it_rms.powi(2) + d.id_rms.powi(2)) - i * i / 2.0).abs() / (i * i / 2.0);
        let e2 = ((d.it_avg + d.id_avg) - SQRT_2 * i / PI).abs() / (SQRT_2 * i / PI);
        worst = worst.max(e1).max(e2);
    }
    (worst <= 1e-12, format!("worst relative error {worst:e}"))
}

fn c03_energy_audit() -> Outcome {
    let t = Instant::now();
    let rows = experiments::audit_points(1000, 3).unwrap();
    let el = t.elapsed();
    let mut worst = 0.0f64;
    let mut min_comp = f64::INFINITY;
    let (mut dis, mut chg) = (0, 0);
    for r in &rows {
        let a = r.audit;
        worst = worst.max(a.mismatch().abs() / a.p_t1.abs().max(1.0));
        min_comp = a.losses.components().iter().copied().fold(min_comp, f64::min);
        if a.p_t2 > 0.0 {
            dis += 1;
        } else {
            chg += 1;
        }
    }
    let ok = rows.len() == 1000 && worst <= 1e-6 && min_comp >= -1e-9 && dis > 0 && chg > 0 && el < Duration::from_secs(30);
    (ok, format!("worst mismatch {worst:e}·max(1,|P_T1|), min loss component {min_comp:e} W, {dis}/{chg} dis/chg, {el:?}"))
}

fn c04_efficiency_surface() -> Outcome {
    let s = fixtures::S_RATED;
    let params = TsbiParams::reference(fixtures::V_DC, s, 60.0);
    // P = 0.02·S + k·0.016·S, so k = 30 is 50 % load; Q steps of 0.05·S with Q = 0 at j = 10
    let (n_p, n_q) = (50, 21);
    let pts = experiments::efficiency_sweep(params, fixtures::V_BASE, (0.02 * s, 0.804 * s), (-0.5 * s, 0.5 * s), n_p, n_q).unwrap();
    let eta = |i: usize, j: usize| pts[i * n_q + j].eta;
    let all_conv = pts.iter().all(|p| p.converged);
    let m = 1e-6;
    let row: Vec<f64> = (0..n_p).map(|i| eta(i, 10)).collect();
    let a = row[0] < row[30] - m;
    let k_max = (0..n_p).max_by(|x, y| row[*x].total_cmp(&row[*y])).unwrap();
    let interior = k_max > 0 && k_max < n_p - 1;
    let rises = (1..=k_max).all(|k| row[k] > row[k - 1] + m);
    let falls = (k_max + 1..n_p).all(|k| row[k] < row[k - 1] - m);
    let b = interior && rises && falls;
    let col: Vec<f64> = (0..n_q).map(|j| eta(30, j)).collect();
    let j_max = (0..n_q).max_by(|x, y| col[*x].total_cmp(&col[*y])).unwrap();
    let up = (j_max + 1..n_q).all(|j| col[j] < col[j - 1] - m);
    let down = (0..j_max).all(|j| col[j] < col[j + 1] - m);
    let c = up && down && col[j_max] >= col[10] && (j_max as i64 - 10).abs() <= 2;
    (
        all_conv && a && b && c,
        format!(
            "eta(2%)={:.5} eta(50%)={:.5}; peak at P={:.0} W ({:.5}); Q-peak at {:.0} var ({:.6} vs {:.6} at Q=0)",
            row[0],
            row[30],
            pts[k_max * n_q].p_w,
            row[k_max],
            pts[30 * n_q + j_max].q_var,
            col[j_max],
            col[10]
        ),
    )
}

fn random_pv(rng: &mut ChaCha8Rng) -> PvParams {
    PvParams {
        i_ph: rng.gen_range(3.0..12.0),
        i_0: 10f64.powf(rng.gen_range(-11.0..-8.0)),
        r_s: rng.gen_range(0.05..0.6),
        r_sh: rng.gen_range(100.0..2000.0),
        n_d: rng.gen_range(1.0..1.5),
        n_s: if rng.gen_bool(0.5) { 60.0 } else { 72.0 },
        v_t: 0.025693,
    }
}

fn c05_mppt() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sets: Vec<PvParams> = (0..50).map(|_| random_pv(&mut rng)).collect();
    sets.push(PvParams::lg400());
    let mut worst = 0.0f64;
    for p in &sets {
        let m = solve_mpp(p).unwrap();
        let b = coarse_mpp(p, 2000).unwrap();
        worst = worst.max((m.p_mp - b.p_mp).abs() / b.p_mp);
    }
    let lg = solve_mpp(&PvParams::lg400()).unwrap();
    let anchor = (lg.v_mp - 40.6).abs() / 40.6 < 1e-3 && (lg.i_mp - 9.86).abs() / 9.86 < 1e-3;
    let el = t.elapsed();
    let ok = worst <= 1e-3 && anchor && el < Duration::from_secs(5);
    (ok, format!("worst power gap {:.4} %, LG400 V_MP {:.3} V I_MP {:.4} A, {el:?}", worst * 100.0, lg.v_mp, lg.i_mp))
}

fn c06_smooth_voltvar() -> Outcome {
    let c = VoltVarCurve::default_for(fixtures::S_RATED);
    let n = 100_000;
    let gap = (0..n)
        .map(|k| {
            let v = 0.8 + 0.4 * k as f64 / (n - 1) as f64;
            (voltvar_q(&c, v) - c.piecewise(v)).abs()
        })
        .fold(0.0, f64::max);
    let bound = c.smoothing_bound();
    let s = fixtures::ten_node(QPolicy::VoltVar);
    let rep = solve_power_flow(&s.system().unwrap(), &s.solver).unwrap();
    let ok = gap <= bound && rep.converged && rep.final_residual() <= 1e-8 && rep.iterations <= 50;
    (ok, format!("gap {gap:e} var <= bound {bound:e}; 10-node: {} iterations, residual {:e}", rep.iterations, rep.final_residual()))
}

fn c07_jacobian() -> Outcome {
    let s = fixtures::ten_node(QPolicy::VoltVar);
    let sys = s.system().unwrap();
    let rep = solve_power_flow(&sys, &s.solver).unwrap();
    let errs = experiments::jacobian_check(&sys, &rep.state, 100, 0.05, 7);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    (errs.len() == 100 && worst < 1e-5, format!("worst relative error {worst:e} over {} states, dim {}", errs.len(), sys.dim()))
}

fn feeder(q: QPolicy) -> (tsbi_core::solver::CoupledSystem, SolveReport, Duration) {
    let s = fixtures::synthetic_feeder(1000, 100, q, 7);
    let t = Instant::now();
    let sys = s.system().unwrap();
    let rep = solve_power_flow(&sys, &s.solver).unwrap();
    (sys, rep, t.elapsed())
}

fn c08_feeder_scalability() -> Outcome {
    let (sys_u, upf, t_u) = feeder(QPolicy::UnityPf);
    let (sys_v, vv, t_v) = feeder(QPolicy::VoltVar);
    let conv = |r: &SolveReport| r.converged && r.final_residual() <= 1e-8 && r.iterations <= 25;
    let d_u = experiments::deadband_distance(&sys_u, &upf.state);
    let d_v = experiments::deadband_distance(&sys_v, &vv.state);
    let limit = Duration::from_secs(10);
    let ok = conv(&upf) && conv(&vv) && t_u < limit && t_v < limit && d_v < d_u;
    (ok, format!("UPF {} it {t_u:?}, Volt-VAR {} it {t_v:?}; mean dead-band distance {d_u:.6} -> {d_v:.6} p.u.", upf.iterations, vv.iterations))
}

fn c09_dispatch() -> Outcome {
    let base = dispatch::day_fixture(DispatchModel::Tsbi);
    let eps_cs = 1e-3;
    let ce = dispatch::fixture_ce_model(&base, eps_cs).unwrap();
    let idle = dispatch::idle_objective(&base);
    let b = base.battery;
    let mut details = Vec::new();
    let mut ok = true;
    for m in [DispatchModel::Tsbi, ce] {
        let scn = dispatch::DispatchScenario { model: m, ..base.clone() };
        let t = Instant::now();
        let s = dispatch::solve_dispatch(&scn, &DispatchOptions::default()).unwrap();
        let el = t.elapsed();
        let cr = dispatch::complementarity_residual(&s);
        let soc_ok = s.soc.iter().all(|v| *v >= b.soc_min - 1e-6 && *v <= b.soc_max + 1e-6);
        let cr_ok = match m {
            DispatchModel::Tsbi => cr == 0.0 && s.p_charge.is_none(),
            DispatchModel::CeCs { .. } => cr <= eps_cs * (1.0 + 1e-12),
        };
        ok &= soc_ok && cr_ok && s.objective < idle && el < Duration::from_secs(10);
        let name = if matches!(m, DispatchModel::Tsbi) { "TSBI" } else { "CE-CS" };
        details.push(format!("{name}: objective {:.4} vs idle {idle:.4}, complementarity {cr:e}, {el:?}", s.objective));
    }
    (ok, details.join("; "))
}

fn artifacts(dir: &Path) {
    td_csv(dir);
    report::write_audit(&experiments::audit_points(1000, 3).unwrap(), &dir.join("audit.csv")).unwrap();
    for (q, name) in [(QPolicy::UnityPf, "upf"), (QPolicy::VoltVar, "voltvar")] {
        let (sys, rep, _) = feeder(q);
        report::write_voltages(&sys, &rep.state, &dir.join(format!("feeder_{name}_voltages.csv"))).unwrap();
        report::write_inverters(&sys, &rep, &dir.join(format!("feeder_{name}_inverters.csv"))).unwrap();
    }
}

fn c10_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    artifacts(a.path());
    artifacts(b.path());
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let same = names.iter().all(|n| std::fs::read(a.path().join(n)).unwrap() == std::fs::read(b.path().join(n)).unwrap());
    (names.len() == 6 && same, format!("{} CSV files compared byte for byte", names.len()))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, c01_time_domain_validation),
        (2, c02_algebraic_identities),
        (3, c03_energy_audit),
        (4, c04_efficiency_surface),
        (5, c05_mppt),
        (6, c06_smooth_voltvar),
        (7, c07_jacobian),
        (8, c08_feeder_scalability),
        (9, c09_dispatch),
        (10, c10_determinism),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let (ok, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {n:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
