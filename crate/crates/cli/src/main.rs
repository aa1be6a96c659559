use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use tsbi_core::control::QLaw;
use tsbi_core::dermodels::{coarse_mpp, solve_mpp, PvParams};
use tsbi_core::dispatch::{self, DispatchModel, DispatchOptions, DispatchScenario};
use tsbi_core::experiments::{self, TdOperatingPoint};
use tsbi_core::report;
use tsbi_core::scenario::ScenarioFile;
use tsbi_core::solver::solve_power_flow;
use tsbi_core::tdbench::simulate;
use tsbi_core::tsbi::TsbiParams;
use tsbi_core::Error;

#[derive(Parser)]
#[command(name = "tsbi", version, about = "Loss-aware inverter power flow, validation and dispatch")]
struct Cli {
    /// Worker threads for sweeps and batch checks (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Newton tolerance on the scaled residual inf-norm.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Smoothing of the sign functions in the converter models.
    #[arg(long)]
    eps_sgn: Option<f64>,
    /// Smoothing of the Volt-VAR curve.
    #[arg(long)]
    eps_vv: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Coupled power flow; writes voltages.csv, inverters.csv, trace.csv.
    Pf {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Efficiency over a (P, Q) grid for one inverter at a stiff AC terminal.
    SweepEff {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400.0)]
        v_dc: f64,
        #[arg(long, default_value_t = 10e3)]
        s_rated: f64,
        #[arg(long, default_value_t = 240.0)]
        v_ac: f64,
        #[arg(long, default_value_t = 50)]
        n_p: usize,
        #[arg(long, default_value_t = 21)]
        n_q: usize,
        #[arg(long)]
        eps_sgn: Option<f64>,
    },
    /// Compare averaged device quantities with the switching simulation.
    ValidateTd {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200.0)]
        v_dc: f64,
        #[arg(long, default_value_t = 120.0)]
        v_grid: f64,
        #[arg(long, default_value_t = 1440.0)]
        p_out: f64,
        /// Also dump the matched waveform.
        #[arg(long)]
        waveform: bool,
    },
    /// Maximum power point of a PV string, closed form against a sweep.
    Mpp {
        #[arg(long)]
        out: PathBuf,
        /// JSON single-diode parameters; the LG400 preset when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        modules: u32,
    },
    /// Day-ahead battery schedule; writes one schedule CSV per model.
    Dispatch {
        #[arg(long)]
        out: PathBuf,
        /// JSON dispatch scenario; the synthetic day when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModelArg::Both)]
        model: ModelArg,
        #[arg(long, default_value_t = 1e-3)]
        eps_cs: f64,
    },
    /// Analytic against finite-difference Jacobian at perturbed states.
    CheckJacobian {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[command(flatten)]
        ov: Overrides,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Tsbi,
    CeCs,
    Both,
}

enum Failure {
    Input(String),
    Solver(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Invariant(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } | Error::Singular { .. } | Error::Unstable { .. } | Error::NoBracket(_) => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TSBI_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Pf { scenario, out, ov } => cmd_pf(&scenario, &out, &ov),
        Cmd::SweepEff { out, v_dc, s_rated, v_ac, n_p, n_q, eps_sgn } => cmd_sweep_eff(&out, v_dc, s_rated, v_ac, n_p, n_q, eps_sgn),
        Cmd::ValidateTd { out, v_dc, v_grid, p_out, waveform } => {
            cmd_validate_td(&out, &TdOperatingPoint { v_dc, v_grid, p_out, ..Default::default() }, waveform)
        }
        Cmd::Mpp { out, scenario, modules } => cmd_mpp(&out, scenario.as_deref(), modules),
        Cmd::Dispatch { out, scenario, model, eps_cs } => cmd_dispatch(&out, scenario.as_deref(), model, eps_cs),
        Cmd::CheckJacobian { scenario, out, samples, ov } => cmd_check_jacobian(&scenario, &out, samples, &ov),
    }
}

fn load_scenario(path: &Path, ov: &Overrides) -> Result<ScenarioFile, Failure> {
    let mut s = ScenarioFile::load(path)?;
    if let Some(t) = ov.tol {
        s.solver.tol_inf = t;
    }
    if let Some(m) = ov.max_iter {
        s.solver.max_iter = m;
    }
    for inv in &mut s.inverters {
        if let Some(e) = ov.eps_sgn {
            inv.params.eps_sgn = e;
        }
        if let (Some(e), QLaw::VoltVar(c)) = (ov.eps_vv, &mut inv.control.q_law) {
            c.eps_vv = e;
        }
    }
    s.solver.validate()?;
    Ok(s)
}

fn prepare_out(out: &Path) -> Outcome {
    fs::create_dir_all(out)?;
    Ok(())
}

fn cmd_pf(scenario: &Path, out: &Path, ov: &Overrides) -> Outcome {
    let s = load_scenario(scenario, ov)?;
    let sys = s.system()?;
    prepare_out(out)?;
    let rep = solve_power_flow(&sys, &s.solver)?;
    report::write_voltages(&sys, &rep.state, &out.join("voltages.csv"))?;
    report::write_inverters(&sys, &rep, &out.join("inverters.csv"))?;
    report::write_trace_file(&rep, &out.join("trace.csv"))?;
    if !rep.converged {
        return Err(Failure::Solver(format!("power flow did not converge in {} iterations (residual {:e})", rep.iterations, rep.final_residual())));
    }
    info!("converged in {} iterations, residual {:e}", rep.iterations, rep.final_residual());
    for r in &rep.inverters {
        let a = r.audit;
        if a.mismatch().abs() > 1e-6 * a.p_t1.abs().max(1.0) || a.losses.components().iter().any(|c| *c < -1e-9) {
            return Err(Failure::Invariant(format!("energy audit failed for inverter {}: {a:?}", r.id)));
        }
    }
    println!("converged in {} iterations; residual {:e}", rep.iterations, rep.final_residual());
    Ok(())
}

fn cmd_sweep_eff(out: &Path, v_dc: f64, s_rated: f64, v_ac: f64, n_p: usize, n_q: usize, eps_sgn: Option<f64>) -> Outcome {
    let mut params = TsbiParams::reference(v_dc, s_rated, 60.0);
    if let Some(e) = eps_sgn {
        params.eps_sgn = e;
    }
    params.validate()?;
    prepare_out(out)?;
    let q = s_rated * 0.4;
    let p_max = (s_rated * s_rated - q * q).sqrt();
    let pts = experiments::efficiency_sweep(params, v_ac, (0.02 * p_max, p_max), (-q, q), n_p, n_q)?;
    report::write_efficiency(&pts, &out.join("efficiency.csv"))?;
    let failed = pts.iter().filter(|p| !p.converged).count();
    if failed > 0 {
        return Err(Failure::Solver(format!("{failed} sweep points did not converge")));
    }
    println!("{} points written", pts.len());
    Ok(())
}

fn cmd_validate_td(out: &Path, op: &TdOperatingPoint, waveform: bool) -> Outcome {
    prepare_out(out)?;
    let v = experiments::validate_td(op)?;
    report::write_td_table(&v, &out.join("td_errors.csv"))?;
    if waveform {
        let p = TsbiParams::reference(op.v_dc, 10e3, 60.0);
        simulate(&v.config, &p.ssc, &p.lcl)?.write_csv(&out.join("waveform.csv"))?;
    }
    let worst = v.errors.iter().copied().fold(0.0, f64::max);
    println!("worst error {worst:.3}% at p_out {:.2} W", v.metrics.p_out_avg);
    Ok(())
}

fn cmd_mpp(out: &Path, params: Option<&Path>, modules: u32) -> Outcome {
    let base: PvParams = match params {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Failure::Input(e.to_string()))?,
        None => PvParams::lg400(),
    };
    if modules == 0 {
        return Err(Failure::Input("modules must be >= 1".into()));
    }
    let pv = base.series_string(modules);
    pv.validate()?;
    prepare_out(out)?;
    let mpp = solve_mpp(&pv)?;
    let brute = coarse_mpp(&pv, 2000)?;
    let mut w = csv::Writer::from_path(out.join("mpp.csv")).map_err(|e| Failure::Input(e.to_string()))?;
    let rows = [("closed_form", mpp.v_mp, mpp.i_mp, mpp.p_mp), ("sweep_2000", brute.v_mp, brute.i_mp, brute.p_mp)];
    let csv_err = |e: csv::Error| Failure::Input(e.to_string());
    w.write_record(["method", "v_mp", "i_mp", "p_mp"]).map_err(csv_err)?;
    for (name, v, i, p) in rows {
        w.write_record([name.to_string(), v.to_string(), i.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    if mpp.p_mp < brute.p_mp * (1.0 - 1e-3) {
        return Err(Failure::Invariant(format!("closed-form MPP {} W below sweep {} W", mpp.p_mp, brute.p_mp)));
    }
    println!("v_mp {:.4} V, i_mp {:.4} A, p_mp {:.3} W", mpp.v_mp, mpp.i_mp, mpp.p_mp);
    Ok(())
}

fn cmd_dispatch(out: &Path, scenario: Option<&Path>, model: ModelArg, eps_cs: f64) -> Outcome {
    let base: DispatchScenario = match scenario {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Failure::Input(e.to_string()))?,
        None => dispatch::day_fixture(DispatchModel::Tsbi),
    };
    base.validate()?;
    prepare_out(out)?;
    let mut runs = Vec::new();
    if model != ModelArg::CeCs {
        runs.push(("tsbi", DispatchModel::Tsbi));
    }
    if model != ModelArg::Tsbi {
        runs.push(("ce_cs", dispatch::fixture_ce_model(&base, eps_cs)?));
    }
    let idle = dispatch::idle_objective(&base);
    for (name, m) in runs {
        let scn = DispatchScenario { model: m, ..base.clone() };
        let s = dispatch::solve_dispatch(&scn, &DispatchOptions::default())?;
        dispatch::write_schedule_csv(&scn, &s, &out.join(format!("schedule_{name}.csv")))?;
        if !s.converged {
            warn!("{name}: projected-gradient norm {:e} above tolerance", s.grad_norm);
        }
        let b = &scn.battery;
        if s.soc.iter().any(|v| *v < b.soc_min - 1e-6 || *v > b.soc_max + 1e-6) {
            return Err(Failure::Invariant(format!("{name}: SOC left its bounds")));
        }
        println!("{name}: objective {:.4} (idle {idle:.4}), complementarity {:e}", s.objective, dispatch::complementarity_residual(&s));
    }
    Ok(())
}

fn cmd_check_jacobian(scenario: &Path, out: &Path, samples: usize, ov: &Overrides) -> Outcome {
    let s = load_scenario(scenario, ov)?;
    let sys = s.system()?;
    prepare_out(out)?;
    let rep = solve_power_flow(&sys, &s.solver)?;
    let errs = experiments::jacobian_check(&sys, &rep.state, samples, 0.05, 1);
    let csv_err = |e: csv::Error| Failure::Input(e.to_string());
    let mut w = csv::Writer::from_path(out.join("jacobian.csv")).map_err(csv_err)?;
    w.write_record(["sample", "rel_error"]).map_err(csv_err)?;
    for (k, e) in errs.iter().enumerate() {
        w.write_record([k.to_string(), e.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    println!("worst relative error {worst:e} over {samples} samples");
    if worst >= 1e-5 {
        return Err(Failure::Invariant(format!("Jacobian mismatch {worst:e}")));
    }
    Ok(())
}
