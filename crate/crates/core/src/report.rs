//! CSV artifacts. Floats are written in shortest round-trip form.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::experiments::{AuditRow, EffPoint, TdValidation};
use crate::solver::{write_trace, CoupledSystem, SolveReport};
use crate::tdbench::STEADY_NAMES;

/// Header is written explicitly so that an empty table still names its columns.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const VOLTAGE_COLUMNS: [&str; 6] = ["node", "phase", "v_re_pu", "v_im_pu", "v_mag_pu", "angle_deg"];

#[derive(Serialize)]
struct VoltageRow<'a> {
    node: &'a str,
    phase: &'static str,
    v_re_pu: f64,
    v_im_pu: f64,
    v_mag_pu: f64,
    angle_deg: f64,
}

pub fn write_voltages(sys: &CoupledSystem, x: &[f64], path: &Path) -> Result<()> {
    let v_all = &x[..sys.n_net()];
    write_rows(
        path,
        &VOLTAGE_COLUMNS,
        (0..sys.net.n_slots()).map(|s| {
            let (node, phase) = sys.net.slot_info(s);
            let v = sys.net.voltage(v_all, s);
            VoltageRow { node, phase: phase.label(), v_re_pu: v.re, v_im_pu: v.im, v_mag_pu: v.abs(), angle_deg: v.arg().to_degrees() }
        }),
    )
}

pub const INVERTER_COLUMNS: [&str; 18] = [
    "id",
    "node",
    "phase",
    "p_t1_w",
    "p_t2_w",
    "q_t2_var",
    "v_t2_v",
    "duty",
    "m_mag",
    "efficiency",
    "fsc_switching_w",
    "fsc_conduction_w",
    "ssc_switching_w",
    "ssc_reverse_recovery_w",
    "ssc_conduction_w",
    "lcl_resistive_w",
    "loss_total_w",
    "mismatch_w",
];

#[derive(Serialize)]
struct InverterRow<'a> {
    id: &'a str,
    node: &'a str,
    phase: &'static str,
    p_t1_w: f64,
    p_t2_w: f64,
    q_t2_var: f64,
    v_t2_v: f64,
    duty: f64,
    m_mag: f64,
    efficiency: f64,
    fsc_switching_w: f64,
    fsc_conduction_w: f64,
    ssc_switching_w: f64,
    ssc_reverse_recovery_w: f64,
    ssc_conduction_w: f64,
    lcl_resistive_w: f64,
    loss_total_w: f64,
    mismatch_w: f64,
}

pub fn write_inverters(sys: &CoupledSystem, rep: &SolveReport, path: &Path) -> Result<()> {
    write_rows(
        path,
        &INVERTER_COLUMNS,
        rep.inverters.iter().zip(&sys.inverters).map(|(r, inv)| {
            let l = r.audit.losses;
            InverterRow {
                id: &r.id,
                node: &inv.node,
                phase: inv.phase.label(),
                p_t1_w: r.audit.p_t1,
                p_t2_w: r.audit.p_t2,
                q_t2_var: r.v_t2.cross(r.state.i_t2),
                v_t2_v: r.v_t2.abs(),
                duty: r.state.d,
                m_mag: r.state.m_r.hypot(r.state.m_i),
                efficiency: r.audit.efficiency(),
                fsc_switching_w: l.fsc_switching,
                fsc_conduction_w: l.fsc_conduction,
                ssc_switching_w: l.ssc_switching,
                ssc_reverse_recovery_w: l.ssc_reverse_recovery,
                ssc_conduction_w: l.ssc_conduction,
                lcl_resistive_w: l.lcl_resistive,
                loss_total_w: l.total(),
                mismatch_w: r.audit.mismatch(),
            }
        }),
    )
}

pub fn write_trace_file(rep: &SolveReport, path: &Path) -> Result<()> {
    write_trace(&rep.trace, File::create(path)?)
}

pub const EFFICIENCY_COLUMNS: [&str; 11] = [
    "p_w",
    "q_var",
    "eta",
    "fsc_switching_w",
    "fsc_conduction_w",
    "ssc_switching_w",
    "ssc_reverse_recovery_w",
    "ssc_conduction_w",
    "lcl_resistive_w",
    "loss_total_w",
    "converged",
];

#[derive(Serialize)]
struct EffRow {
    p_w: f64,
    q_var: f64,
    eta: f64,
    fsc_switching_w: f64,
    fsc_conduction_w: f64,
    ssc_switching_w: f64,
    ssc_reverse_recovery_w: f64,
    ssc_conduction_w: f64,
    lcl_resistive_w: f64,
    loss_total_w: f64,
    converged: bool,
}

pub fn write_efficiency(points: &[EffPoint], path: &Path) -> Result<()> {
    write_rows(
        path,
        &EFFICIENCY_COLUMNS,
        points.iter().map(|p| {
            let l = p.losses;
            EffRow {
                p_w: p.p_w,
                q_var: p.q_var,
                eta: p.eta,
                fsc_switching_w: l.fsc_switching,
                fsc_conduction_w: l.fsc_conduction,
                ssc_switching_w: l.ssc_switching,
                ssc_reverse_recovery_w: l.ssc_reverse_recovery,
                ssc_conduction_w: l.ssc_conduction,
                lcl_resistive_w: l.lcl_resistive,
                loss_total_w: l.total(),
                converged: p.converged,
            }
        }),
    )
}

pub const TD_COLUMNS: [&str; 4] = ["quantity", "model", "td", "error_pct"];

#[derive(Serialize)]
struct TdRow {
    quantity: &'static str,
    model: f64,
    td: f64,
    error_pct: f64,
}

pub fn write_td_table(v: &TdValidation, path: &Path) -> Result<()> {
    let (m, t) = (v.model.to_array(), v.td.to_array());
    write_rows(path, &TD_COLUMNS, (0..5).map(|k| TdRow { quantity: STEADY_NAMES[k], model: m[k], td: t[k], error_pct: v.errors[k] }))
}

pub const AUDIT_COLUMNS: [&str; 8] = ["p_set_w", "q_set_var", "v_mag_v", "v_ang_rad", "p_t1_w", "p_t2_w", "loss_total_w", "mismatch_w"];

#[derive(Serialize)]
struct AuditCsv {
    p_set_w: f64,
    q_set_var: f64,
    v_mag_v: f64,
    v_ang_rad: f64,
    p_t1_w: f64,
    p_t2_w: f64,
    loss_total_w: f64,
    mismatch_w: f64,
}

pub fn write_audit(rows: &[AuditRow], path: &Path) -> Result<()> {
    write_rows(
        path,
        &AUDIT_COLUMNS,
        rows.iter().map(|r| AuditCsv {
            p_set_w: r.p_set,
            q_set_var: r.q_set,
            v_mag_v: r.v_mag,
            v_ang_rad: r.v_ang,
            p_t1_w: r.audit.p_t1,
            p_t2_w: r.audit.p_t2,
            loss_total_w: r.audit.losses.total(),
            mismatch_w: r.audit.mismatch(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{four_bus, QPolicy};
    use crate::solver::solve_power_flow;

    #[test]
    fn voltages_reingest_to_same_residual() {
        let s = four_bus(QPolicy::UnityPf);
        let sys = s.system().unwrap();
        let rep = solve_power_flow(&sys, &s.solver).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("voltages.csv");
        write_voltages(&sys, &rep.state, &path).unwrap();
        let mut x = rep.state.clone();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        for (slot, rec) in rd.records().enumerate() {
            let rec = rec.unwrap();
            x[2 * slot] = rec[2].parse().unwrap();
            x[2 * slot + 1] = rec[3].parse().unwrap();
        }
        assert_eq!(x, rep.state);
        write_inverters(&sys, &rep, &dir.path().join("inverters.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("inverters.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + sys.inverters.len());
        assert!(text.starts_with("id,node,phase,p_t1_w"));
    }

    #[test]
    fn empty_table_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.csv");
        write_audit(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), AUDIT_COLUMNS.join(",") + "\n");
    }
}
