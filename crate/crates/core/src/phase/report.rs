use std::io::Write;

use serde::Serialize;

use super::checks::{
    check_conservation, check_sigma_rates, detect_phases, late_growth, primacy_selection_probe,
    ConservationReport, LateGrowth, PhaseReport, PrimacyReport, SigmaRateReport, PHASE_TOL,
};
use super::config::ToyConfig;
use super::model::Trajectory;

/// Singular values below this fraction of the largest are not rate-checked.
pub const SMALL_SIGMA_TOL: f64 = 1e-6;
/// Minimum singular-value gap, in units of the step's spectral norm, for a
/// rate check.
pub const GAP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToySummary {
    pub config: ToyConfig,
    pub bottleneck: bool,
    pub degenerate_init: bool,
    pub final_loss: f64,
    pub final_rankme: f64,
    pub phases: PhaseReport,
    pub late_growth: LateGrowth,
    pub conservation: ConservationReport,
    pub sigma_rates: SigmaRateReport,
    pub primacy: PrimacyReport,
}

pub fn summarize(traj: &Trajectory) -> ToySummary {
    let phases = detect_phases(&traj.rankme_series(), PHASE_TOL);
    let last = traj.records.last().expect("trajectory has step 0");
    ToySummary {
        config: traj.config.clone(),
        bottleneck: traj.config.has_bottleneck(),
        degenerate_init: traj.degenerate_init,
        final_loss: last.loss,
        final_rankme: last.rankme,
        late_growth: late_growth(traj, phases.peak),
        conservation: check_conservation(traj),
        sigma_rates: check_sigma_rates(traj, SMALL_SIGMA_TOL, GAP_FACTOR),
        primacy: primacy_selection_probe(traj, phases.peak),
        phases,
    }
}

/// Shortest round-trip text, switching to exponent form for very small or
/// large magnitudes.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn num(x: f64) -> String {
    format_float(x)
}

/// Writes `step,loss,rankme,sigma_f_1..,sigma_w_1..,align_err,conserve_err,a_norm`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    let kf = traj.records.first().map_or(0, |r| r.sigma_f.len());
    let kw = traj.records.first().map_or(0, |r| r.sigma_w.len());
    let mut header = vec!["step".to_string(), "loss".into(), "rankme".into()];
    header.extend((1..=kf).map(|i| format!("sigma_f_{i}")));
    header.extend((1..=kw).map(|i| format!("sigma_w_{i}")));
    header.extend(["align_err".into(), "conserve_err".into(), "a_norm".into()]);
    writeln!(out, "{}", header.join(","))?;
    for r in &traj.records {
        let mut row = vec![r.step.to_string(), num(r.loss), num(r.rankme)];
        row.extend(r.sigma_f.iter().map(|&x| num(x)));
        row.extend(r.sigma_w.iter().map(|&x| num(x)));
        row.extend([num(r.align_err), num(r.conserve_err), num(r.a_norm)]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
