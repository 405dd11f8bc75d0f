use std::io::Write;

use phasewalk_core::gait::PhaseType;
use phasewalk_core::sim::SimLog;

use crate::error::Result;
use crate::sweep::{AblationRun, SweepCell};

/// First line of every CSV file.
pub const SCHEMA_LINE: &str = "# schema=1";

/// Column order of `<name>_log.csv`.
pub const LOG_COLUMNS: [&str; 31] = [
    "time",
    "com_x",
    "com_y",
    "com_vel_x",
    "com_vel_y",
    "dcm_x",
    "dcm_y",
    "dcm_ref_x",
    "dcm_ref_y",
    "dcm_err_x",
    "dcm_err_y",
    "zmp_ref_x",
    "zmp_ref_y",
    "zmp_ctrl_x",
    "zmp_ctrl_y",
    "zmp_des_x",
    "zmp_des_y",
    "phase_index",
    "phase_type",
    "time_in_phase",
    "t_new",
    "swing_target_x",
    "swing_target_y",
    "swing_x",
    "swing_y",
    "swing_lift",
    "step_ctrl_x",
    "step_ctrl_y",
    "disturbance_active",
    "sqp_iterations",
    "converged",
];

/// Column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 8] = [
    "mode",
    "method",
    "direction_deg",
    "timing_s",
    "max_force_n",
    "max_impulse_ns",
    "trials",
    "error",
];

/// Column order of `ablation.csv`.
pub const ABLATION_COLUMNS: [&str; 6] = [
    "method",
    "impulse_ns",
    "verdict",
    "fall_time",
    "settle_time",
    "peak_dcm_err",
];

/// Nine significant digits, shortest form.
pub fn fmt_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.8e}");
    let parsed: f64 = s.parse().expect("formatted float parses");
    // Shortest decimal that round-trips the nine-digit value.
    let plain = format!("{parsed}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
    let sci = format!("{mantissa}e{exp}");
    if plain.len() <= sci.len() {
        plain
    } else {
        sci
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn writer<W: Write>(mut out: W) -> Result<csv::Writer<W>> {
    writeln!(out, "{SCHEMA_LINE}")?;
    Ok(csv::Writer::from_writer(out))
}

pub fn write_log<W: Write>(out: W, log: &SimLog) -> Result<()> {
    let mut w = writer(out)?;
    w.write_record(LOG_COLUMNS)?;
    for r in &log.rows {
        let phase = match r.phase_type {
            PhaseType::Ssp => "ssp",
            PhaseType::Dsp => "dsp",
        };
        let mut rec: Vec<String> = [
            r.time,
            r.com.x,
            r.com.y,
            r.com_vel.x,
            r.com_vel.y,
            r.dcm.x,
            r.dcm.y,
            r.dcm_ref.x,
            r.dcm_ref.y,
            r.dcm_err.x,
            r.dcm_err.y,
            r.zmp_ref.x,
            r.zmp_ref.y,
            r.zmp_ctrl.x,
            r.zmp_ctrl.y,
            r.zmp_des.x,
            r.zmp_des.y,
        ]
        .iter()
        .map(|&v| fmt_float(v))
        .collect();
        rec.push(r.phase_index.to_string());
        rec.push(phase.into());
        rec.extend(
            [
                r.time_in_phase,
                r.t_new,
                r.swing_target.x,
                r.swing_target.y,
                r.swing_pos.x,
                r.swing_pos.y,
                r.swing_lift,
                r.step_ctrl.x,
                r.step_ctrl.y,
            ]
            .iter()
            .map(|&v| fmt_float(v)),
        );
        rec.push(u8::from(r.disturbance_active).to_string());
        rec.push(r.sqp_iterations.to_string());
        rec.push(u8::from(r.converged).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(out: W, cells: &[SweepCell]) -> Result<()> {
    let mut w = writer(out)?;
    w.write_record(SWEEP_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.mode.to_string(),
            c.method.name().to_string(),
            fmt_float(c.direction_deg),
            fmt_opt(c.timing),
            fmt_float(c.max_force),
            fmt_float(c.max_impulse()),
            c.trials.to_string(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation<W: Write>(out: W, runs: &[AblationRun]) -> Result<()> {
    let mut w = writer(out)?;
    w.write_record(ABLATION_COLUMNS)?;
    for r in runs {
        w.write_record([
            r.method.name().to_string(),
            fmt_float(r.impulse),
            r.verdict().to_string(),
            fmt_opt(r.log.fall_time()),
            fmt_opt(r.settle_time),
            fmt_float(r.peak_error()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// DCM error norm of every method on a shared time axis; missing samples
/// after a fall are left empty.
pub fn write_ablation_traces<W: Write>(out: W, runs: &[AblationRun]) -> Result<()> {
    let mut w = writer(out)?;
    let mut header = vec!["time".to_string()];
    header.extend(runs.iter().map(|r| format!("{}_dcm_err", r.method.name())));
    w.write_record(&header)?;
    let n = runs.iter().map(|r| r.log.rows.len()).max().unwrap_or(0);
    for k in 0..n {
        let Some(time) = runs.iter().find_map(|r| r.log.rows.get(k).map(|row| row.time)) else {
            continue;
        };
        let mut rec = vec![fmt_float(time)];
        rec.extend(
            runs.iter()
                .map(|r| fmt_opt(r.log.rows.get(k).map(|row| row.dcm_err.norm()))),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.1), "0.1");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_float(123456789.123), "123456789");
        assert_eq!(fmt_float(-2.5e-12), "-2.5e-12");
        assert_eq!(fmt_float(0.0), "0");
        for v in [std::f64::consts::PI, -1e-7 / 7.0, 6.02e23, 1.5] {
            let back: f64 = fmt_float(v).parse().unwrap();
            assert!((back - v).abs() <= 5e-9 * v.abs());
        }
    }
}
