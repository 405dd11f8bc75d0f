//! Scenario files, single runs, push-recovery sweeps and the method ablation,
//! with CSV and SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod svg;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use phasewalk_core::sim::run_scenario;

pub use config::{ScenarioFile, SweepMode};
pub use error::{CliError, Result};
pub use sweep::{AblationRun, SweepCell};

/// Flags shared by every command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub plot: bool,
    pub out_dir: PathBuf,
    /// Worker threads; `PHASEWALK_THREADS` overrides it.
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            plot: false,
            out_dir: PathBuf::from("."),
            threads: None,
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Fell,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Fell => 3,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Simulate the scenario with its configured method and push.
pub fn cmd_walk(config: &Path, opts: &RunOptions) -> Result<Outcome> {
    let file = ScenarioFile::load(config)?;
    let cfg = file.sim_config(file.nmpc.method.into(), &file.disturbances()?)?;
    let log = run_scenario(&cfg)?;
    output::write_log(create(&opts.out_dir, &format!("{}_log.csv", file.name))?, &log)?;
    if opts.plot {
        write_text(&opts.out_dir, &format!("{}.svg", file.name), &svg::walk_svg(&file.name, &log))?;
    }
    let mean_solve = log.solve_times.iter().sum::<f64>() / log.solve_times.len().max(1) as f64;
    let last = log.rows.last().map(|r| r.com).unwrap_or_default();
    println!(
        "{}: {} ticks, {}, final CoM ({:.3}, {:.3}) m, mean solve {:.3} ms, {} NMPC failures",
        file.name,
        log.rows.len(),
        match log.fall_time() {
            Some(t) => format!("fell at {t:.2} s"),
            None => "no fall".into(),
        },
        last.x,
        last.y,
        1e3 * mean_solve,
        log.nmpc_failures()
    );
    Ok(if log.fell() { Outcome::Fell } else { Outcome::Success })
}

/// Maximum recoverable impulse over the configured grid.
pub fn cmd_sweep(config: &Path, opts: &RunOptions) -> Result<Vec<SweepCell>> {
    let file = ScenarioFile::load(config)?;
    let cells = sweep::run_sweep(&file, sweep::resolve_threads(opts.threads))?;
    output::write_sweep(create(&opts.out_dir, "sweep.csv")?, &cells)?;
    if opts.plot {
        let text = match file.sweep.mode {
            SweepMode::Direction => Some(svg::direction_svg(&cells)),
            SweepMode::Timing => Some(svg::timing_svg(&cells)),
            SweepMode::Magnitude => None,
        };
        if let Some(text) = text {
            write_text(&opts.out_dir, "sweep.svg", &text)?;
        }
    }
    println!("{:<10} {:>8} {:>10} {:>14} {:>7}", "method", "dir_deg", "timing_s", "max_impulse", "trials");
    for c in &cells {
        println!(
            "{:<10} {:>8.1} {:>10} {:>14.1} {:>7}{}",
            c.method.name(),
            c.direction_deg,
            c.timing.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into()),
            c.max_impulse(),
            c.trials,
            c.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
        );
    }
    Ok(cells)
}

/// Run M1 to M4 on the scenario's push. Falls are results here, not errors.
pub fn cmd_ablation(config: &Path, opts: &RunOptions) -> Result<Vec<AblationRun>> {
    let file = ScenarioFile::load(config)?;
    let runs = sweep::run_ablation(&file, sweep::resolve_threads(opts.threads))?;
    output::write_ablation(create(&opts.out_dir, "ablation.csv")?, &runs)?;
    output::write_ablation_traces(create(&opts.out_dir, "ablation_traces.csv")?, &runs)?;
    if opts.plot {
        write_text(&opts.out_dir, "ablation.svg", &svg::ablation_svg(&runs))?;
    }
    println!("{:<6} {:>10} {:>8} {:>10} {:>10}", "method", "impulse", "verdict", "fall_s", "settle_s");
    let opt = |v: Option<f64>| v.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into());
    for r in &runs {
        println!(
            "{:<6} {:>10.1} {:>8} {:>10} {:>10}",
            r.method.name(),
            r.impulse,
            r.verdict(),
            opt(r.log.fall_time()),
            opt(r.settle_time)
        );
    }
    Ok(runs)
}
