use std::fmt;

use phasewalk_core::nmpc::Method;
use phasewalk_core::sim::{run_trial, Disturbance, SimConfig, SimLog, World};
use rayon::prelude::*;

use crate::config::{ScenarioFile, SweepMode};
use crate::error::Result;

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Direction => "direction",
            SweepMode::Timing => "timing",
            SweepMode::Magnitude => "magnitude",
        })
    }
}

/// One grid point of a sweep: where and when the push lands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub mode: SweepMode,
    pub method: Method,
    pub direction_deg: f64,
    /// Offset within the step cycle, for timing sweeps.
    pub timing: Option<f64>,
    pub onset: f64,
}

/// Result of the magnitude search at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub mode: SweepMode,
    pub method: Method,
    pub direction_deg: f64,
    pub timing: Option<f64>,
    /// Largest force on the search grid recovered from, N.
    pub max_force: f64,
    pub force_duration: f64,
    pub trials: usize,
    /// Simulation failure that stopped the search early.
    pub error: Option<String>,
}

impl SweepCell {
    pub fn max_impulse(&self) -> f64 {
        self.max_force * self.force_duration
    }
}

/// Configuration of one push trial.
pub fn trial_config(
    file: &ScenarioFile,
    method: Method,
    magnitude: f64,
    direction_deg: f64,
    onset: f64,
) -> Result<SimConfig> {
    let s = &file.sweep;
    let push = Disturbance::directional(magnitude, direction_deg, onset, s.force_duration)?;
    let mut cfg = file.sim_config(method, &[push])?;
    cfg.duration = s.trial_duration.max(onset + s.force_duration + s.settle_hold);
    Ok(cfg)
}

/// Whether the closed loop survives the given push.
pub fn recovers(
    file: &ScenarioFile,
    method: Method,
    magnitude: f64,
    direction_deg: f64,
    onset: f64,
) -> Result<bool> {
    let cfg = trial_config(file, method, magnitude, direction_deg, onset)?;
    let s = &file.sweep;
    Ok(run_trial(&cfg, s.settle_threshold, s.settle_hold)?.recovered)
}

/// Raise the force in fixed steps until the first fall; report the last
/// force recovered from.
pub fn search_cell(file: &ScenarioFile, spec: &CellSpec) -> SweepCell {
    let s = &file.sweep;
    let mut cell = SweepCell {
        mode: spec.mode,
        method: spec.method,
        direction_deg: spec.direction_deg,
        timing: spec.timing,
        max_force: 0.0,
        force_duration: s.force_duration,
        trials: 0,
        error: None,
    };
    let steps = (s.max_magnitude / s.magnitude_step + 1e-9).floor() as usize;
    for k in 1..=steps {
        let force = k as f64 * s.magnitude_step;
        cell.trials += 1;
        match recovers(file, spec.method, force, spec.direction_deg, spec.onset) {
            Ok(true) => cell.max_force = force,
            Ok(false) => break,
            Err(e) => {
                cell.error = Some(e.to_string());
                break;
            }
        }
    }
    cell
}

/// Grid points of the configured sweep, methods outermost.
pub fn cell_specs(file: &ScenarioFile) -> Vec<CellSpec> {
    let s = &file.sweep;
    let mut out = Vec::new();
    for method in file.methods() {
        match s.mode {
            SweepMode::Direction => out.extend(s.directions.iter().map(|&d| CellSpec {
                mode: s.mode,
                method,
                direction_deg: d,
                timing: None,
                onset: s.push_time,
            })),
            SweepMode::Timing => out.extend(s.timings.iter().map(|&t| CellSpec {
                mode: s.mode,
                method,
                direction_deg: s.push_direction,
                timing: Some(t),
                onset: s.cycle_start + t,
            })),
            SweepMode::Magnitude => out.push(CellSpec {
                mode: s.mode,
                method,
                direction_deg: s.push_direction,
                timing: None,
                onset: s.push_time,
            }),
        }
    }
    out
}

/// Worker count: `PHASEWALK_THREADS` wins over the flag; zero means all cores.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    std::env::var("PHASEWALK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .or(flag)
        .unwrap_or(0)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

/// Run every cell on `threads` workers. Results come back in grid order.
pub fn run_cells(file: &ScenarioFile, specs: &[CellSpec], threads: usize) -> Result<Vec<SweepCell>> {
    Ok(pool(threads)?.install(|| specs.par_iter().map(|s| search_cell(file, s)).collect()))
}

pub fn run_sweep(file: &ScenarioFile, threads: usize) -> Result<Vec<SweepCell>> {
    run_cells(file, &cell_specs(file), threads)
}

/// One method's run of the shared ablation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub method: Method,
    pub impulse: f64,
    pub log: SimLog,
    /// When the DCM error settled below the threshold for good after the push.
    pub settle_time: Option<f64>,
}

impl AblationRun {
    pub fn recovered(&self) -> bool {
        !self.log.fell()
    }

    pub fn verdict(&self) -> &'static str {
        if self.recovered() {
            "recover"
        } else {
            "fall"
        }
    }

    pub fn peak_error(&self) -> f64 {
        self.log
            .rows
            .iter()
            .map(|r| r.dcm_err.norm())
            .fold(0.0, f64::max)
    }
}

/// Run M1 to M4 on the scenario's push, one worker per method. The walk up
/// to the push onset is simulated once with the full controller and shared,
/// so every variant meets the push in exactly the same state.
pub fn run_ablation(file: &ScenarioFile, threads: usize) -> Result<Vec<AblationRun>> {
    let pushes = file.disturbances()?;
    let onset = pushes.iter().map(|d| d.start_time).fold(f64::INFINITY, f64::min);
    let push_end = pushes.iter().map(|d| d.end_time()).fold(0.0, f64::max);
    let impulse = pushes.iter().map(|d| d.impulse()).sum();
    let threshold = file.sweep.settle_threshold;
    let cfg = file.sim_config(Method::M1, &pushes)?;
    let end = cfg.duration;
    let mut prefix = World::new(cfg)?;
    if onset.is_finite() {
        prefix.run_until(onset)?;
    }
    let runs: Vec<Result<AblationRun>> = pool(threads)?.install(|| {
        Method::ALL
            .par_iter()
            .map(|&method| {
                let mut world = prefix.clone();
                world.set_nmpc_config(file.sim_config(method, &pushes)?.nmpc)?;
                world.run_until(end)?;
                let log = world.into_log();
                let settle_time = if log.fell() { None } else { log.settle_time(push_end, threshold) };
                Ok(AblationRun {
                    method,
                    impulse,
                    log,
                    settle_time,
                })
            })
            .collect()
    });
    runs.into_iter().collect()
}

/// Verdicts M1 and M2 recover, M3 and M4 fall, and M1 settles strictly
/// before M2. `runs` must be in `Method::ALL` order.
pub fn ablation_ordering_holds(runs: &[AblationRun]) -> bool {
    let [m1, m2, m3, m4] = runs else {
        return false;
    };
    let settles_first = match (m1.settle_time, m2.settle_time) {
        (Some(a), Some(b)) => a < b,
        _ => false,
    };
    m1.recovered() && m2.recovered() && !m3.recovered() && !m4.recovered() && settles_first
}

/// The scenario with its push replaced by the `[sweep]` push of `force`.
pub fn with_sweep_push(file: &ScenarioFile, force: f64) -> ScenarioFile {
    let mut f = file.clone();
    f.disturbance.magnitude = force;
    f.disturbance.direction_deg = f.sweep.push_direction;
    f.disturbance.start_time = f.sweep.push_time;
    f.disturbance.duration = f.sweep.force_duration;
    f
}

/// Smallest force on the search grid at which the ablation ordering holds
/// for the push configured in `[sweep]`. The scan starts above M3's maximum
/// recoverable force and stops at the smaller of M1's and M2's.
pub fn find_ablation_force(file: &ScenarioFile, threads: usize) -> Result<Option<f64>> {
    let s = &file.sweep;
    let specs: Vec<CellSpec> = Method::ALL
        .iter()
        .map(|&method| CellSpec {
            mode: SweepMode::Magnitude,
            method,
            direction_deg: s.push_direction,
            timing: None,
            onset: s.push_time,
        })
        .collect();
    let cells = run_cells(file, &specs, threads)?;
    let (m1, m2, m3) = (cells[0].max_force, cells[1].max_force, cells[2].max_force);
    let mut force = m3 + s.magnitude_step;
    while force <= m1.min(m2) + 1e-9 {
        if ablation_ordering_holds(&run_ablation(&with_sweep_push(file, force), threads)?) {
            return Ok(Some(force));
        }
        force += s.magnitude_step;
    }
    Ok(None)
}
