use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{newton_solve_with, nudge_interior, SchemeError, SolveStats, StepSystem};
use crate::diagnostics::{entropy_production, record, relative_entropy_integrals, DiagnosticsRecord, RecordHistory, RESOLUTION};
use crate::mesh::{MeshError, StateField};
use crate::model::{steady_state, SimplexPoint};
use crate::scenario::{OutputCadence, Scenario};

/// Bookkeeping for one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    /// Time at the end of the step.
    pub t: f64,
    pub tau: f64,
    pub stats: SolveStats,
    pub entropy_old: f64,
    pub entropy: f64,
    pub dissipation: f64,
    pub hstar: f64,
    pub mass: Vec<f64>,
    pub interior_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub state: StateField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub uinf: SimplexPoint,
    /// Output-time states, starting with the (nudged) initial data.
    pub snapshots: Vec<Snapshot>,
    pub records: Vec<DiagnosticsRecord>,
    pub steps: Vec<StepLog>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateField {
        &self.snapshots.last().expect("trajectory has the initial snapshot").state
    }

    pub fn hstar_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.hstar)).collect()
    }

    pub fn total_rejections(&self) -> usize {
        self.steps.iter().map(|s| s.stats.step_rejections).sum()
    }
}

fn recoverable(e: &SchemeError) -> bool {
    matches!(
        e,
        SchemeError::NonConvergence { .. } | SchemeError::EntropyIncrease { .. } | SchemeError::Model(_)
    )
}

/// Integrates the scenario from `t = 0` to `T` with adaptive step control,
/// recording diagnostics on the configured cadence.
pub fn run_simulation(scenario: &Scenario) -> Result<Trajectory, SchemeError> {
    let settings = &scenario.settings;
    settings.validate()?;
    let spec = &scenario.model;
    let mesh = &scenario.mesh;
    let t_end = scenario.t_end;
    let t_eps = 1e-12 * t_end.max(1.0);

    let uinf = steady_state(&scenario.initial);
    let mut u = nudge_interior(&scenario.initial);
    let mut sys = StepSystem::new(spec.species(), mesh);

    let mut history = RecordHistory {
        tau: settings.tau,
        ..Default::default()
    };
    let first = record(spec, mesh, &u, &uinf, 0.0, &history);
    history.prev_hstar = Some(first.hstar);
    history.resolution_floor = RESOLUTION * first.hstar;
    let mut traj = Trajectory {
        uinf: uinf.clone(),
        snapshots: vec![Snapshot { t: 0.0, state: u.clone() }],
        records: vec![first],
        steps: Vec::new(),
    };

    let mut t = 0.0;
    let mut tau = settings.tau;
    let mut easy = 0usize;
    let mut accepted = 0usize;
    let mut outputs = 0usize;
    let mut rejections = 0usize;
    while t < t_end - t_eps {
        let target = match scenario.cadence {
            OutputCadence::EveryTime(dt) => (((outputs + 1) as f64) * dt).min(t_end),
            OutputCadence::EverySteps(_) => t_end,
        };
        let clipped = tau >= target - t - t_eps;
        let h = if clipped { target - t } else { tau };
        match newton_solve_with(&mut sys, spec, mesh, &u, h, settings) {
            Ok(out) => {
                t = if clipped { target } else { t + h };
                accepted += 1;
                let mut stats = out.stats;
                stats.step_rejections = rejections;
                rejections = 0;
                if stats.newton_iters <= 4 {
                    easy += 1;
                    if easy >= 3 {
                        tau = (2.0 * tau).min(settings.tau_max);
                        easy = 0;
                    }
                } else {
                    easy = 0;
                }
                u = out.u_new;
                let (ep_u, ep_q) = entropy_production(spec, mesh, &u);
                history.production_integral += h * (ep_u + ep_q);
                history.tau = h;
                history.newton_iters = stats.newton_iters;
                traj.steps.push(StepLog {
                    t,
                    tau: h,
                    stats,
                    entropy_old: out.entropy_old,
                    entropy: out.entropy_new,
                    dissipation: out.dissipation,
                    hstar: relative_entropy_integrals(spec, mesh, &u, &uinf).total(),
                    mass: u.masses(mesh),
                    interior_margin: u.interior_margin(),
                });
                let due = match scenario.cadence {
                    OutputCadence::EveryTime(_) => clipped,
                    OutputCadence::EverySteps(m) => accepted.is_multiple_of(m),
                } || t >= t_end - t_eps;
                if due {
                    outputs += 1;
                    let rec = record(spec, mesh, &u, &uinf, t, &history);
                    history.prev_hstar = Some(rec.hstar);
                    history.c0_hat = rec.c0_hat;
                    history.production_integral = 0.0;
                    traj.records.push(rec);
                    traj.snapshots.push(Snapshot { t, state: u.clone() });
                }
            }
            Err(e) if recoverable(&e) => {
                rejections += 1;
                easy = 0;
                tau = 0.5 * h;
                if tau < settings.tau_min {
                    return Err(SchemeError::StepTooSmall {
                        t,
                        tau,
                        last: e.to_string(),
                        stats: SolveStats {
                            step_rejections: rejections,
                            ..Default::default()
                        },
                    });
                }
            }
            Err(SchemeError::LinearSolve(source)) => return Err(SchemeError::Abort { t, source }),
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

/// Writes `state_t<time>.csv` into `dir` and returns its path.
pub fn write_snapshot(dir: &Path, snapshot: &Snapshot, mesh: &crate::mesh::Mesh1D) -> Result<PathBuf, MeshError> {
    let path = dir.join(format!("state_t{:.6}.csv", snapshot.t));
    let file = BufWriter::new(File::create(&path)?);
    snapshot.state.write_csv(mesh, file)?;
    Ok(path)
}
