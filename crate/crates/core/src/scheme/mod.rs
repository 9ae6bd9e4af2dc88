//! Implicit Euler in entropy variables with diagonal face mobilities.
//!
//! The unknowns are `w = h'(u)` per cell; the primal state is always
//! recovered through the inverse entropy map, so accepted states lie in the
//! open simplex without clipping.

mod run;

pub use run::{run_simulation, write_snapshot, Snapshot, StepLog, Trajectory};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::diagnostics::total_entropy;
use crate::linalg::{BlockTridiagonal, LinalgError};
use crate::mesh::{CellField, Mesh1D, StateField};
use crate::model::{entropy_gradient_raw, InversionWorkspace, Local, ModelError, ModelSpec, INVERSION_TOL};

/// Cells closer than this to the simplex boundary are moved inward before
/// the first inversion.
pub const NUDGE: f64 = 1e-12;
/// Allowed discrete entropy increase per step when the guard is on.
pub const ENTROPY_GUARD_TOL: f64 = 1e-10;
const MAX_NEWTON_UPDATE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MobilityMean {
    #[default]
    Arithmetic,
    Geometric,
    UpwindMax,
}

impl MobilityMean {
    pub fn as_str(&self) -> &'static str {
        match self {
            MobilityMean::Arithmetic => "arithmetic",
            MobilityMean::Geometric => "geometric",
            MobilityMean::UpwindMax => "upwind-max",
        }
    }
}

impl FromStr for MobilityMean {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "geometric" => Ok(Self::Geometric),
            "upwind-max" => Ok(Self::UpwindMax),
            other => Err(format!("unknown mobility mean '{other}' (arithmetic, geometric, upwind-max)")),
        }
    }
}

impl fmt::Display for MobilityMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the Newton matrix treats the dependence of the mobility on `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// Mobility frozen at the current iterate.
    #[default]
    Frozen,
    /// Full derivative including `dM/dw`.
    Exact,
}

impl FromStr for JacobianMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "exact" => Ok(Self::Exact),
            other => Err(format!("unknown jacobian mode '{other}' (frozen, exact)")),
        }
    }
}

impl fmt::Display for JacobianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JacobianMode::Frozen => "frozen",
            JacobianMode::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperSettings {
    pub tau: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub mobility_mean: MobilityMean,
    pub entropy_guard: bool,
    pub jacobian: JacobianMode,
}

impl Default for StepperSettings {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            tau_min: 1e-8,
            tau_max: 1e-3,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            mobility_mean: MobilityMean::Arithmetic,
            entropy_guard: true,
            jacobian: JacobianMode::Frozen,
        }
    }
}

impl StepperSettings {
    pub fn validate(&self) -> Result<(), SchemeError> {
        let ok = self.tau_min > 0.0
            && self.tau_min <= self.tau
            && self.tau <= self.tau_max
            && self.tau_max.is_finite()
            && self.newton_tol > 0.0
            && self.newton_max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(SchemeError::InvalidSettings(format!(
                "need 0 < tau_min <= tau <= tau_max and newton_tol > 0 (tau_min={}, tau={}, tau_max={}, newton_tol={}, newton_max_iter={})",
                self.tau_min, self.tau, self.tau_max, self.newton_tol, self.newton_max_iter
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub newton_iters: usize,
    pub linear_solves: usize,
    pub step_rejections: usize,
    pub final_residual_norm: f64,
}

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("linear solve failed: {0}")]
    LinearSolve(#[from] LinalgError),
    #[error("newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("discrete entropy increased by {increase:.3e}")]
    EntropyIncrease { increase: f64 },
    #[error("step size {tau:.3e} fell below tau_min at t = {t}: {last}")]
    StepTooSmall { t: f64, tau: f64, last: String, stats: SolveStats },
    #[error("linear solve failed at t = {t}: {source}")]
    Abort { t: f64, source: LinalgError },
    #[error("invalid stepper settings: {0}")]
    InvalidSettings(String),
    #[error("state and mesh disagree: {0}")]
    Shape(String),
}

/// Face value of a cell mobility.
pub fn face_mobility(mean: MobilityMean, ml: f64, mr: f64) -> f64 {
    match mean {
        MobilityMean::Arithmetic => 0.5 * (ml + mr),
        MobilityMean::Geometric => (ml * mr).sqrt(),
        MobilityMean::UpwindMax => ml.max(mr),
    }
}

/// `(d/dmL, d/dmR)` of [`face_mobility`].
fn face_mobility_derivative(mean: MobilityMean, ml: f64, mr: f64) -> (f64, f64) {
    match mean {
        MobilityMean::Arithmetic => (0.5, 0.5),
        MobilityMean::Geometric => {
            if ml > 0.0 && mr > 0.0 {
                let g = (ml * mr).sqrt();
                (0.5 * g / ml, 0.5 * g / mr)
            } else {
                (0.0, 0.0)
            }
        }
        MobilityMean::UpwindMax => {
            if ml >= mr {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
    }
}

/// Moves a state off the simplex boundary by a convex combination with its
/// cell average, which keeps every species mass unchanged. States already at
/// least [`NUDGE`] inside are returned untouched.
pub fn nudge_interior(u: &StateField) -> StateField {
    if u.interior_margin() >= NUDGE {
        return u.clone();
    }
    let n = u.species();
    let cells = u.cells();
    let mut mean = vec![0.0; n];
    for k in 0..cells {
        for (m, x) in mean.iter_mut().zip(u.cell(k)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= cells as f64;
    }
    let mean_margin = mean.iter().copied().fold(1.0 - mean.iter().sum::<f64>(), f64::min);
    if mean_margin <= NUDGE {
        // the average itself is on the boundary; nothing mass-preserving helps
        return u.clone();
    }
    let theta = (2.0 * NUDGE / mean_margin).min(1.0);
    let mut values = u.values().to_vec();
    for k in 0..cells {
        for i in 0..n {
            let v = &mut values[k * n + i];
            *v = (1.0 - theta) * *v + theta * mean[i];
        }
    }
    StateField::from_trusted(CellField::from_values(n, values).expect("shape preserved"))
}

/// Buffers for residual and Jacobian assembly on a fixed mesh.
pub(crate) struct StepSystem {
    n: usize,
    cells: usize,
    dx: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    mob: Vec<f64>,
    face: Vec<f64>,
    dudw: Vec<f64>,
    dmdw: Vec<f64>,
    pub residual: Vec<f64>,
    pub matrix: BlockTridiagonal,
    local: Local,
    scratch: Vec<f64>,
    dmdu: Vec<f64>,
    inv: InversionWorkspace,
}

impl StepSystem {
    pub fn new(n: usize, mesh: &Mesh1D) -> Self {
        let cells = mesh.cells();
        Self {
            n,
            cells,
            dx: mesh.dx(),
            u: vec![0.0; n * cells],
            w: vec![0.0; n * cells],
            mob: vec![0.0; n * cells],
            face: vec![0.0; n * cells.saturating_sub(1)],
            dudw: vec![0.0; n * n * cells],
            dmdw: vec![0.0; n * n * cells],
            residual: vec![0.0; n * cells],
            matrix: BlockTridiagonal::new(n, cells),
            local: Local::new(n),
            scratch: vec![0.0; n],
            dmdu: vec![0.0; n * n],
            inv: InversionWorkspace::new(n),
        }
    }

    /// Sets `u` to an interior state and `w = h'(u)`.
    pub fn load_primal(&mut self, spec: &ModelSpec, u: &[f64]) {
        let n = self.n;
        self.u.copy_from_slice(u);
        for k in 0..self.cells {
            entropy_gradient_raw(spec, &u[k * n..(k + 1) * n], &mut self.local, &mut self.w[k * n..(k + 1) * n]);
        }
    }

    /// Recomputes `u = u(w)` cell by cell, warm-started from the current `u`.
    pub fn update_primal(&mut self, spec: &ModelSpec) -> Result<(), ModelError> {
        let n = self.n;
        for k in 0..self.cells {
            let w = &self.w[k * n..(k + 1) * n];
            let u = &mut self.u[k * n..(k + 1) * n];
            self.inv.invert(spec, w, u, INVERSION_TOL)?;
        }
        Ok(())
    }

    /// Cell mobilities from the state `u_mob`, plus `du/dw` at the current `u`
    /// and, for the exact Jacobian, `dM/dw`.
    fn cell_quantities(&mut self, spec: &ModelSpec, u_mob: Option<&[f64]>, mode: JacobianMode) {
        let n = self.n;
        let d = spec.diffusivities();
        for k in 0..self.cells {
            let u = &self.u[k * n..(k + 1) * n];
            spec.local(u, &mut self.local);
            spec.inverse_hessian(u, &self.local, &mut self.scratch, &mut self.dudw[k * n * n..(k + 1) * n * n]);
            if mode == JacobianMode::Exact {
                for i in 0..n {
                    let p = self.local.grad_chi[i].exp();
                    for l in 0..n {
                        let diag = if i == l { self.local.q * (1.0 + u[i] * self.local.curv_chi[i]) } else { 0.0 };
                        self.dmdu[i * n + l] = d[i] * p * (diag - u[i] * self.local.dq);
                    }
                }
                let dudw = &self.dudw[k * n * n..(k + 1) * n * n];
                let out = &mut self.dmdw[k * n * n..(k + 1) * n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = (0..n).map(|l| self.dmdu[i * n + l] * dudw[l * n + j]).sum();
                    }
                }
            }
            let src = match u_mob {
                Some(m) => &m[k * n..(k + 1) * n],
                None => &self.u[k * n..(k + 1) * n],
            };
            if u_mob.is_some() {
                spec.local(src, &mut self.local);
            }
            for i in 0..n {
                self.mob[k * n + i] = d[i] * src[i] * self.local.grad_chi[i].exp() * self.local.q;
            }
        }
    }

    fn face_values(&mut self, mean: MobilityMean) {
        let n = self.n;
        for f in 0..self.cells.saturating_sub(1) {
            for i in 0..n {
                self.face[f * n + i] = face_mobility(mean, self.mob[f * n + i], self.mob[(f + 1) * n + i]);
            }
        }
    }

    /// Fills `residual` from the current `u`, `w` and face mobilities and
    /// returns its max norm.
    fn assemble_residual(&mut self, u_old: &[f64], tau: f64) -> f64 {
        let n = self.n;
        let c = tau / (self.dx * self.dx);
        for (r, (u, o)) in self.residual.iter_mut().zip(self.u.iter().zip(u_old)) {
            *r = u - o;
        }
        for f in 0..self.cells.saturating_sub(1) {
            for i in 0..n {
                let g = self.face[f * n + i] * (self.w[(f + 1) * n + i] - self.w[f * n + i]);
                self.residual[f * n + i] -= c * g;
                self.residual[(f + 1) * n + i] += c * g;
            }
        }
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Evaluates everything at the current `w`/`u` and returns `|R|_inf`.
    pub fn evaluate(
        &mut self,
        spec: &ModelSpec,
        u_old: &[f64],
        tau: f64,
        mean: MobilityMean,
        mode: JacobianMode,
        u_mob: Option<&[f64]>,
    ) -> f64 {
        self.cell_quantities(spec, u_mob, mode);
        self.face_values(mean);
        self.assemble_residual(u_old, tau)
    }

    /// Assembles `dR/dw` after [`StepSystem::evaluate`].
    pub fn assemble_jacobian(&mut self, tau: f64, mean: MobilityMean, mode: JacobianMode) {
        let n = self.n;
        let nn = n * n;
        let c = tau / (self.dx * self.dx);
        self.matrix.clear();
        for k in 0..self.cells {
            self.matrix.diag_block_mut(k).copy_from_slice(&self.dudw[k * nn..(k + 1) * nn]);
        }
        for f in 0..self.cells.saturating_sub(1) {
            for i in 0..n {
                let fm = c * self.face[f * n + i];
                self.matrix.diag_block_mut(f)[i * n + i] += fm;
                self.matrix.diag_block_mut(f + 1)[i * n + i] += fm;
                self.matrix.upper_block_mut(f)[i * n + i] -= fm;
                self.matrix.lower_block_mut(f + 1)[i * n + i] -= fm;
            }
            if mode == JacobianMode::Exact {
                for i in 0..n {
                    let (dl, dr) = face_mobility_derivative(mean, self.mob[f * n + i], self.mob[(f + 1) * n + i]);
                    let delta = self.w[(f + 1) * n + i] - self.w[f * n + i];
                    for j in 0..n {
                        let gl = c * delta * dl * self.dmdw[f * nn + i * n + j];
                        let gr = c * delta * dr * self.dmdw[(f + 1) * nn + i * n + j];
                        self.matrix.diag_block_mut(f)[i * n + j] -= gl;
                        self.matrix.upper_block_mut(f)[i * n + j] -= gr;
                        self.matrix.lower_block_mut(f + 1)[i * n + j] += gl;
                        self.matrix.diag_block_mut(f + 1)[i * n + j] += gr;
                    }
                }
            }
        }
    }

    /// `tau sum_faces sum_i Fm (dw/dx)^2 dx` at the current iterate.
    pub fn dissipation(&self, tau: f64) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for f in 0..self.cells.saturating_sub(1) {
            for i in 0..n {
                let g = (self.w[(f + 1) * n + i] - self.w[f * n + i]) / self.dx;
                s += self.face[f * n + i] * g * g;
            }
        }
        tau * s * self.dx
    }
}

/// Per-species sum of the residual relative to the species total.
const MASS_BALANCE_TOL: f64 = 1e-14;

fn species_sums(values: &[f64], n: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n];
    for (k, v) in values.iter().enumerate() {
        sums[k % n] += v;
    }
    sums
}

/// The residual sums to the mass change of the step, so this bounds the
/// per-step mass drift independently of the pointwise tolerance.
fn mass_balanced(residual: &[f64], old_mass: &[f64], n: usize) -> bool {
    species_sums(residual, n)
        .iter()
        .zip(old_mass)
        .all(|(r, m)| r.abs() <= MASS_BALANCE_TOL * m.max(f64::MIN_POSITIVE))
}

fn check_shape(spec: &ModelSpec, mesh: &Mesh1D, cells: usize, comps: usize) -> Result<(), SchemeError> {
    if cells != mesh.cells() || comps != spec.species() {
        return Err(SchemeError::Shape(format!(
            "field has {cells} cells x {comps} species, mesh has {} cells and the model {} species",
            mesh.cells(),
            spec.species()
        )));
    }
    Ok(())
}

/// Residual of the implicit step at `w_new`.
pub fn assemble_residual(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    w_new: &CellField,
    tau: f64,
    mean: MobilityMean,
) -> Result<CellField, SchemeError> {
    residual_with_mobility(spec, mesh, u_old, w_new, None, tau, mean)
}

/// Residual with the cell mobilities taken from `mobility_state` instead of
/// `u(w_new)`. Used to check the frozen-mobility Jacobian.
pub fn assemble_residual_frozen(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    w_new: &CellField,
    mobility_state: &StateField,
    tau: f64,
    mean: MobilityMean,
) -> Result<CellField, SchemeError> {
    residual_with_mobility(spec, mesh, u_old, w_new, Some(mobility_state), tau, mean)
}

fn residual_with_mobility(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    w_new: &CellField,
    mobility_state: Option<&StateField>,
    tau: f64,
    mean: MobilityMean,
) -> Result<CellField, SchemeError> {
    check_shape(spec, mesh, u_old.cells(), u_old.species())?;
    check_shape(spec, mesh, w_new.cells(), w_new.components())?;
    if w_new.values().iter().any(|x| !x.is_finite()) {
        return Err(ModelError::Domain("entropy variables not finite".into()).into());
    }
    let n = spec.species();
    let mut sys = StepSystem::new(n, mesh);
    sys.w.copy_from_slice(w_new.values());
    for k in 0..mesh.cells() {
        sys.u[k * n..(k + 1) * n].fill(0.5 / n as f64);
    }
    sys.update_primal(spec)?;
    sys.evaluate(spec, u_old.values(), tau, mean, JacobianMode::Frozen, mobility_state.map(|s| s.values()));
    Ok(CellField::from_values(n, sys.residual).expect("shape checked"))
}

/// Analytic Newton matrix `dR/dw` at `w`, expanded to a dense row-major matrix
/// of size `(N n) x (N n)`.
pub fn jacobian_dense(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    w: &CellField,
    tau: f64,
    mean: MobilityMean,
    mode: JacobianMode,
) -> Result<Vec<f64>, SchemeError> {
    check_shape(spec, mesh, w.cells(), w.components())?;
    let n = spec.species();
    let cells = mesh.cells();
    let mut sys = StepSystem::new(n, mesh);
    sys.w.copy_from_slice(w.values());
    for k in 0..cells {
        sys.u[k * n..(k + 1) * n].fill(0.5 / n as f64);
    }
    sys.update_primal(spec)?;
    sys.evaluate(spec, u_old.values(), tau, mean, mode, None);
    sys.assemble_jacobian(tau, mean, mode);
    let dim = n * cells;
    let nn = n * n;
    let mut dense = vec![0.0; dim * dim];
    for k in 0..cells {
        for i in 0..n {
            for j in 0..n {
                let row = k * n + i;
                dense[row * dim + k * n + j] = sys.matrix.diag[k * nn + i * n + j];
                if k > 0 {
                    dense[row * dim + (k - 1) * n + j] = sys.matrix.lower[(k - 1) * nn + i * n + j];
                }
                if k + 1 < cells {
                    dense[row * dim + (k + 1) * n + j] = sys.matrix.upper[k * nn + i * n + j];
                }
            }
        }
    }
    Ok(dense)
}

/// Result of one accepted implicit step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u_new: StateField,
    pub w_new: CellField,
    pub stats: SolveStats,
    /// Discrete entropy before and after the step.
    pub entropy_old: f64,
    pub entropy_new: f64,
    /// `tau sum_faces sum_i Fm (dw/dx)^2 dx` at the new state.
    pub dissipation: f64,
}

/// One implicit Euler step of size `tau` by damped Newton in `w`.
pub fn newton_solve(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    tau: f64,
    settings: &StepperSettings,
) -> Result<StepOutcome, SchemeError> {
    check_shape(spec, mesh, u_old.cells(), u_old.species())?;
    let mut sys = StepSystem::new(spec.species(), mesh);
    newton_solve_with(&mut sys, spec, mesh, u_old, tau, settings)
}

pub(crate) fn newton_solve_with(
    sys: &mut StepSystem,
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u_old: &StateField,
    tau: f64,
    settings: &StepperSettings,
) -> Result<StepOutcome, SchemeError> {
    let u_start = nudge_interior(u_old);
    let old = u_start.values();
    sys.load_primal(spec, old);
    let mean = settings.mobility_mean;
    let mode = settings.jacobian;
    let mut stats = SolveStats::default();
    let mut delta = vec![0.0; old.len()];
    let mut norm = sys.evaluate(spec, old, tau, mean, mode, None);
    let old_mass = species_sums(old, sys.n);
    loop {
        if stats.newton_iters > 0 && norm <= settings.newton_tol && mass_balanced(&sys.residual, &old_mass, sys.n) {
            break;
        }
        if stats.newton_iters >= settings.newton_max_iter || !norm.is_finite() {
            return Err(SchemeError::NonConvergence {
                iterations: stats.newton_iters,
                residual: norm,
            });
        }
        sys.assemble_jacobian(tau, mean, mode);
        for (d, r) in delta.iter_mut().zip(&sys.residual) {
            *d = -r;
        }
        sys.matrix.solve_in_place(&mut delta)?;
        stats.linear_solves += 1;
        let biggest = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if !biggest.is_finite() {
            return Err(SchemeError::NonConvergence {
                iterations: stats.newton_iters,
                residual: norm,
            });
        }
        let theta = if biggest > MAX_NEWTON_UPDATE { MAX_NEWTON_UPDATE / biggest } else { 1.0 };
        for (w, d) in sys.w.iter_mut().zip(&delta) {
            *w += theta * d;
        }
        sys.update_primal(spec)?;
        stats.newton_iters += 1;
        norm = sys.evaluate(spec, old, tau, mean, mode, None);
    }
    stats.final_residual_norm = norm;

    let n = spec.species();
    let u_new = StateField::from_trusted(CellField::from_values(n, sys.u.clone()).expect("shape"));
    let entropy_old = total_entropy(spec, mesh, &u_start);
    let entropy_new = total_entropy(spec, mesh, &u_new);
    if settings.entropy_guard && entropy_new > entropy_old + ENTROPY_GUARD_TOL {
        return Err(SchemeError::EntropyIncrease {
            increase: entropy_new - entropy_old,
        });
    }
    Ok(StepOutcome {
        w_new: CellField::from_values(n, sys.w.clone()).expect("shape"),
        u_new,
        stats,
        entropy_old,
        entropy_new,
        dissipation: sys.dissipation(tau),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{entropy_gradient, ChiFamily, QFamily, SimplexPoint};
    use approx::assert_abs_diff_eq;

    fn spec2(alpha: f64) -> ModelSpec {
        ModelSpec::new(vec![1.0, 0.5], QFamily::power(alpha), ChiFamily::Zero).unwrap()
    }

    fn cosine_state(mesh: &Mesh1D) -> StateField {
        let pi = std::f64::consts::PI;
        let vals = mesh
            .centers()
            .iter()
            .flat_map(|x| [0.3 + 0.2 * (pi * x).cos(), 0.3 - 0.1 * (pi * x).cos()])
            .collect();
        StateField::new(CellField::from_values(2, vals).unwrap()).unwrap()
    }

    fn w_of(spec: &ModelSpec, u: &StateField) -> CellField {
        let vals = (0..u.cells())
            .flat_map(|k| entropy_gradient(spec, &SimplexPoint::new(u.cell(k).to_vec()).unwrap()).unwrap().w)
            .collect();
        CellField::from_values(u.species(), vals).unwrap()
    }

    #[test]
    fn face_mobility_examples() {
        assert_eq!(face_mobility(MobilityMean::Arithmetic, 0.0, 0.2), 0.1);
        assert_eq!(face_mobility(MobilityMean::Geometric, 0.0, 0.2), 0.0);
        assert_eq!(face_mobility(MobilityMean::UpwindMax, 0.1, 0.2), 0.2);
        assert_eq!(face_mobility(MobilityMean::Arithmetic, 0.0, 0.0), 0.0);
        assert_eq!("upwind-max".parse::<MobilityMean>().unwrap(), MobilityMean::UpwindMax);
        assert!("median".parse::<MobilityMean>().is_err());
    }

    #[test]
    fn residual_vanishes_at_constant_state() {
        let spec = spec2(2.0);
        let mesh = Mesh1D::new(1.0, 5).unwrap();
        let u = StateField::uniform(5, &[0.3, 0.2]).unwrap();
        let w = w_of(&spec, &u);
        let r = assemble_residual(&spec, &mesh, &u, &w, 0.1, MobilityMean::Arithmetic).unwrap();
        assert!(r.max_abs() < 1e-14, "{}", r.max_abs());
    }

    #[test]
    fn residual_without_time_step_is_state_difference() {
        let spec = spec2(2.0);
        let mesh = Mesh1D::new(1.0, 6).unwrap();
        let u = cosine_state(&mesh);
        let target = StateField::uniform(6, &[0.25, 0.25]).unwrap();
        let w = w_of(&spec, &target);
        let r = assemble_residual(&spec, &mesh, &u, &w, 0.0, MobilityMean::Arithmetic).unwrap();
        for (rv, (t, o)) in r.values().iter().zip(target.values().iter().zip(u.values())) {
            assert_abs_diff_eq!(*rv, t - o, epsilon = 1e-13);
        }
    }

    #[test]
    fn two_cell_residual_by_hand() {
        // n = 1, q(s) = s: M = u (1 - u), w = log(u / (1 - u))
        let spec = ModelSpec::new(vec![1.0], QFamily::power(1.0), ChiFamily::Zero).unwrap();
        let mesh = Mesh1D::new(1.0, 2).unwrap();
        let u_old = StateField::new(CellField::from_values(1, vec![0.5, 0.5]).unwrap()).unwrap();
        let (a, b) = (0.2f64, 0.6f64);
        let w = CellField::from_values(1, vec![(a / (1.0 - a)).ln(), (b / (1.0 - b)).ln()]).unwrap();
        let tau = 0.01;
        let r = assemble_residual(&spec, &mesh, &u_old, &w, tau, MobilityMean::Arithmetic).unwrap();
        let fm = 0.5 * (a * (1.0 - a) + b * (1.0 - b));
        let flux = fm * (w.values()[1] - w.values()[0]) / 0.5;
        assert_abs_diff_eq!(r.values()[0], a - 0.5 - tau / 0.5 * flux, epsilon = 1e-12);
        assert_abs_diff_eq!(r.values()[1], b - 0.5 + tau / 0.5 * flux, epsilon = 1e-12);
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let spec = spec2(2.0);
        let mesh = Mesh1D::new(1.0, 10).unwrap();
        let u = StateField::uniform(10, &[0.3, 0.3]).unwrap();
        for tau in [1e-3, 1.0, 100.0] {
            let out = newton_solve(&spec, &mesh, &u, tau, &StepperSettings::default()).unwrap();
            assert_eq!(out.stats.newton_iters, 1);
            for (a, b) in out.u_new.values().iter().zip(u.values()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn step_conserves_mass_and_dissipates() {
        let mesh = Mesh1D::new(1.0, 40).unwrap();
        for mode in [JacobianMode::Frozen, JacobianMode::Exact] {
            for alpha in [1.0, 2.0, 4.0] {
                let spec = spec2(alpha);
                let u = cosine_state(&mesh);
                let settings = StepperSettings {
                    jacobian: mode,
                    ..Default::default()
                };
                let out = newton_solve(&spec, &mesh, &u, 0.01, &settings).unwrap();
                assert!(out.stats.final_residual_norm <= 1e-10);
                for (m0, m1) in u.masses(&mesh).iter().zip(out.u_new.masses(&mesh)) {
                    assert!((m0 - m1).abs() <= 1e-12 * m0, "{m0} {m1}");
                }
                assert!(out.entropy_new < out.entropy_old);
                assert!(out.entropy_new - out.entropy_old <= -out.dissipation + 1e-10);
                assert!(out.u_new.interior_margin() > 0.0);
            }
        }
    }

    #[test]
    fn exact_jacobian_converges_faster_on_large_steps() {
        let mesh = Mesh1D::new(1.0, 30).unwrap();
        let spec = spec2(2.0);
        let u = cosine_state(&mesh);
        let frozen = newton_solve(&spec, &mesh, &u, 0.05, &StepperSettings::default()).unwrap();
        let exact = newton_solve(
            &spec,
            &mesh,
            &u,
            0.05,
            &StepperSettings {
                jacobian: JacobianMode::Exact,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(exact.stats.newton_iters <= frozen.stats.newton_iters);
        for (a, b) in exact.u_new.values().iter().zip(frozen.u_new.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn nudge_keeps_mass_and_moves_inside() {
        let mesh = Mesh1D::new(1.0, 4).unwrap();
        let u = StateField::new(CellField::from_values(2, vec![0.0, 0.5, 0.2, 0.3, 0.4, 0.6, 0.1, 0.1]).unwrap()).unwrap();
        let v = nudge_interior(&u);
        assert!(v.interior_margin() >= NUDGE * 0.99);
        for (a, b) in u.masses(&mesh).iter().zip(v.masses(&mesh)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn boundary_initial_data_steps() {
        let mesh = Mesh1D::new(1.0, 8).unwrap();
        let spec = spec2(2.0);
        let vals = (0..8).flat_map(|k| if k < 4 { [0.6, 0.0] } else { [0.0, 0.4] }).collect();
        let u = StateField::new(CellField::from_values(2, vals).unwrap()).unwrap();
        let out = newton_solve(&spec, &mesh, &u, 1e-3, &StepperSettings::default()).unwrap();
        assert!(out.u_new.interior_margin() > 0.0);
        for (m0, m1) in u.masses(&mesh).iter().zip(out.u_new.masses(&mesh)) {
            assert!((m0 - m1).abs() <= 1e-12 * m0, "{m0} {m1} {:?}", out.stats);
        }
    }

    #[test]
    fn mirror_symmetry_is_preserved() {
        let mesh = Mesh1D::new(1.0, 20).unwrap();
        let spec = spec2(2.0);
        let vals = mesh
            .centers()
            .iter()
            .flat_map(|x| {
                let b = (-(x - 0.5) * (x - 0.5) * 20.0).exp();
                [0.1 + 0.5 * b, 0.3 - 0.2 * b]
            })
            .collect();
        let u = StateField::new(CellField::from_values(2, vals).unwrap()).unwrap();
        let out = newton_solve(&spec, &mesh, &u, 0.01, &StepperSettings::default()).unwrap();
        let m = out.u_new.mirrored();
        for (a, b) in out.u_new.values().iter().zip(m.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn settings_validation() {
        assert!(StepperSettings::default().validate().is_ok());
        let bad = StepperSettings {
            tau_min: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
