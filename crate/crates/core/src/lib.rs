//! Finite-volume solver and Lyapunov diagnostics for volume-filling
//! cross-diffusion systems
//!
//! `d_t u_i = div(D_i u_i p_i(u) q(u_0) grad w_i)`, `u_0 = 1 - sum u_i`,
//! with no-flux boundaries on a 1D interval.

pub mod diagnostics;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod scenario;
pub mod scheme;

pub use mesh::{CellField, Mesh1D, StateField};
pub use model::{ModelSpec, QFamily, SimplexPoint};
pub use scenario::{load_scenario, parse_scenario, Scenario};
pub use scheme::{run_simulation, StepperSettings, Trajectory};
