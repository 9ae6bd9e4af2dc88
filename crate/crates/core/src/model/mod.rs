//! The continuous model: diffusion matrix, mobilities, entropy density and its
//! gradient, the inverse entropy map, the constant steady state and the
//! relative-entropy split.

mod chi;
mod hypotheses;
mod q;

pub use chi::{ChiFamily, ScalarPotential};
pub use hypotheses::{hypothesis_report, HypothesisReport, Witness};
pub use q::{entropy_kernel, q_eval, xlogx, CustomQ, QFamily, QValues};

use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::mesh::StateField;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("invalid q: {0}")]
    InvalidQ(String),
    #[error("point not in the open simplex: {0}")]
    NotInterior(String),
    #[error("entropy inversion did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
}

/// Species count, diffusivities and the `q` / `chi` families.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    diffusivities: Vec<f64>,
    q: QFamily,
    chi: ChiFamily,
}

impl ModelSpec {
    pub fn new(diffusivities: Vec<f64>, q: QFamily, chi: ChiFamily) -> Result<Self, ModelError> {
        if diffusivities.is_empty() {
            return Err(ModelError::InvalidSpec("at least one species is required".into()));
        }
        if let Some(bad) = diffusivities.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(ModelError::InvalidSpec(format!("diffusivity {bad} is not positive")));
        }
        if let Some(m) = chi.species_len() {
            if m != diffusivities.len() {
                return Err(ModelError::InvalidSpec(format!(
                    "chi has {m} components for {} species",
                    diffusivities.len()
                )));
            }
        }
        if let QFamily::Power { alpha } = q {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(ModelError::InvalidQ(format!("power exponent {alpha} must be positive")));
            }
        }
        Ok(Self {
            diffusivities,
            q,
            chi,
        })
    }

    pub fn species(&self) -> usize {
        self.diffusivities.len()
    }

    pub fn diffusivities(&self) -> &[f64] {
        &self.diffusivities
    }

    pub fn q_family(&self) -> &QFamily {
        &self.q
    }

    pub fn chi_family(&self) -> &ChiFamily {
        &self.chi
    }

    /// Pointwise data at `u`: `u0`, `q`, `q'`, `grad chi` and the Hessian
    /// diagonal of `chi`.
    #[inline]
    pub(crate) fn local(&self, u: &[f64], out: &mut Local) {
        let u0 = 1.0 - u.iter().sum::<f64>();
        let qv = self.q.values(u0);
        out.u0 = u0;
        out.q = qv.q;
        out.dq = qv.dq;
        self.chi.gradient_and_curvature(u, &mut out.grad_chi, &mut out.curv_chi);
    }

    /// Writes the inverse entropy Hessian `du/dw` at `u` into `out` (row-major).
    ///
    /// The Hessian is `diag(1/u_i + chi_ii) + (q'/q) 1 1^T`, inverted by
    /// Sherman-Morrison.
    pub(crate) fn inverse_hessian(&self, u: &[f64], local: &Local, scratch: &mut [f64], out: &mut [f64]) {
        let n = u.len();
        let d = &mut scratch[..n];
        for i in 0..n {
            d[i] = u[i] / (1.0 + u[i] * local.curv_chi[i]);
        }
        let r = local.dq / local.q;
        let sum_d: f64 = d.iter().sum();
        let s = if r > 0.0 { 1.0 / (1.0 / r + sum_d) } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { d[i] } else { 0.0 };
                out[i * n + j] = diag - s * d[i] * d[j];
            }
        }
    }
}

/// Per-point scratch filled by [`ModelSpec::local`].
#[derive(Debug, Clone)]
pub(crate) struct Local {
    pub u0: f64,
    pub q: f64,
    pub dq: f64,
    pub grad_chi: Vec<f64>,
    pub curv_chi: Vec<f64>,
}

impl Local {
    pub fn new(n: usize) -> Self {
        Self {
            u0: 0.0,
            q: 0.0,
            dq: 0.0,
            grad_chi: vec![0.0; n],
            curv_chi: vec![0.0; n],
        }
    }
}

/// A point of the closed simplex `{u_i >= 0, sum u_i <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    u: Vec<f64>,
}

const SIMPLEX_SLACK: f64 = 1e-12;

impl SimplexPoint {
    pub fn new(u: Vec<f64>) -> Result<Self, ModelError> {
        if u.is_empty() {
            return Err(ModelError::Domain("empty state vector".into()));
        }
        if u.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(ModelError::Domain(format!("volume fractions {u:?} outside [0, 1]")));
        }
        let total: f64 = u.iter().sum();
        if total > 1.0 + SIMPLEX_SLACK {
            return Err(ModelError::Domain(format!("volume fractions sum to {total} > 1")));
        }
        Ok(Self { u })
    }

    /// Like [`SimplexPoint::new`] but requires the open simplex.
    pub fn interior(u: Vec<f64>) -> Result<Self, ModelError> {
        let p = Self::new(u)?;
        if !p.is_interior() {
            return Err(ModelError::NotInterior(format!("{:?}", p.u)));
        }
        Ok(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.u
    }

    /// Solvent fraction `1 - sum u_i`, clamped at zero.
    pub fn u0(&self) -> f64 {
        (1.0 - self.u.iter().sum::<f64>()).max(0.0)
    }

    pub fn is_interior(&self) -> bool {
        self.u.iter().all(|&x| x > 0.0) && 1.0 - self.u.iter().sum::<f64>() > 0.0
    }
}

/// Entropy variables `w_i = log(u_i p_i(u) / q(u0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCoordinates {
    pub w: Vec<f64>,
}

/// `chi`, its gradient and `p_i = exp(d chi / d u_i)` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiValues {
    pub chi: f64,
    pub grad_chi: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn p_eval(spec: &ModelSpec, u: &SimplexPoint) -> ChiValues {
    let n = spec.species();
    let mut grad = vec![0.0; n];
    let mut curv = vec![0.0; n];
    spec.chi.gradient_and_curvature(u.as_slice(), &mut grad, &mut curv);
    ChiValues {
        chi: spec.chi.value(u.as_slice()),
        p: grad.iter().map(|g| g.exp()).collect(),
        grad_chi: grad,
    }
}

/// `A_ij = D_i p_i q(u0) delta_ij + D_i u_i p_i q'(u0) + D_i u_i q(u0) dp_i/du_j`.
pub fn diffusion_matrix(spec: &ModelSpec, u: &SimplexPoint) -> DenseMatrix {
    let n = spec.species();
    let x = u.as_slice();
    let mut local = Local::new(n);
    spec.local(x, &mut local);
    let mut a = DenseMatrix::zeros(n);
    for i in 0..n {
        let d = spec.diffusivities[i];
        let p = local.grad_chi[i].exp();
        for j in 0..n {
            // dp_i/du_j = p_i chi_ij, and chi has a diagonal Hessian
            let dp = if i == j { p * local.curv_chi[i] } else { 0.0 };
            let diag = if i == j { d * p * local.q } else { 0.0 };
            a[(i, j)] = diag + d * x[i] * p * local.dq + d * x[i] * local.q * dp;
        }
    }
    a
}

/// Cell mobilities `M_i = D_i u_i p_i(u) q(u0)`.
pub fn mobility(spec: &ModelSpec, u: &SimplexPoint) -> Vec<f64> {
    let n = spec.species();
    let x = u.as_slice();
    let mut local = Local::new(n);
    spec.local(x, &mut local);
    (0..n)
        .map(|i| spec.diffusivities[i] * x[i] * local.grad_chi[i].exp() * local.q)
        .collect()
}

/// `h(u) = sum_i (u_i (log u_i - 1) + 1) + int_1^{u0} log q + chi(u)`.
pub fn entropy_density(spec: &ModelSpec, u: &SimplexPoint) -> f64 {
    entropy_density_raw(spec, u.as_slice())
}

pub(crate) fn entropy_density_raw(spec: &ModelSpec, u: &[f64]) -> f64 {
    let u0 = (1.0 - u.iter().sum::<f64>()).max(0.0);
    let boltzmann: f64 = u.iter().map(|&x| xlogx(x) - x + 1.0).sum();
    boltzmann + spec.q.integral_log_q_from_one(u0) + spec.chi.value(u)
}

pub fn entropy_gradient(spec: &ModelSpec, u: &SimplexPoint) -> Result<EntropyCoordinates, ModelError> {
    if !u.is_interior() {
        return Err(ModelError::NotInterior(format!(
            "entropy variables diverge at {:?}",
            u.as_slice()
        )));
    }
    let n = spec.species();
    let mut w = vec![0.0; n];
    let mut local = Local::new(n);
    entropy_gradient_raw(spec, u.as_slice(), &mut local, &mut w);
    Ok(EntropyCoordinates { w })
}

#[inline]
pub(crate) fn entropy_gradient_raw(spec: &ModelSpec, u: &[f64], local: &mut Local, w: &mut [f64]) {
    spec.local(u, local);
    let log_q = local.q.ln();
    for i in 0..u.len() {
        w[i] = u[i].ln() + local.grad_chi[i] - log_q;
    }
}

/// Default tolerance of the inverse entropy map.
pub const INVERSION_TOL: f64 = 1e-13;
const INVERSION_MAX_ITER: usize = 200;
const FRACTION_TO_BOUNDARY: f64 = 0.99;

/// Inverts `w = h'(u)` by damped Newton from the barycenter `u_i = 1/(2n)`.
pub fn primal_from_entropy(
    spec: &ModelSpec,
    w: &EntropyCoordinates,
    tol: f64,
) -> Result<SimplexPoint, ModelError> {
    let n = spec.species();
    if w.w.len() != n || w.w.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::Domain(format!("entropy variables {:?} not finite", w.w)));
    }
    let mut u = vec![0.5 / n as f64; n];
    let mut ws = InversionWorkspace::new(n);
    ws.invert(spec, &w.w, &mut u, tol)?;
    Ok(SimplexPoint { u })
}

/// Reusable buffers for the inverse entropy map.
#[derive(Debug, Clone)]
pub(crate) struct InversionWorkspace {
    local: Local,
    f: Vec<f64>,
    d: Vec<f64>,
    step: Vec<f64>,
}

impl InversionWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            local: Local::new(n),
            f: vec![0.0; n],
            d: vec![0.0; n],
            step: vec![0.0; n],
        }
    }

    /// Newton iteration for `h'(u) = w` starting from the interior point in `u`.
    /// Returns the number of iterations.
    pub fn invert(&mut self, spec: &ModelSpec, w: &[f64], u: &mut [f64], tol: f64) -> Result<usize, ModelError> {
        let n = u.len();
        let mut residual = f64::INFINITY;
        for iter in 0..INVERSION_MAX_ITER {
            entropy_gradient_raw(spec, u, &mut self.local, &mut self.f);
            residual = 0.0;
            for i in 0..n {
                self.f[i] -= w[i];
                residual = residual.max(self.f[i].abs());
            }
            // u0 = 1 - sum u is resolved only to absolute round-off, which
            // puts a floor of about eps q'/q under the attainable residual
            let w_scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let floor = 8.0 * f64::EPSILON * (self.local.dq / self.local.q + w_scale);
            let converged = residual <= tol.max(floor);
            // Sherman-Morrison solve of H step = -F
            for i in 0..n {
                self.d[i] = u[i] / (1.0 + u[i] * self.local.curv_chi[i]);
            }
            let r = self.local.dq / self.local.q;
            let sum_d: f64 = self.d.iter().sum();
            let s = if r > 0.0 { 1.0 / (1.0 / r + sum_d) } else { 0.0 };
            let dtf: f64 = self.d.iter().zip(&self.f).map(|(d, f)| d * f).sum();
            for i in 0..n {
                self.step[i] = -(self.d[i] * self.f[i] - s * self.d[i] * dtf);
            }
            let mut theta: f64 = 1.0;
            for i in 0..n {
                if self.step[i] < 0.0 {
                    theta = theta.min(-FRACTION_TO_BOUNDARY * u[i] / self.step[i]);
                }
            }
            let d0: f64 = -self.step.iter().sum::<f64>();
            if d0 < 0.0 {
                theta = theta.min(-FRACTION_TO_BOUNDARY * self.local.u0 / d0);
            }
            for i in 0..n {
                u[i] += theta * self.step[i];
            }
            if converged {
                // the extra step polishes to round-off
                return Ok(iter + 1);
            }
        }
        Err(ModelError::NonConvergence {
            iterations: INVERSION_MAX_ITER,
            residual,
            last: u.to_vec(),
        })
    }
}

/// Constant steady state: the cell average of the initial data.
pub fn steady_state(initial: &StateField) -> SimplexPoint {
    let n = initial.species();
    let cells = initial.cells();
    let mut avg = vec![0.0; n];
    for k in 0..cells {
        for (i, a) in avg.iter_mut().enumerate() {
            *a += initial.cell(k)[i];
        }
    }
    for a in &mut avg {
        *a /= cells as f64;
    }
    SimplexPoint { u: avg }
}

/// Boltzmann, `q` and `chi` parts of the relative entropy density.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeEntropyParts {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl RelativeEntropyParts {
    pub fn total(&self) -> f64 {
        self.h1 + self.h2 + self.h3
    }
}

pub fn relative_entropy_parts(spec: &ModelSpec, u: &SimplexPoint, uinf: &SimplexPoint) -> RelativeEntropyParts {
    relative_entropy_parts_raw(spec, u.as_slice(), uinf.as_slice())
}

pub(crate) fn relative_entropy_parts_raw(spec: &ModelSpec, u: &[f64], uinf: &[f64]) -> RelativeEntropyParts {
    let u0 = (1.0 - u.iter().sum::<f64>()).max(0.0);
    let u0_inf = (1.0 - uinf.iter().sum::<f64>()).max(0.0);
    RelativeEntropyParts {
        h1: boltzmann_relative(u, uinf),
        h2: spec.q.log_q_bregman(u0_inf, u0),
        h3: chi_relative(&spec.chi, u, uinf),
    }
}

/// `sum_i (u_i log(u_i / a_i) - u_i + a_i)`.
#[inline]
pub(crate) fn boltzmann_relative(u: &[f64], uinf: &[f64]) -> f64 {
    u.iter()
        .zip(uinf)
        .map(|(&x, &a)| if a > 0.0 { a * entropy_kernel(x / a) } else { xlogx(x) - x })
        .sum()
}

fn chi_relative(chi: &ChiFamily, u: &[f64], uinf: &[f64]) -> f64 {
    match chi {
        // affine in u: the Bregman distance vanishes identically
        ChiFamily::Zero | ChiFamily::LinearShift { .. } => 0.0,
        ChiFamily::Separable { potentials } => potentials
            .iter()
            .zip(u.iter().zip(uinf))
            .map(|(p, (&x, &a))| match p {
                ScalarPotential::Affine { a: pa, b } => {
                    if *b == 0.0 {
                        0.0
                    } else {
                        let pa_at = pa + b * a;
                        pa_at / b * entropy_kernel((pa + b * x) / pa_at)
                    }
                }
                ScalarPotential::Custom { .. } => {
                    let (cx, _, _) = p.eval(x);
                    let (ca, da, _) = p.eval(a);
                    cx - ca - da * (x - a)
                }
            })
            .sum(),
    }
}

/// `h(u) - h(uinf) - h'(uinf) . (u - uinf)` evaluated directly from the
/// entropy density, together with the magnitude of the cancelling terms.
pub fn bregman_direct(spec: &ModelSpec, u: &SimplexPoint, uinf: &SimplexPoint) -> Result<(f64, f64), ModelError> {
    let w_inf = entropy_gradient(spec, uinf)?;
    let hu = entropy_density(spec, u);
    let hinf = entropy_density(spec, uinf);
    let lin: f64 = w_inf
        .w
        .iter()
        .zip(u.as_slice().iter().zip(uinf.as_slice()))
        .map(|(w, (x, a))| w * (x - a))
        .sum();
    Ok((hu - hinf - lin, hu.abs() + hinf.abs() + lin.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(d: Vec<f64>, alpha: f64, chi: ChiFamily) -> ModelSpec {
        ModelSpec::new(d, QFamily::power(alpha), chi).unwrap()
    }

    fn point(u: &[f64]) -> SimplexPoint {
        SimplexPoint::new(u.to_vec()).unwrap()
    }

    fn random_interior(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        // uniform on the simplex via normalised exponential spacings
        let e: Vec<f64> = (0..=n).map(|_| -rng.gen_range(1e-9f64..0.999).ln()).collect();
        let s: f64 = e.iter().sum();
        e[..n].iter().map(|x| x / s).collect()
    }

    #[test]
    fn rejects_bad_diffusivity_and_mismatched_chi() {
        assert!(ModelSpec::new(vec![1.0, 0.0], QFamily::power(1.0), ChiFamily::Zero).is_err());
        let chi = ChiFamily::LinearShift { c: vec![0.0] };
        assert!(ModelSpec::new(vec![1.0, 1.0], QFamily::power(1.0), chi).is_err());
    }

    #[test]
    fn p_eval_families() {
        let u = point(&[0.5, 0.2]);
        let zero = spec(vec![1.0, 1.0], 1.0, ChiFamily::Zero);
        let v = p_eval(&zero, &u);
        assert_eq!(v.chi, 0.0);
        assert_eq!(v.p, vec![1.0, 1.0]);

        let shift = spec(vec![1.0, 1.0], 1.0, ChiFamily::LinearShift { c: vec![2f64.ln(), 0.0] });
        let v = p_eval(&shift, &u);
        assert_abs_diff_eq!(v.p[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.p[1], 1.0, epsilon = 1e-15);

        let sep = spec(
            vec![1.0, 1.0],
            1.0,
            ChiFamily::Separable {
                potentials: vec![ScalarPotential::affine(1.0, 1.0), ScalarPotential::affine(1.0, 1.0)],
            },
        );
        let v = p_eval(&sep, &u);
        assert_abs_diff_eq!(v.p[0], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(v.p[1], 1.2, epsilon = 1e-14);
        // chi_i' matches a centred difference of chi_i
        let h = 1e-6;
        let chi_at = |s: f64| sep.chi_family().value(&[s, 0.2]);
        let fd = (chi_at(0.5 + h) - chi_at(0.5 - h)) / (2.0 * h);
        assert_abs_diff_eq!(fd, v.grad_chi[0], epsilon = 1e-9);
        assert_abs_diff_eq!(v.chi, chi_at(0.5), epsilon = 1e-15);
    }

    #[test]
    fn diffusion_matrix_linear_q() {
        let s = spec(vec![1.0, 1.0], 1.0, ChiFamily::Zero);
        let a = diffusion_matrix(&s, &point(&[0.3, 0.2]));
        let expect = [[0.8, 0.3], [0.2, 0.7]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(a[(i, j)], expect[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn diffusion_matrix_quadratic_q_single_species() {
        let s = spec(vec![1.0], 2.0, ChiFamily::Zero);
        let a = diffusion_matrix(&s, &point(&[0.5]));
        assert_abs_diff_eq!(a[(0, 0)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn mobility_examples() {
        let s = spec(vec![1.0, 1.0], 1.0, ChiFamily::Zero);
        let m = mobility(&s, &point(&[0.3, 0.2]));
        assert_abs_diff_eq!(m[0], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 0.10, epsilon = 1e-15);
        assert_eq!(mobility(&s, &point(&[0.6, 0.4])), vec![0.0, 0.0]);
        let s = spec(vec![2.0], 2.0, ChiFamily::Zero);
        assert_abs_diff_eq!(mobility(&s, &point(&[0.5]))[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn entropy_density_examples() {
        let s = spec(vec![1.0], 1.0, ChiFamily::Zero);
        assert_abs_diff_eq!(entropy_density(&s, &point(&[0.5])), 0.5f64.ln() + 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy_density(&s, &point(&[0.0])), 1.0, epsilon = 1e-15);
        for alpha in [1.0, 2.0, 3.5] {
            let s = spec(vec![1.0], alpha, ChiFamily::Zero);
            assert_abs_diff_eq!(entropy_density(&s, &point(&[1.0])), alpha, epsilon = 1e-14);
        }
    }

    #[test]
    fn entropy_gradient_examples() {
        let s = spec(vec![1.0], 1.0, ChiFamily::Zero);
        assert_abs_diff_eq!(entropy_gradient(&s, &point(&[0.5])).unwrap().w[0], 0.0, epsilon = 1e-15);
        let s2 = spec(vec![1.0, 1.0], 1.0, ChiFamily::Zero);
        let w = entropy_gradient(&s2, &point(&[0.25, 0.25])).unwrap().w;
        assert_abs_diff_eq!(w[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5f64.ln(), epsilon = 1e-15);
        let sq = spec(vec![1.0], 2.0, ChiFamily::Zero);
        let w = entropy_gradient(&sq, &point(&[0.5])).unwrap();
        assert_abs_diff_eq!(w.w[0], 2f64.ln(), epsilon = 1e-15);
        let back = primal_from_entropy(&sq, &w, INVERSION_TOL).unwrap();
        assert_abs_diff_eq!(back.as_slice()[0], 0.5, epsilon = 1e-14);
        assert!(matches!(
            entropy_gradient(&s, &point(&[1.0])),
            Err(ModelError::NotInterior(_))
        ));
    }

    #[test]
    fn primal_from_entropy_examples() {
        let s = spec(vec![1.0], 1.0, ChiFamily::Zero);
        let u = primal_from_entropy(&s, &EntropyCoordinates { w: vec![0.0] }, 1e-12).unwrap();
        assert_abs_diff_eq!(u.as_slice()[0], 0.5, epsilon = 1e-14);
        let s2 = spec(vec![1.0, 1.0], 1.0, ChiFamily::Zero);
        let w = EntropyCoordinates { w: vec![0.5f64.ln(); 2] };
        let u = primal_from_entropy(&s2, &w, 1e-12).unwrap();
        assert_abs_diff_eq!(u.as_slice()[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(u.as_slice()[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn primal_from_entropy_handles_extreme_variables() {
        let s = spec(vec![1.0, 0.5], 2.0, ChiFamily::Zero);
        for w in [[-40.0, 0.0], [30.0, 30.0], [25.0, -25.0]] {
            let w = EntropyCoordinates { w: w.to_vec() };
            let u = primal_from_entropy(&s, &w, 1e-12).unwrap();
            assert!(u.is_interior());
            let back = entropy_gradient(&s, &u).unwrap();
            // u0 ~ 1e-7 carries a relative rounding error of ~1e-9
            for i in 0..2 {
                assert_abs_diff_eq!(back.w[i], w.w[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn round_trip_over_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let specs = [
            spec(vec![1.0, 0.5], 2.0, ChiFamily::Zero),
            spec(vec![1.0, 2.0, 0.3], 1.5, ChiFamily::LinearShift { c: vec![0.2, -0.4, 1.0] }),
            spec(
                vec![1.0, 1.0],
                3.0,
                ChiFamily::Separable {
                    potentials: vec![ScalarPotential::affine(1.0, 1.0), ScalarPotential::affine(0.5, 2.0)],
                },
            ),
        ];
        for s in &specs {
            for _ in 0..1000 {
                let u = random_interior(&mut rng, s.species());
                let w = entropy_gradient(s, &point(&u)).unwrap();
                let back = primal_from_entropy(s, &w, 1e-12).unwrap();
                for (a, b) in back.as_slice().iter().zip(&u) {
                    assert!((a - b).abs() <= 1e-10 * b.max(1e-3), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = spec(
            vec![1.0, 0.5],
            2.0,
            ChiFamily::Separable {
                potentials: vec![ScalarPotential::affine(1.0, 1.0), ScalarPotential::affine(2.0, 0.5)],
            },
        );
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let u = random_interior(&mut rng, 2);
            if u.iter().any(|&x| x < 1e-3) || 1.0 - u.iter().sum::<f64>() < 1e-3 {
                continue;
            }
            let w = entropy_gradient(&s, &point(&u)).unwrap();
            for i in 0..2 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (entropy_density_raw(&s, &up) - entropy_density_raw(&s, &dn)) / (2.0 * h);
                assert_abs_diff_eq!(fd, w.w[i], epsilon = 1e-6);
            }
            checked += 1;
        }
    }

    #[test]
    fn relative_entropy_examples() {
        let s = spec(vec![1.0], 1.0, ChiFamily::Zero);
        let uinf = point(&[0.5]);
        let zero = relative_entropy_parts(&s, &uinf, &uinf);
        assert_eq!(zero, RelativeEntropyParts::default());
        let parts = relative_entropy_parts(&s, &point(&[0.25]), &uinf);
        // 0.25 log 0.5 + 0.25 and 0.75 log 1.5 - 0.25 by antiderivatives
        assert_abs_diff_eq!(parts.h1, 0.25 * 0.5f64.ln() + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(parts.h2, 0.75 * 1.5f64.ln() - 0.25, epsilon = 1e-15);
        assert_eq!(parts.h3, 0.0);
    }

    #[test]
    fn parts_sum_to_direct_bregman_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spec(
            vec![1.0, 0.5],
            2.0,
            ChiFamily::Separable {
                potentials: vec![ScalarPotential::affine(1.0, 1.0), ScalarPotential::affine(0.5, 2.0)],
            },
        );
        for _ in 0..500 {
            let u = point(&random_interior(&mut rng, 2));
            let uinf = point(&random_interior(&mut rng, 2));
            let parts = relative_entropy_parts(&s, &u, &uinf);
            let (direct, scale) = bregman_direct(&s, &u, &uinf).unwrap();
            assert!((parts.total() - direct).abs() <= 1e-12 * scale.max(1.0));
            assert!(parts.h1 >= -1e-14 && parts.h2 >= -1e-14 && parts.h3 >= -1e-14);
        }
    }

    #[test]
    fn h2_respects_integration_by_parts_bound() {
        // h2 <= -log q(u0_inf) + int_0^1 s q'/q ds = -alpha log u0_inf + alpha
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for alpha in [1.0, 2.0, 4.0] {
            let s = spec(vec![1.0], alpha, ChiFamily::Zero);
            for _ in 0..1000 {
                let a = rng.gen_range(0.01..0.99);
                let b = rng.gen_range(0.0..=1.0);
                let parts = relative_entropy_parts(&s, &point(&[1.0 - b]), &point(&[1.0 - a]));
                assert!(parts.h2 >= 0.0);
                assert!(parts.h2 <= -alpha * f64::ln(a) + alpha + 1e-12);
            }
        }
    }
}
