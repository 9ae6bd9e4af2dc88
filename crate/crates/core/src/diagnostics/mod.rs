//! Lyapunov functionals along a trajectory: relative entropy split, the
//! auxiliary functionals `f1` and `f2`, entropy production, the key-lemma gap,
//! Sobolev-type ratios and the Csiszar-Kullback margin.

mod fit;

pub use fit::{decay_fit, default_window, linear_fit, DecayVerdict, FitError, FitResult, LinearFit, MIN_FIT_SAMPLES, RESOLUTION, VERDICT_R2};

use std::io::{self, Write};

use crate::mesh::{sqrt_grad_energy_unchecked, Mesh1D, StateField};
use crate::model::{
    boltzmann_relative, entropy_density_raw, entropy_gradient, entropy_kernel, relative_entropy_parts_raw, xlogx, ModelError,
    ModelSpec, SimplexPoint,
};

/// Denominators below this are reported as a flagged (infinite) ratio.
pub const RATIO_DENOMINATOR_FLOOR: f64 = 1e-30;

/// Cell averages `qbar = <q(u0)>` and `qbar_i = <q(u0) u_i>`.
pub fn qbar_and_qbar_i(spec: &ModelSpec, u: &StateField) -> (f64, Vec<f64>) {
    let n = u.species();
    let cells = u.cells() as f64;
    let mut qbar = 0.0;
    let mut qbar_i = vec![0.0; n];
    for k in 0..u.cells() {
        let q = spec.q_family().q(u.u0(k).max(0.0));
        qbar += q;
        for (acc, x) in qbar_i.iter_mut().zip(u.cell(k)) {
            *acc += q * x;
        }
    }
    qbar /= cells;
    for v in &mut qbar_i {
        *v /= cells;
    }
    (qbar, qbar_i)
}

/// `f1 = sum_i (q u_i log(q u_i / qbar_i) - q u_i + qbar_i)` per cell and integrated.
pub fn f1_total(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField, qbar_i: &[f64]) -> (f64, Vec<f64>) {
    let cells: Vec<f64> = (0..u.cells())
        .map(|k| {
            let q = spec.q_family().q(u.u0(k).max(0.0));
            u.cell(k)
                .iter()
                .zip(qbar_i)
                .map(|(&x, &qb)| {
                    let v = q * x;
                    if qb > 0.0 {
                        // qbar_i (z log z - z + 1) with z = v / qbar_i
                        qb * entropy_kernel(v / qb)
                    } else {
                        xlogx(v) - v
                    }
                })
                .sum()
        })
        .collect();
    (cells.iter().sum::<f64>() * mesh.dx(), cells)
}

/// `f2 = int_{qbar}^{q(u0)} log(q(s) / q(qbar)) ds` per cell and integrated.
pub fn f2_total(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField, qbar: f64) -> (f64, Vec<f64>) {
    let q = spec.q_family();
    let cells: Vec<f64> = (0..u.cells()).map(|k| q.log_q_bregman(qbar, q.q(u.u0(k).max(0.0)))).collect();
    (cells.iter().sum::<f64>() * mesh.dx(), cells)
}

/// `(EP_u, EP_q)`: `int q(u0) sum_i |grad sqrt u_i|^2` with arithmetic face
/// means of `q(u0)`, and `int |grad sqrt q(u0)|^2`.
pub fn entropy_production(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField) -> (f64, f64) {
    let dx = mesh.dx();
    let qv: Vec<f64> = (0..u.cells()).map(|k| spec.q_family().q(u.u0(k).max(0.0))).collect();
    let mut ep_u = 0.0;
    for k in 0..mesh.faces() {
        let qf = 0.5 * (qv[k] + qv[k + 1]);
        let mut s = 0.0;
        for (a, b) in u.cell(k).iter().zip(u.cell(k + 1)) {
            let g = (b.max(0.0).sqrt() - a.max(0.0).sqrt()) / dx;
            s += g * g;
        }
        ep_u += qf * s;
    }
    (ep_u * dx, sqrt_grad_energy_unchecked(&qv, dx))
}

/// Pointwise Boltzmann part `h1*` of the relative entropy.
fn h1_cells(u: &StateField, uinf: &SimplexPoint) -> Vec<f64> {
    (0..u.cells()).map(|k| boltzmann_relative(u.cell(k), uinf.as_slice())).collect()
}

/// `sup_k |f1_k / qbar - h1*_k|`.
pub fn key_gap(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField, uinf: &SimplexPoint, qbar: f64) -> f64 {
    let (_, qbar_i) = qbar_and_qbar_i(spec, u);
    let (_, f1) = f1_total(spec, mesh, u, &qbar_i);
    key_gap_from_cells(&f1, &h1_cells(u, uinf), qbar)
}

fn key_gap_from_cells(f1: &[f64], h1: &[f64], qbar: f64) -> f64 {
    f1.iter().zip(h1).map(|(f, h)| (f / qbar - h).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityMonitors {
    /// `int v log(v / vbar) / (4 int |grad sqrt v|^2)` for `v = q(u0) u_i`; `None` when flagged.
    pub lsi_ratio: Vec<Option<f64>>,
    /// `int f2 / int |grad sqrt q(u0)|^2`; `None` when flagged.
    pub csi_ratio_f2: Option<f64>,
    /// `min_k (h1*_k - |u_k - uinf|^2 / 2)`.
    pub ckp_margin: f64,
}

impl InequalityMonitors {
    pub fn lsi_ratio_max(&self) -> Option<f64> {
        self.lsi_ratio.iter().flatten().copied().reduce(f64::max)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den >= RATIO_DENOMINATOR_FLOOR).then(|| num / den)
}

pub fn inequality_monitors(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField, uinf: &SimplexPoint) -> InequalityMonitors {
    let (qbar, qbar_i) = qbar_and_qbar_i(spec, u);
    let (f2_int, _) = f2_total(spec, mesh, u, qbar);
    let (_, ep_q) = entropy_production(spec, mesh, u);
    let h1 = h1_cells(u, uinf);
    monitors_from_parts(spec, mesh, u, uinf, &qbar_i, f2_int, ep_q, &h1)
}

#[allow(clippy::too_many_arguments)]
fn monitors_from_parts(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u: &StateField,
    uinf: &SimplexPoint,
    qbar_i: &[f64],
    f2_int: f64,
    ep_q: f64,
    h1: &[f64],
) -> InequalityMonitors {
    let dx = mesh.dx();
    let n = u.species();
    let q: Vec<f64> = (0..u.cells()).map(|k| spec.q_family().q(u.u0(k).max(0.0))).collect();
    let lsi_ratio = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..u.cells()).map(|k| q[k] * u.cell(k)[i]).collect();
            let vbar = qbar_i[i];
            // int v log(v / vbar) = int vbar (z log z - z + 1) since int v = int vbar
            let num: f64 = if vbar > 0.0 {
                v.iter().map(|&x| vbar * entropy_kernel(x / vbar)).sum::<f64>() * dx
            } else {
                0.0
            };
            ratio(num, 4.0 * sqrt_grad_energy_unchecked(&v, dx))
        })
        .collect();
    let ckp_margin = (0..u.cells())
        .map(|k| {
            let quad: f64 = u.cell(k).iter().zip(uinf.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            h1[k] - 0.5 * quad
        })
        .fold(f64::INFINITY, f64::min);
    InequalityMonitors {
        lsi_ratio,
        csi_ratio_f2: ratio(f2_int, ep_q),
        ckp_margin,
    }
}

/// Integrated parts of the relative entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeEntropyIntegrals {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl RelativeEntropyIntegrals {
    pub fn total(&self) -> f64 {
        self.h1 + self.h2 + self.h3
    }
}

pub fn relative_entropy_integrals(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField, uinf: &SimplexPoint) -> RelativeEntropyIntegrals {
    let mut acc = RelativeEntropyIntegrals::default();
    for k in 0..u.cells() {
        let p = relative_entropy_parts_raw(spec, u.cell(k), uinf.as_slice());
        acc.h1 += p.h1;
        acc.h2 += p.h2;
        acc.h3 += p.h3;
    }
    let dx = mesh.dx();
    RelativeEntropyIntegrals {
        h1: acc.h1 * dx,
        h2: acc.h2 * dx,
        h3: acc.h3 * dx,
    }
}

/// Discrete entropy `int h(u)`.
pub fn total_entropy(spec: &ModelSpec, mesh: &Mesh1D, u: &StateField) -> f64 {
    (0..u.cells()).map(|k| entropy_density_raw(spec, u.cell(k))).sum::<f64>() * mesh.dx()
}

/// Comparison of the split relative entropy with the direct Bregman distance
/// `int h(u) - h(uinf) - h'(uinf).(u - uinf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BregmanConsistency {
    pub by_parts: f64,
    pub direct: f64,
    /// Magnitude of the cancelling terms of the direct evaluation.
    pub scale: f64,
}

impl BregmanConsistency {
    /// `|by_parts - direct| / max(|by_parts|, scale)`.
    pub fn relative_deviation(&self) -> f64 {
        let denom = self.by_parts.abs().max(self.scale);
        if denom == 0.0 {
            0.0
        } else {
            (self.by_parts - self.direct).abs() / denom
        }
    }
}

pub fn bregman_consistency(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u: &StateField,
    uinf: &SimplexPoint,
) -> Result<BregmanConsistency, ModelError> {
    let by_parts = relative_entropy_integrals(spec, mesh, u, uinf).total();
    let w_inf = entropy_gradient(spec, uinf)?.w;
    let h_inf = entropy_density_raw(spec, uinf.as_slice());
    let dx = mesh.dx();
    let mut direct = 0.0;
    let mut scale = 0.0;
    for k in 0..u.cells() {
        let hu = entropy_density_raw(spec, u.cell(k));
        let lin: f64 = w_inf.iter().zip(u.cell(k).iter().zip(uinf.as_slice())).map(|(w, (a, b))| w * (a - b)).sum();
        direct += hu - h_inf - lin;
        scale += hu.abs() + h_inf.abs() + lin.abs();
    }
    Ok(BregmanConsistency {
        by_parts,
        direct: direct * dx,
        scale: scale * dx,
    })
}

/// One time-stamped row of all monitored functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: Vec<f64>,
    pub entropy: f64,
    pub hstar: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub ep_u: f64,
    pub ep_q: f64,
    pub f1_int: f64,
    pub f2_int: f64,
    pub qbar: f64,
    pub qbar_i: Vec<f64>,
    pub keygap_sup: f64,
    pub lsi_ratio: Vec<Option<f64>>,
    pub csi_ratio_f2: Option<f64>,
    pub ckp_margin: f64,
    pub sup_dev: f64,
    /// Running minimum of `(H*(s) - H*(t)) / int_s^t (EP_u + EP_q)` over record windows.
    pub c0_hat: Option<f64>,
    pub tau: f64,
    pub newton_iters: usize,
}

impl DiagnosticsRecord {
    pub fn lsi_ratio_max(&self) -> Option<f64> {
        self.lsi_ratio.iter().flatten().copied().reduce(f64::max)
    }
}

/// What [`record`] needs from the preceding part of the run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordHistory {
    pub prev_hstar: Option<f64>,
    pub c0_hat: Option<f64>,
    /// `int (EP_u + EP_q) dt` since the previous record.
    pub production_integral: f64,
    pub tau: f64,
    pub newton_iters: usize,
    /// Windows starting below this relative entropy are round-off and do not
    /// enter `c0_hat`.
    pub resolution_floor: f64,
}

pub fn record(
    spec: &ModelSpec,
    mesh: &Mesh1D,
    u: &StateField,
    uinf: &SimplexPoint,
    t: f64,
    history: &RecordHistory,
) -> DiagnosticsRecord {
    let rel = relative_entropy_integrals(spec, mesh, u, uinf);
    let hstar = rel.total();
    let (ep_u, ep_q) = entropy_production(spec, mesh, u);
    let (qbar, qbar_i) = qbar_and_qbar_i(spec, u);
    let (f1_int, f1_cells) = f1_total(spec, mesh, u, &qbar_i);
    let (f2_int, _) = f2_total(spec, mesh, u, qbar);
    let h1 = h1_cells(u, uinf);
    let keygap_sup = key_gap_from_cells(&f1_cells, &h1, qbar);
    let monitors = monitors_from_parts(spec, mesh, u, uinf, &qbar_i, f2_int, ep_q, &h1);
    let sup_dev = (0..u.cells())
        .flat_map(|k| u.cell(k).iter().zip(uinf.as_slice()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);

    let mut c0_hat = history.c0_hat;
    if let Some(prev) = history.prev_hstar {
        if prev > history.resolution_floor && history.production_integral > RATIO_DENOMINATOR_FLOOR {
            let window = (prev - hstar) / history.production_integral;
            c0_hat = Some(c0_hat.map_or(window, |c| c.min(window)));
        }
    }

    DiagnosticsRecord {
        t,
        mass: u.masses(mesh),
        entropy: total_entropy(spec, mesh, u),
        hstar,
        h1: rel.h1,
        h2: rel.h2,
        h3: rel.h3,
        ep_u,
        ep_q,
        f1_int,
        f2_int,
        qbar,
        qbar_i,
        keygap_sup,
        lsi_ratio: monitors.lsi_ratio,
        csi_ratio_f2: monitors.csi_ratio_f2,
        ckp_margin: monitors.ckp_margin,
        sup_dev,
        c0_hat,
        tau: history.tau,
        newton_iters: history.newton_iters,
    }
}

/// Header of `diagnostics.csv` for `n` species.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("mass_{i}")));
    cols.extend(
        [
            "H",
            "Hstar",
            "h1",
            "h2",
            "h3",
            "EP_u",
            "EP_q",
            "f1_int",
            "f2_int",
            "qbar",
            "keygap_sup",
            "lsi_ratio_max",
            "csi_ratio_f2",
            "ckp_margin",
            "sup_dev",
            "c0_hat",
            "tau",
            "newton_iters",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols.join(",")
}

fn full(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn flagged(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), full)
}

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let mut cols = vec![full(r.t)];
    cols.extend(r.mass.iter().map(|&m| full(m)));
    for v in [r.entropy, r.hstar, r.h1, r.h2, r.h3, r.ep_u, r.ep_q, r.f1_int, r.f2_int, r.qbar, r.keygap_sup] {
        cols.push(full(v));
    }
    cols.push(flagged(r.lsi_ratio_max()));
    cols.push(flagged(r.csi_ratio_f2));
    cols.push(full(r.ckp_margin));
    cols.push(full(r.sup_dev));
    cols.push(flagged(r.c0_hat));
    cols.push(full(r.tau));
    cols.push(r.newton_iters.to_string());
    cols.join(",")
}

pub fn write_csv<W: Write>(records: &[DiagnosticsRecord], n: usize, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", csv_header(n))?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

/// Reads the `(t, Hstar)` columns of a diagnostics CSV.
pub fn read_hstar_series(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty diagnostics file")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let t_col = cols.iter().position(|c| *c == "t").ok_or("missing column t")?;
    let h_col = cols.iter().position(|c| *c == "Hstar").ok_or("missing column Hstar")?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |c: usize| -> Result<f64, String> {
            fields
                .get(c)
                .ok_or_else(|| format!("line {}: missing column", i + 2))?
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", i + 2))
        };
        out.push((parse(t_col)?, parse(h_col)?));
    }
    Ok(out)
}
