//! Uniform 1D cell-centred mesh on `(0, L)` with no-flux ends, the discrete
//! gradient / divergence pair and midpoint quadrature.

use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("negative value {value} in cell {cell}")]
    Negative { cell: usize, value: f64 },
    #[error("cell {cell} is outside the closed simplex: {detail}")]
    OutsideSimplex { cell: usize, detail: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    length: f64,
    cells: usize,
}

pub fn build_mesh(length: f64, cells: usize) -> Result<Mesh1D, MeshError> {
    Mesh1D::new(length, cells)
}

impl Mesh1D {
    pub fn new(length: f64, cells: usize) -> Result<Self, MeshError> {
        if !(length.is_finite() && length > 0.0) {
            return Err(MeshError::Invalid(format!("length {length} must be positive")));
        }
        if cells < 2 {
            return Err(MeshError::Invalid(format!("need at least 2 cells, got {cells}")));
        }
        Ok(Self { length, cells })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn faces(&self) -> usize {
        self.cells - 1
    }

    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|k| self.center(k)).collect()
    }

    /// Positions of the interior faces.
    pub fn face_positions(&self) -> Vec<f64> {
        (1..self.cells).map(|k| k as f64 * self.dx()).collect()
    }

    fn check_cells(&self, len: usize) -> Result<(), MeshError> {
        if len != self.cells {
            return Err(MeshError::SizeMismatch {
                expected: self.cells,
                got: len,
            });
        }
        Ok(())
    }

    /// Midpoint rule `sum_k f_k dx`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64, MeshError> {
        self.check_cells(f.len())?;
        Ok(f.iter().sum::<f64>() * self.dx())
    }

    /// `(f_{k+1} - f_k) / dx` on the interior faces.
    pub fn face_gradient(&self, f: &[f64]) -> Result<Vec<f64>, MeshError> {
        self.check_cells(f.len())?;
        let dx = self.dx();
        Ok(f.windows(2).map(|w| (w[1] - w[0]) / dx).collect())
    }

    /// `(F_{k+1/2} - F_{k-1/2}) / dx` with zero flux through both ends.
    pub fn divergence(&self, flux: &[f64]) -> Result<Vec<f64>, MeshError> {
        if flux.len() != self.faces() {
            return Err(MeshError::SizeMismatch {
                expected: self.faces(),
                got: flux.len(),
            });
        }
        let dx = self.dx();
        Ok((0..self.cells)
            .map(|k| {
                let right = if k + 1 < self.cells { flux[k] } else { 0.0 };
                let left = if k > 0 { flux[k - 1] } else { 0.0 };
                (right - left) / dx
            })
            .collect())
    }

    /// `sum_faces ((sqrt v_{k+1} - sqrt v_k) / dx)^2 dx`.
    pub fn sqrt_grad_energy(&self, v: &[f64]) -> Result<f64, MeshError> {
        self.check_cells(v.len())?;
        if let Some((cell, &value)) = v.iter().enumerate().find(|(_, x)| **x < 0.0) {
            return Err(MeshError::Negative { cell, value });
        }
        Ok(sqrt_grad_energy_unchecked(v, self.dx()))
    }
}

pub(crate) fn sqrt_grad_energy_unchecked(v: &[f64], dx: f64) -> f64 {
    v.windows(2)
        .map(|w| {
            let g = (w[1].max(0.0).sqrt() - w[0].max(0.0).sqrt()) / dx;
            g * g
        })
        .sum::<f64>()
        * dx
}

/// `cells x components` array of cell values, row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    components: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(cells: usize, components: usize) -> Self {
        Self {
            components,
            values: vec![0.0; cells * components],
        }
    }

    pub fn from_values(components: usize, values: Vec<f64>) -> Result<Self, MeshError> {
        if components == 0 || !values.len().is_multiple_of(components) {
            return Err(MeshError::Invalid(format!(
                "{} values do not form rows of {components}",
                values.len()
            )));
        }
        Ok(Self { components, values })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn cells(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.components..(k + 1) * self.components]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.components..(k + 1) * self.components]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// One component across all cells.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.components).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Volume fractions `u_1..u_n` per cell, each cell in the closed simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField(CellField);

impl StateField {
    pub fn new(field: CellField) -> Result<Self, MeshError> {
        for k in 0..field.cells() {
            let u = field.cell(k);
            if let Some(x) = u.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
                return Err(MeshError::OutsideSimplex {
                    cell: k,
                    detail: format!("component {x}"),
                });
            }
            let total: f64 = u.iter().sum();
            if total > 1.0 + 1e-12 {
                return Err(MeshError::OutsideSimplex {
                    cell: k,
                    detail: format!("sum {total} > 1"),
                });
            }
        }
        Ok(Self(field))
    }

    pub fn uniform(cells: usize, u: &[f64]) -> Result<Self, MeshError> {
        let values = (0..cells).flat_map(|_| u.iter().copied()).collect();
        Self::new(CellField::from_values(u.len(), values)?)
    }

    pub(crate) fn from_trusted(field: CellField) -> Self {
        Self(field)
    }

    pub fn species(&self) -> usize {
        self.0.components()
    }

    pub fn cells(&self) -> usize {
        self.0.cells()
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        self.0.cell(k)
    }

    pub fn u0(&self, k: usize) -> f64 {
        1.0 - self.cell(k).iter().sum::<f64>()
    }

    pub fn field(&self) -> &CellField {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.0.component(i)
    }

    pub fn solvent(&self) -> Vec<f64> {
        (0..self.cells()).map(|k| self.u0(k)).collect()
    }

    /// Per-species `sum_k u_{k,i} dx`.
    pub fn masses(&self, mesh: &Mesh1D) -> Vec<f64> {
        let dx = mesh.dx();
        (0..self.species())
            .map(|i| self.0.values.iter().skip(i).step_by(self.species()).sum::<f64>() * dx)
            .collect()
    }

    /// Smallest of all `u_{k,i}` and `u_{k,0}`; positive iff every cell is in the open simplex.
    pub fn interior_margin(&self) -> f64 {
        (0..self.cells()).fold(f64::INFINITY, |m, k| {
            let c = self.cell(k).iter().fold(f64::INFINITY, |a, &b| a.min(b));
            m.min(c).min(self.u0(k))
        })
    }

    /// Mirror image `x -> L - x`.
    pub fn mirrored(&self) -> Self {
        let n = self.species();
        let cells = self.cells();
        let mut values = Vec::with_capacity(n * cells);
        for k in (0..cells).rev() {
            values.extend_from_slice(self.cell(k));
        }
        Self(CellField { components: n, values })
    }

    /// Writes the snapshot CSV: header `x,u1,...,un,u0`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mesh: &Mesh1D, mut out: W) -> Result<(), MeshError> {
        let n = self.species();
        let mut header = String::from("x");
        for i in 1..=n {
            header.push_str(&format!(",u{i}"));
        }
        header.push_str(",u0");
        writeln!(out, "{header}")?;
        for k in 0..self.cells() {
            let mut line = format!("{:.16e}", mesh.center(k));
            for v in self.cell(k) {
                line.push_str(&format!(",{v:.16e}"));
            }
            line.push_str(&format!(",{:.16e}", self.u0(k)));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`StateField::write_csv`]; the `u0` column is ignored.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(Vec<f64>, Self), MeshError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| MeshError::Csv("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "x" || cols[cols.len() - 1] != "u0" {
            return Err(MeshError::Csv(format!("unexpected header {header:?}")));
        }
        let n = cols.len() - 2;
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let nums: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let nums = nums.map_err(|e| MeshError::Csv(format!("line {}: {e}", lineno + 2)))?;
            if nums.len() != n + 2 {
                return Err(MeshError::Csv(format!("line {}: expected {} columns", lineno + 2, n + 2)));
            }
            xs.push(nums[0]);
            values.extend_from_slice(&nums[1..=n]);
        }
        Ok((xs, Self::new(CellField::from_values(n, values)?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let m = build_mesh(1.0, 4).unwrap();
        assert_eq!(m.dx(), 0.25);
        assert_eq!(m.centers(), vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(build_mesh(2.0, 2).unwrap().dx(), 1.0);
        assert_abs_diff_eq!(build_mesh(1.0, 100).unwrap().dx(), 0.01, epsilon = 1e-18);
        assert!(build_mesh(1.0, 1).is_err());
        assert!(build_mesh(-1.0, 4).is_err());
    }

    #[test]
    fn integrate_examples() {
        let m = build_mesh(1.0, 10).unwrap();
        assert_abs_diff_eq!(m.integrate(&[1.0; 10]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(m.integrate(&[0.0; 10]).unwrap(), 0.0);
        let m = build_mesh(1.0, 1000).unwrap();
        assert_abs_diff_eq!(m.integrate(&m.centers()).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(m.integrate(&[1.0; 3]), Err(MeshError::SizeMismatch { .. })));
    }

    #[test]
    fn gradient_examples() {
        let m = build_mesh(1.0, 8).unwrap();
        assert!(m.face_gradient(&[3.0; 8]).unwrap().iter().all(|&g| g == 0.0));
        for g in m.face_gradient(&m.centers()).unwrap() {
            assert_abs_diff_eq!(g, 1.0, epsilon = 1e-13);
        }
        let m = build_mesh(1.0, 256).unwrap();
        let pi = std::f64::consts::PI;
        let f: Vec<f64> = m.centers().iter().map(|x| (pi * x).sin()).collect();
        let err = m
            .face_gradient(&f)
            .unwrap()
            .iter()
            .zip(m.face_positions())
            .map(|(g, x)| (g - pi * (pi * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn divergence_examples() {
        let m = build_mesh(1.0, 3).unwrap();
        let dx = m.dx();
        let d = m.divergence(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d[0], 1.0 / dx, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[2], -1.0 / dx, epsilon = 1e-12);
        assert!(m.divergence(&[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.divergence(&[0.0; 3]).is_err());
    }

    #[test]
    fn sqrt_energy_examples() {
        let m = build_mesh(1.0, 2).unwrap();
        assert_abs_diff_eq!(m.sqrt_grad_energy(&[0.0, 1.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(m.sqrt_grad_energy(&[0.4, 0.4]).unwrap(), 0.0);
        assert!(matches!(m.sqrt_grad_energy(&[-0.1, 0.4]), Err(MeshError::Negative { .. })));
        let m = build_mesh(1.0, 512).unwrap();
        let v: Vec<f64> = m.centers().iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(m.sqrt_grad_energy(&v).unwrap(), 1.0, epsilon = 2e-2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = build_mesh(1.0, 5).unwrap();
        let vals: Vec<f64> = (0..10).map(|k| 0.1 / (k as f64 + 1.0) + 1e-3 / 3.0).collect();
        let s = StateField::new(CellField::from_values(2, vals).unwrap()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,u1,u2,u0\n"));
        let (xs, back) = StateField::read_csv(&buf[..]).unwrap();
        assert_eq!(xs, m.centers());
        assert_eq!(back, s);
    }

    #[test]
    fn state_rejects_points_outside_simplex() {
        assert!(StateField::uniform(3, &[0.7, 0.5]).is_err());
        assert!(StateField::uniform(3, &[-0.1, 0.5]).is_err());
        assert!(StateField::uniform(3, &[0.5, 0.5]).is_ok());
    }

    proptest! {
        #[test]
        fn summation_by_parts(
            g in prop::collection::vec(-1.0f64..1.0, 12),
            flux in prop::collection::vec(-1.0f64..1.0, 11),
        ) {
            let m = build_mesh(1.7, 12).unwrap();
            let div = m.divergence(&flux).unwrap();
            let lhs: f64 = g.iter().zip(&div).map(|(a, b)| a * b).sum::<f64>() * m.dx();
            let grad = m.face_gradient(&g).unwrap();
            let rhs: f64 = -flux.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() * m.dx();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }

        #[test]
        fn conservative_diffusion_keeps_mass(
            f in prop::collection::vec(0.0f64..1.0, 16),
            coeff in prop::collection::vec(0.0f64..2.0, 15),
        ) {
            let m = build_mesh(1.0, 16).unwrap();
            let grad = m.face_gradient(&f).unwrap();
            let flux: Vec<f64> = grad.iter().zip(&coeff).map(|(g, c)| g * c).collect();
            let div = m.divergence(&flux).unwrap();
            let total = m.integrate(&div).unwrap();
            prop_assert!(total.abs() <= 1e-14 * (1.0 + flux.iter().fold(0.0f64, |a, b| a.max(b.abs()))));
        }
    }
}
