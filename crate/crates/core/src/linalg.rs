//! Small dense matrices and the block-tridiagonal solver used by the implicit step.

use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("singular pivot block at block row {block}")]
    Singular { block: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != n * n {
            return Err(LinalgError::Dimension(format!("{} entries for {n}x{n}", data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.data[i * self.n + j] * x[j]).sum())
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// In-place LU with partial pivoting of an `n x n` row-major block.
fn lu_factor(a: &mut [f64], piv: &mut [usize], n: usize) -> bool {
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].abs();
        for r in k + 1..n {
            let v = a[r * n + k].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return false;
        }
        piv[k] = p;
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
        }
        let pivot = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / pivot;
            a[r * n + k] = f;
            for c in k + 1..n {
                a[r * n + c] -= f * a[k * n + c];
            }
        }
    }
    true
}

/// Solves with a factor from [`lu_factor`], overwriting `x`.
fn lu_solve(lu: &[f64], piv: &[usize], n: usize, x: &mut [f64]) {
    for k in 0..n {
        if piv[k] != k {
            x.swap(k, piv[k]);
        }
    }
    for r in 1..n {
        let mut s = x[r];
        for c in 0..r {
            s -= lu[r * n + c] * x[c];
        }
        x[r] = s;
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= lu[r * n + c] * x[c];
        }
        x[r] = s / lu[r * n + r];
    }
}

/// Block-tridiagonal matrix with `blocks` block rows of size `n x n`.
///
/// Block row `k` holds `lower[k-1] x_{k-1} + diag[k] x_k + upper[k] x_{k+1}`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    n: usize,
    blocks: usize,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    piv: Vec<usize>,
    col: Vec<f64>,
}

impl BlockTridiagonal {
    pub fn new(n: usize, blocks: usize) -> Self {
        let nn = n * n;
        Self {
            n,
            blocks,
            lower: vec![0.0; nn * blocks.saturating_sub(1)],
            diag: vec![0.0; nn * blocks],
            upper: vec![0.0; nn * blocks.saturating_sub(1)],
            piv: vec![0; n * blocks],
            col: vec![0.0; n],
        }
    }

    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn clear(&mut self) {
        self.lower.fill(0.0);
        self.diag.fill(0.0);
        self.upper.fill(0.0);
    }

    pub fn diag_block_mut(&mut self, k: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        &mut self.diag[k * nn..(k + 1) * nn]
    }

    pub fn lower_block_mut(&mut self, k: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        &mut self.lower[(k - 1) * nn..k * nn]
    }

    pub fn upper_block_mut(&mut self, k: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        &mut self.upper[k * nn..(k + 1) * nn]
    }

    /// `y = A x` with the current (unfactored) blocks.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        y.fill(0.0);
        for k in 0..self.blocks {
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += self.diag[k * nn + i * n + j] * x[k * n + j];
                    if k > 0 {
                        s += self.lower[(k - 1) * nn + i * n + j] * x[(k - 1) * n + j];
                    }
                    if k + 1 < self.blocks {
                        s += self.upper[k * nn + i * n + j] * x[(k + 1) * n + j];
                    }
                }
                y[k * n + i] = s;
            }
        }
    }

    /// Block Thomas algorithm. Overwrites the blocks with the factorization and
    /// `rhs` with the solution.
    pub fn solve_in_place(&mut self, rhs: &mut [f64]) -> Result<(), LinalgError> {
        let n = self.n;
        let nn = n * n;
        if rhs.len() != n * self.blocks {
            return Err(LinalgError::Dimension(format!(
                "rhs of length {} for {} blocks of size {n}",
                rhs.len(),
                self.blocks
            )));
        }
        for k in 0..self.blocks {
            if k > 0 {
                // diag_k -= L_k * (D_{k-1}^{-1} U_{k-1}); rhs_k -= L_k * (D_{k-1}^{-1} rhs_{k-1})
                let (prev, _) = self.diag.split_at_mut(k * nn);
                let prev_lu = &prev[(k - 1) * nn..];
                let prev_piv = &self.piv[(k - 1) * n..k * n];
                // overwrite U_{k-1} column by column with D_{k-1}^{-1} U_{k-1}
                for c in 0..n {
                    for r in 0..n {
                        self.col[r] = self.upper[(k - 1) * nn + r * n + c];
                    }
                    lu_solve(prev_lu, prev_piv, n, &mut self.col);
                    for r in 0..n {
                        self.upper[(k - 1) * nn + r * n + c] = self.col[r];
                    }
                }
                let (done, rest) = rhs.split_at_mut(k * n);
                let prev_rhs = &done[(k - 1) * n..];
                let low = &self.lower[(k - 1) * nn..k * nn];
                let cur = &mut self.diag[k * nn..(k + 1) * nn];
                for r in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += low[r * n + m] * prev_rhs[m];
                    }
                    rest[r] -= s;
                    for c in 0..n {
                        let mut t = 0.0;
                        for m in 0..n {
                            t += low[r * n + m] * self.upper[(k - 1) * nn + m * n + c];
                        }
                        cur[r * n + c] -= t;
                    }
                }
            }
            let cur = &mut self.diag[k * nn..(k + 1) * nn];
            if !lu_factor(cur, &mut self.piv[k * n..(k + 1) * n], n) {
                return Err(LinalgError::Singular { block: k });
            }
            lu_solve(cur, &self.piv[k * n..(k + 1) * n], n, &mut rhs[k * n..(k + 1) * n]);
        }
        // back substitution: x_k = y_k - (D_k^{-1} U_k) x_{k+1}
        for k in (0..self.blocks.saturating_sub(1)).rev() {
            let (head, tail) = rhs.split_at_mut((k + 1) * n);
            let next = &tail[..n];
            let cur = &mut head[k * n..];
            for r in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += self.upper[k * nn + r * n + c] * next[c];
                }
                cur[r] -= s;
            }
        }
        Ok(())
    }
}
