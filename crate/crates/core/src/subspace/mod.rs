//! Low-rank factorization of stack matrices and SURE-based selection of the
//! retained subspace.

mod randomized;
mod sure;
mod svd;

pub use randomized::{randomized_svd, randomized_svd_source, ColumnSource, MatrixSource};
pub use sure::{
    divergence, select_rank, sure_hard_threshold, true_mse_curve, SureReport, ThresholdConfig,
};
pub use svd::svd_thin;

use ndarray::{ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::par;
use crate::stack::StackMatrix;

/// Energy of the singular values a randomized factorization did not compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tail {
    /// Number of uncomputed singular values, `min(rows, cols) - rank`.
    pub count: usize,
    /// Their summed squares, `‖A‖²_F - Σ s_i²`.
    pub energy: f64,
}

/// `A ≈ U·diag(s)·Vᵀ` with orthonormal columns in `U` ((rows)×r) and
/// `V` ((cols)×r), `s` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDecomposition {
    rows: usize,
    cols: usize,
    /// Column-major rows×r.
    u: Vec<f64>,
    s: Vec<f64>,
    /// Column-major cols×r.
    v: Vec<f64>,
    tail: Option<Tail>,
}

impl SubspaceDecomposition {
    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        u: Vec<f64>,
        s: Vec<f64>,
        v: Vec<f64>,
        tail: Option<Tail>,
    ) -> Self {
        debug_assert_eq!(u.len(), rows * s.len());
        debug_assert_eq!(v.len(), cols * s.len());
        Self {
            rows,
            cols,
            u,
            s,
            v,
            tail,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// Number of computed components.
    pub fn rank(&self) -> usize {
        self.s.len()
    }
    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }
    /// True when every singular value of the source matrix was computed.
    pub fn is_exact(&self) -> bool {
        self.tail.is_none()
    }
    pub fn tail(&self) -> Option<Tail> {
        self.tail
    }
    pub fn u_column(&self, k: usize) -> &[f64] {
        &self.u[k * self.rows..(k + 1) * self.rows]
    }
    pub fn v_column(&self, k: usize) -> &[f64] {
        &self.v[k * self.cols..(k + 1) * self.cols]
    }
    pub fn u_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.rank()).f(), &self.u).expect("U shape")
    }
    pub fn v_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.cols, self.rank()).f(), &self.v).expect("V shape")
    }

    /// `s_k·U_k`, the k-th spatial coefficient vector.
    pub fn coefficient(&self, k: usize) -> Vec<f64> {
        let s = self.s[k];
        self.u_column(k).iter().map(|u| u * s).collect()
    }

    /// Maximum entry of `|UᵀU − I|` and `|VᵀV − I|`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        (gram_deviation(self.u_view()), gram_deviation(self.v_view()))
    }
}

fn gram_deviation(a: ArrayView2<'_, f64>) -> f64 {
    let g = a.t().dot(&a);
    let mut worst = 0.0f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// `Σ_{k<K} s_k·U_k·V_kᵀ`.
pub fn truncate(d: &SubspaceDecomposition, rank: usize) -> Result<StackMatrix> {
    if rank == 0 || rank > d.rank() {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} outside 1..={}",
            d.rank()
        )));
    }
    let coeffs: Vec<Vec<f64>> = (0..rank).map(|k| d.coefficient(k)).collect();
    reconstruct(&coeffs, d, d.rows())
}

/// Builds `Σ_k c_k·V_kᵀ` from (possibly denoised) coefficient vectors.
///
/// Column `t` accumulates the components in order `k = 0, 1, …`, so the result
/// does not depend on how columns are scheduled.
pub fn reconstruct(
    coeffs: &[Vec<f64>],
    d: &SubspaceDecomposition,
    rows: usize,
) -> Result<StackMatrix> {
    if coeffs.len() > d.rank() || coeffs.iter().any(|c| c.len() != rows) {
        return Err(Error::Dimension("coefficients do not match decomposition".into()));
    }
    let cols = d.cols();
    let mut out = vec![0.0; rows * cols];
    par::for_each_chunk_mut(&mut out, rows, |t, col| {
        reconstruct_column(coeffs, |k| d.v_column(k)[t], col)
    });
    StackMatrix::new(rows, cols, out)
}

/// Writes `Σ_k c_k·weight(k)` into `out`.
pub(crate) fn reconstruct_column(coeffs: &[Vec<f64>], weight: impl Fn(usize) -> f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, c) in coeffs.iter().enumerate() {
        let w = weight(k);
        for (o, ci) in out.iter_mut().zip(c) {
            *o += ci * w;
        }
    }
}

/// Flips column pairs so the largest-magnitude entry of each `U` column is
/// positive.
pub(crate) fn fix_signs(u: &mut [f64], v: &mut [f64], rows: usize, cols: usize, rank: usize) {
    for k in 0..rank {
        let col = &u[k * rows..(k + 1) * rows];
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            u[k * rows..(k + 1) * rows].iter_mut().for_each(|x| *x = -*x);
            v[k * cols..(k + 1) * cols].iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Orthonormalizes the columns of a column-major rows×n matrix in place
/// (classical Gram–Schmidt with reorthogonalization). Columns that collapse
/// are replaced by unit vectors orthogonal to the rest.
pub(crate) fn orthonormalize(q: &mut [f64], rows: usize, n: usize) {
    let mut fallback = 0usize;
    for j in 0..n {
        let (done, rest) = q.split_at_mut(j * rows);
        let col = &mut rest[..rows];
        let original = norm(col);
        project_out(done, rows, j, col);
        project_out(done, rows, j, col);
        let mut nrm = norm(col);
        while !(nrm > 1e-10 * original) || nrm == 0.0 {
            // collapsed: try coordinate vectors until one survives
            col.iter_mut().for_each(|x| *x = 0.0);
            col[fallback % rows] = 1.0;
            fallback += 1;
            project_out(done, rows, j, col);
            project_out(done, rows, j, col);
            nrm = norm(col);
            if nrm > 0.5 {
                break;
            }
        }
        col.iter_mut().for_each(|x| *x /= nrm);
    }
}

fn project_out(done: &[f64], rows: usize, count: usize, col: &mut [f64]) {
    let coefs: Vec<f64> = (0..count)
        .map(|i| dot(&done[i * rows..(i + 1) * rows], col))
        .collect();
    for (i, c) in coefs.into_iter().enumerate() {
        for (x, qi) in col.iter_mut().zip(&done[i * rows..(i + 1) * rows]) {
            *x -= c * qi;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormalize_handles_dependent_columns() {
        // third column is a combination of the first two; fourth is zero
        let rows = 5;
        let mut q = vec![
            1.0, 2.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, 3.0, //
            1.0, 3.0, 1.0, 1.0, 3.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        orthonormalize(&mut q, rows, 4);
        let d = SubspaceDecomposition::from_parts(rows, 1, q, vec![0.0; 4], vec![0.0; 4], None);
        assert!(d.orthonormality_error().0 < 1e-12);
    }
}
