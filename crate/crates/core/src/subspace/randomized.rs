//! Randomized SVD (range finder with power iterations) over a matrix that is
//! visited in blocks of columns, so the same code serves in-memory matrices
//! and stacks streamed from disk.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fix_signs, orthonormalize, SubspaceDecomposition, Tail};
use crate::error::{Error, Result};
use crate::par;
use crate::stack::StackMatrix;

/// Rows per parallel work item when accumulating `A·Ω`.
const ROW_CHUNK: usize = 4096;

/// A matrix that can be traversed column block by column block.
pub trait ColumnSource {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// Calls `f(first_col, block)` for consecutive blocks covering all
    /// columns in order; `block` is column-major `rows × width`.
    fn for_each_block(&mut self, f: &mut dyn FnMut(usize, &[f64]) -> Result<()>) -> Result<()>;
}

/// An in-memory matrix visited `block_cols` columns at a time.
pub struct MatrixSource<'a> {
    matrix: &'a StackMatrix,
    block_cols: usize,
}

impl<'a> MatrixSource<'a> {
    pub fn new(matrix: &'a StackMatrix, block_cols: usize) -> Self {
        Self {
            matrix,
            block_cols: block_cols.max(1),
        }
    }
}

impl ColumnSource for MatrixSource<'_> {
    fn rows(&self) -> usize {
        self.matrix.rows()
    }
    fn cols(&self) -> usize {
        self.matrix.cols()
    }
    fn for_each_block(&mut self, f: &mut dyn FnMut(usize, &[f64]) -> Result<()>) -> Result<()> {
        let rows = self.matrix.rows();
        for (b, block) in self.matrix.values().chunks(rows * self.block_cols).enumerate() {
            f(b * self.block_cols, block)?;
        }
        Ok(())
    }
}

pub fn randomized_svd(
    a: &StackMatrix,
    rank: usize,
    oversampling: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SubspaceDecomposition> {
    randomized_svd_source(&mut MatrixSource::new(a, a.cols()), rank, oversampling, power_iters, seed)
}

/// Rank-`rank` approximation from a `rank + oversampling` dimensional sketch
/// refined by `power_iters` subspace iterations. Deterministic for a fixed
/// seed and independent of the block size of `src`.
pub fn randomized_svd_source(
    src: &mut dyn ColumnSource,
    rank: usize,
    oversampling: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SubspaceDecomposition> {
    let (m, n) = (src.rows(), src.cols());
    let l = rank + oversampling;
    if rank == 0 || l > m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} + oversampling {oversampling} must lie in 1..={}",
            m.min(n)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Ω row-major n×l
    let omega: Vec<f64> = (0..n * l).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut frob2 = 0.0;
    let mut q = sketch(src, &omega, l, Some(&mut frob2))?;
    orthonormalize(&mut q, m, l);
    for _ in 0..power_iters {
        let mut z = project(src, &q, l)?; // n×l row-major
        let mut zc = transpose_rows_to_cols(&z, n, l);
        orthonormalize(&mut zc, n, l);
        z = transpose_cols_to_rows(&zc, n, l);
        q = sketch(src, &z, l, None)?;
        orthonormalize(&mut q, m, l);
    }
    // B = QᵀA, stored here as Bᵀ (n×l row-major)
    let bt = project(src, &q, l)?;
    let b = DMatrix::from_fn(l, n, |i, j| bt[j * l + i]);
    let svd = nalgebra::linalg::SVD::try_new(b, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NonConvergence(format!("SVD of {l}x{n} sketch")))?;
    let ub = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(rank);

    let mut u = vec![0.0; m * rank];
    let mut v = vec![0.0; n * rank];
    let mut s = vec![0.0; rank];
    for (dst, &src_k) in order.iter().enumerate() {
        s[dst] = svd.singular_values[src_k];
        let coeff: Vec<f64> = (0..l).map(|j| ub[(j, src_k)]).collect();
        let ucol = &mut u[dst * m..(dst + 1) * m];
        for (j, c) in coeff.iter().enumerate() {
            for (o, qv) in ucol.iter_mut().zip(&q[j * m..(j + 1) * m]) {
                *o += c * qv;
            }
        }
        for t in 0..n {
            v[dst * n + t] = vt[(src_k, t)];
        }
    }
    fix_signs(&mut u, &mut v, m, n, rank);
    let captured: f64 = s.iter().map(|x| x * x).sum();
    let tail = Tail {
        count: m.min(n) - rank,
        energy: (frob2 - captured).max(0.0),
    };
    Ok(SubspaceDecomposition::from_parts(m, n, u, s, v, Some(tail)))
}

/// `A·W` for row-major `W` (n×l), returned column-major m×l. Each output
/// entry accumulates over columns of `A` in order, whatever the blocking.
fn sketch(
    src: &mut dyn ColumnSource,
    w: &[f64],
    l: usize,
    mut frob2: Option<&mut f64>,
) -> Result<Vec<f64>> {
    let m = src.rows();
    // row-major accumulator so each row's l sums stay contiguous
    let mut y = vec![0.0; m * l];
    src.for_each_block(&mut |first, block| {
        let width = block.len() / m;
        if let Some(total) = frob2.as_deref_mut() {
            for c in 0..width {
                *total += block[c * m..(c + 1) * m].iter().map(|x| x * x).sum::<f64>();
            }
        }
        par::for_each_chunk_mut(&mut y, ROW_CHUNK * l, |chunk_idx, ychunk| {
            let row0 = chunk_idx * ROW_CHUNK;
            for c in 0..width {
                let t = first + c;
                let wrow = &w[t * l..(t + 1) * l];
                let col = &block[c * m..(c + 1) * m];
                for (r, yrow) in ychunk.chunks_mut(l).enumerate() {
                    let a = col[row0 + r];
                    for (yv, wv) in yrow.iter_mut().zip(wrow) {
                        *yv += a * wv;
                    }
                }
            }
        });
        Ok(())
    })?;
    Ok(transpose_rows_to_cols(&y, m, l))
}

/// `Aᵀ·Q` for column-major `Q` (m×l), returned row-major n×l.
fn project(src: &mut dyn ColumnSource, q: &[f64], l: usize) -> Result<Vec<f64>> {
    let (m, n) = (src.rows(), src.cols());
    let mut z = vec![0.0; n * l];
    src.for_each_block(&mut |first, block| {
        let width = block.len() / m;
        let rows = par::map_range(width * l, |idx| {
            let (c, j) = (idx / l, idx % l);
            super::dot(&block[c * m..(c + 1) * m], &q[j * m..(j + 1) * m])
        });
        z[first * l..(first + width) * l].copy_from_slice(&rows);
        Ok(())
    })?;
    Ok(z)
}

fn transpose_rows_to_cols(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn transpose_cols_to_rows(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for j in 0..cols {
        for i in 0..rows {
            out[i * cols + j] = a[j * rows + i];
        }
    }
    out
}
