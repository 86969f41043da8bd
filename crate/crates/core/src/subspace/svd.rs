//! Exact thin SVD through the T×T Gram matrix.
//!
//! Stack matrices are tall (M·N ≫ T), so the right factor comes from the
//! eigendecomposition of `AᵀA` and the left factor is recovered as `A·V`. One
//! or more refinement passes re-diagonalize `(AV)ᵀ(AV)`, which restores
//! orthonormality of `U` to working precision for every component that is not
//! numerically zero.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, ShapeBuilder};

use super::{fix_signs, orthonormalize, SubspaceDecomposition};
use crate::error::{Error, Result};
use crate::stack::StackMatrix;

/// Relative size below which a component is treated as numerically zero and
/// its left vector completed by orthogonalization.
const NULL_COMPONENT: f64 = 1e-6;
const MAX_REFINE: usize = 4;

pub fn svd_thin(a: &StackMatrix) -> Result<SubspaceDecomposition> {
    if a.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: a.values().iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    if a.rows() >= a.cols() {
        tall_svd(a.view())
    } else {
        // factor Aᵀ and swap the roles of U and V
        let at = a.view().t().to_owned();
        let d = tall_svd(at.view())?;
        let (rows, cols) = (a.rows(), a.cols());
        let r = d.rank();
        let mut u = d.v.clone();
        let mut v = d.u.clone();
        fix_signs(&mut u, &mut v, rows, cols, r);
        Ok(SubspaceDecomposition::from_parts(rows, cols, u, d.s, v, None))
    }
}

fn tall_svd(a: ArrayView2<'_, f64>) -> Result<SubspaceDecomposition> {
    let (rows, n) = a.dim();
    let gram = a.t().dot(&a);
    let (mut v, _) = sorted_eigen(&gram)?;
    let mut w = a.dot(&v);

    let mut s = vec![0.0; n];
    for pass in 0..MAX_REFINE {
        let c = w.t().dot(&w);
        let (z, lambda) = sorted_eigen(&c)?;
        w = w.dot(&z);
        v = v.dot(&z);
        for (k, sk) in s.iter_mut().enumerate() {
            *sk = w.column(k).dot(&w.column(k)).sqrt();
        }
        // off-diagonal mass of the pre-rotation Gram matrix, relative to the
        // components it couples
        let smax = s[0].max(f64::MIN_POSITIVE);
        let mut coupled = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j && s[i] > NULL_COMPONENT * smax && s[j] > NULL_COMPONENT * smax {
                    coupled = coupled.max(c[[i, j]].abs() / (s[i] * s[j]));
                }
            }
        }
        log::trace!("svd refine pass {pass}: coupling {coupled:e}, λ0 {}", lambda[0]);
        if coupled < 1e-13 {
            break;
        }
    }

    // order by the column norms, which are more accurate than the eigenvalues
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let smax = order.first().map(|&i| s[i]).unwrap_or(0.0);
    let mut u_out = vec![0.0; rows * n];
    let mut v_out = vec![0.0; n * n];
    let mut s_out = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        let sk = s[src];
        s_out[dst] = sk;
        let ucol = &mut u_out[dst * rows..(dst + 1) * rows];
        if sk > 0.0 {
            for (o, x) in ucol.iter_mut().zip(w.column(src)) {
                *o = x / sk;
            }
        }
        for (o, x) in v_out[dst * n..(dst + 1) * n].iter_mut().zip(v.column(src)) {
            *o = *x;
        }
    }
    // complete left vectors of numerically null components
    let good = s_out
        .iter()
        .take_while(|&&x| x > NULL_COMPONENT * smax && x > 0.0)
        .count();
    if good < n {
        orthonormalize(&mut u_out, rows, n);
    }
    fix_signs(&mut u_out, &mut v_out, rows, n, n);
    Ok(SubspaceDecomposition::from_parts(rows, n, u_out, s_out, v_out, None))
}

/// Eigenvectors (as columns) and eigenvalues of a symmetric matrix, sorted by
/// decreasing eigenvalue.
fn sorted_eigen(m: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = m.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NonConvergence(format!("symmetric eigensolver on {n}x{n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vecs = Array2::zeros((n, n).f());
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs[[i, dst]] = eig.eigenvectors[(i, src)];
        }
    }
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((vecs, vals))
}
