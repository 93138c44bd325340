//! Small dense factorizations used by the solver.
//!
//! Everything here works on symmetric systems: Cholesky is the primary
//! route and an unpivoted LDL^T is kept as a fallback for matrices that
//! are positive definite in exact arithmetic but lose it to rounding.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `a = L L^T`, or `None` when a
/// pivot is not strictly positive and finite.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L L^T X = B` in place given the Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    let cols = b.ncols();
    for c in 0..cols {
        for i in 0..n {
            let mut s = b[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[[i, c]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
    }
}

/// Unpivoted `a = L D L^T` with unit-lower `L`. Returns `None` on a zero or
/// non-finite pivot.
pub fn ldlt(a: ArrayView2<f64>) -> Option<(Array2<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut l = Array2::<f64>::eye(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a[[j, j]];
        for k in 0..j {
            dj -= l[[j, k]] * l[[j, k]] * d[k];
        }
        if dj == 0.0 || !dj.is_finite() {
            return None;
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]] * d[k];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some((l, d))
}

pub fn ldlt_solve(l: &Array2<f64>, d: &[f64], b: &mut Array2<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * b[[k, c]];
            }
            b[[i, c]] = s;
        }
        for i in 0..n {
            b[[i, c]] /= d[i];
        }
        for i in (0..n).rev() {
            let mut s = b[[i, c]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * b[[k, c]];
            }
            b[[i, c]] = s;
        }
    }
}

/// Solves the symmetric system `a X = b`: Cholesky first, LDL^T if that fails.
pub fn solve_symmetric(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::contract(format!(
            "symmetric solve: system is {}x{}, right-hand side has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite entries in symmetric system"));
    }
    let mut x = b.to_owned();
    if let Some(l) = cholesky(a) {
        cholesky_solve(&l, &mut x);
    } else if let Some((l, d)) = ldlt(a) {
        ldlt_solve(&l, &d, &mut x);
    } else {
        return Err(Error::numerical(
            "symmetric system is singular (Cholesky and LDL^T both failed)",
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("symmetric solve produced non-finite values"));
    }
    Ok(x)
}

/// Trace of the inverse of a symmetric positive definite matrix.
pub fn trace_of_inverse(a: ArrayView2<f64>) -> Result<f64> {
    let n = a.nrows();
    let inv = solve_symmetric(a, Array2::<f64>::eye(n).view())?;
    Ok(inv.diag().sum())
}

/// `(a + a^T) / 2`, in place.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

pub fn max_asymmetry(a: ArrayView2<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Stacks row blocks vertically. All blocks must share a column count.
pub fn vstack(blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    ndarray::concatenate(Axis(0), blocks)
        .map_err(|e| Error::contract(format!("cannot stack row blocks: {e}")))
}
