//! Primitives of the recursive convex optimization: rank-b inverse updates,
//! Bregman quadratic forms and the offline closed-form experts that the
//! streaming learners are checked against.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Rows per inner solve in [`woodbury_update`]. Larger batches are applied
/// as a sequence of row blocks, which is algebraically the same update.
const WOODBURY_BLOCK: usize = 256;

/// Symmetric positive definite matrix, used for the learning-rate matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdMatrix(Array2<f64>);

impl PsdMatrix {
    /// Wraps a square matrix, re-symmetrizing it. Positivity is not checked
    /// here; see [`PsdMatrix::is_positive_definite`].
    pub fn new(mut entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::contract(format!(
                "PSD matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("PSD matrix has non-finite entries"));
        }
        linalg::symmetrize(&mut entries);
        Ok(PsdMatrix(entries))
    }

    /// `scale * I`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        PsdMatrix(Array2::eye(dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn is_positive_definite(&self) -> bool {
        linalg::cholesky(self.0.view()).is_some()
    }

    pub fn max_asymmetry(&self) -> f64 {
        linalg::max_asymmetry(self.0.view())
    }

    /// Explicit inverse. Only used for diagnostics and cross-checks.
    pub fn inverse(&self) -> Result<PsdMatrix> {
        let inv = linalg::solve_symmetric(self.0.view(), Array2::eye(self.dim()).view())?;
        PsdMatrix::new(inv)
    }
}

/// Closed-form solution of a regularized least-squares problem together with
/// the sufficient statistics that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub theta: Array2<f64>,
    /// Regularized Gram matrix the solution was solved against.
    pub gram: PsdMatrix,
    /// Accumulated cross moment `sum_i D_i^T Y_i`.
    pub cross: Array2<f64>,
}

impl OfflineSolution {
    /// Max relative residual of `gram * theta = cross`.
    pub fn residual(&self) -> f64 {
        let lhs = self.gram.as_array().dot(&self.theta);
        let scale = self
            .cross
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()))
            .max(1e-300);
        lhs.iter()
            .zip(self.cross.iter())
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
            / scale
    }
}

/// Returns `(eta^{-1} + c D^T D)^{-1}` computed from `eta` through the
/// Woodbury identity
/// `eta - c eta D^T (I + c D eta D^T)^{-1} D eta`.
///
/// A `D` with zero rows, or `c == 0`, leaves `eta` unchanged.
pub fn woodbury_update(eta: &PsdMatrix, d: ArrayView2<f64>, c: f64) -> Result<PsdMatrix> {
    let dim = eta.dim();
    if d.ncols() != dim {
        return Err(Error::contract(format!(
            "woodbury update: batch has {} columns, learning rate is {dim}x{dim}",
            d.ncols()
        )));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::contract(format!(
            "woodbury update: coefficient must be finite and nonnegative, got {c}"
        )));
    }
    if d.nrows() == 0 || c == 0.0 {
        return Ok(eta.clone());
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("woodbury update: batch has non-finite entries"));
    }

    let mut current = eta.0.clone();
    let mut start = 0;
    while start < d.nrows() {
        let end = (start + WOODBURY_BLOCK).min(d.nrows());
        let block = d.slice(s![start..end, ..]);
        // d_eta = D eta  (rows x dim); eta symmetric so eta D^T = d_eta^T.
        let d_eta = block.dot(&current);
        let mut inner = d_eta.dot(&block.t()) * c;
        for i in 0..inner.nrows() {
            inner[[i, i]] += 1.0;
        }
        let solved = linalg::solve_symmetric(inner.view(), d_eta.view())?;
        let correction = d_eta.t().dot(&solved) * c;
        current -= &correction;
        linalg::symmetrize(&mut current);
        start = end;
    }
    if current.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("woodbury update produced non-finite entries"));
    }
    Ok(PsdMatrix(current))
}

/// `sum_i 1/2 (a_i - b_i)^T M (a_i - b_i)` over the columns of the two
/// weight matrices.
pub fn bregman_quadratic(
    theta_a: ArrayView2<f64>,
    theta_b: ArrayView2<f64>,
    metric: &PsdMatrix,
) -> Result<f64> {
    if theta_a.dim() != theta_b.dim() {
        return Err(Error::contract(format!(
            "bregman: weight shapes differ ({:?} vs {:?})",
            theta_a.dim(),
            theta_b.dim()
        )));
    }
    if theta_a.nrows() != metric.dim() {
        return Err(Error::contract(format!(
            "bregman: weights have {} rows, metric is {}x{}",
            theta_a.nrows(),
            metric.dim(),
            metric.dim()
        )));
    }
    let diff = &theta_a - &theta_b;
    let projected = metric.0.dot(&diff);
    let value = 0.5 * (&diff * &projected).sum();
    // Rounding can push an exact zero slightly negative.
    Ok(value.max(0.0))
}

fn check_finite(name: &str, a: ArrayView2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::contract(format!("{name} has non-finite entries")))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "regularization must be positive and finite, got {lambda}"
        )))
    }
}

/// Primal ridge solution `(D^T D + lambda I)^{-1} D^T Y`.
pub fn offline_ridge_fit(
    d_all: ArrayView2<f64>,
    y_all: ArrayView2<f64>,
    lambda: f64,
) -> Result<OfflineSolution> {
    check_lambda(lambda)?;
    if d_all.nrows() == 0 {
        return Err(Error::contract("ridge fit needs at least one row"));
    }
    if d_all.nrows() != y_all.nrows() {
        return Err(Error::contract(format!(
            "ridge fit: {} feature rows but {} target rows",
            d_all.nrows(),
            y_all.nrows()
        )));
    }
    check_finite("feature matrix", d_all)?;
    check_finite("target matrix", y_all)?;

    let mut gram = d_all.t().dot(&d_all);
    for i in 0..gram.nrows() {
        gram[[i, i]] += lambda;
    }
    let cross = d_all.t().dot(&y_all);
    let theta = linalg::solve_symmetric(gram.view(), cross.view())?;
    Ok(OfflineSolution {
        theta,
        gram: PsdMatrix::new(gram)?,
        cross,
    })
}

/// Dual ridge solution `D^T (D D^T + lambda I)^{-1} Y`. Cheaper than the
/// primal form when there are fewer rows than columns; kept as an
/// independent cross-check of [`offline_ridge_fit`].
pub fn offline_ridge_fit_dual(
    d_all: ArrayView2<f64>,
    y_all: ArrayView2<f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    check_lambda(lambda)?;
    if d_all.nrows() != y_all.nrows() || d_all.nrows() == 0 {
        return Err(Error::contract("dual ridge fit: row counts must agree and be positive"));
    }
    check_finite("feature matrix", d_all)?;
    check_finite("target matrix", y_all)?;
    let mut kernel = d_all.dot(&d_all.t());
    for i in 0..kernel.nrows() {
        kernel[[i, i]] += lambda;
    }
    let alpha = linalg::solve_symmetric(kernel.view(), y_all)?;
    Ok(d_all.t().dot(&alpha))
}

/// Direct minimizer of the forward-regularized objective over batches
/// `1..=t`: `(lambda I + sum D_i^T D_i + k D_next^T D_next)^{-1} sum D_i^T Y_i`.
pub fn offline_kf_fit<'a, I>(
    batches: I,
    d_next: ArrayView2<f64>,
    k: f64,
    lambda: f64,
) -> Result<OfflineSolution>
where
    I: IntoIterator<Item = (ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
{
    check_lambda(lambda)?;
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::contract(format!("forward coefficient must be >= 0, got {k}")));
    }
    let dim = d_next.ncols();
    let mut gram: Option<Array2<f64>> = None;
    let mut cross: Option<Array2<f64>> = None;
    for (d, y) in batches {
        if d.ncols() != dim || d.nrows() != y.nrows() {
            return Err(Error::contract("offline kF fit: inconsistent batch shapes"));
        }
        let g = gram.get_or_insert_with(|| Array2::zeros((dim, dim)));
        *g += &d.t().dot(&d);
        let c = cross.get_or_insert_with(|| Array2::zeros((dim, y.ncols())));
        if c.ncols() != y.ncols() {
            return Err(Error::contract("offline kF fit: target widths differ"));
        }
        *c += &d.t().dot(&y);
    }
    let (mut gram, cross) = match (gram, cross) {
        (Some(g), Some(c)) => (g, c),
        _ => return Err(Error::contract("offline kF fit needs at least one batch")),
    };
    if d_next.nrows() > 0 {
        gram.scaled_add(k, &d_next.t().dot(&d_next));
    }
    for i in 0..dim {
        gram[[i, i]] += lambda;
    }
    let theta = match linalg::cholesky(gram.view()) {
        Some(l) => {
            let mut x = cross.clone();
            linalg::cholesky_solve(&l, &mut x);
            x
        }
        None => return Err(Error::numerical("offline kF system failed Cholesky factorization")),
    };
    Ok(OfflineSolution {
        theta,
        gram: PsdMatrix::new(gram)?,
        cross,
    })
}

/// Concatenates batches row-wise, for feeding [`offline_ridge_fit`].
pub fn stack_batches(batches: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    if batches.is_empty() {
        return Err(Error::contract("no batches to stack"));
    }
    linalg::vstack(batches)
}
