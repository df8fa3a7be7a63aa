use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub(crate) fn solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    let lu = a.lu();
    let x = lu.solve(&rhs).ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(x.iter().copied().collect())
}

/// Solves `a^T x = b`.
pub(crate) fn solve_transposed(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    solve(a.transpose(), b)
}
