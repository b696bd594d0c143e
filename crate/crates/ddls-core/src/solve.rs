//! Thin wrappers over the LAPACK-backed dense factorizations so the rest of
//! the crate never touches backend-specific error types.

use crate::error::{DdlsError, Result};
use crate::{CMat, CVec};
use ndarray_linalg::{Inverse, Solve};

/// Dense inverse via LU.
pub fn inv(a: &CMat) -> Result<CMat> {
    a.inv()
        .map_err(|e| DdlsError::Singular(format!("inverse failed: {e}")))
}

/// Solve A x = b for a single right-hand side via LU.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    a.solve(b)
        .map_err(|e| DdlsError::Singular(format!("solve failed: {e}")))
}

/// Hermitian transpose.
pub fn adjoint(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}
