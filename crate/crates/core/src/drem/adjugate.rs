use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest square size accepted by [`adjugate`].
pub const MAX_ADJUGATE_DIM: usize = 6;

/// Classical adjugate: transpose of the cofactor matrix.
///
/// Satisfies `adj(M)·M = det(M)·I` for every square `M`, singular or not,
/// which is what makes the mixing step well defined before the regressor
/// matrix becomes invertible.
pub fn adjugate(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = m.nrows();
    if m.ncols() != q {
        return Err(Error::Dimension {
            context: "adjugate expects a square matrix",
            expected: q,
            got: m.ncols(),
        });
    }
    if q == 0 || q > MAX_ADJUGATE_DIM {
        return Err(Error::Dimension {
            context: "adjugate supports sizes 1..=6",
            expected: MAX_ADJUGATE_DIM,
            got: q,
        });
    }
    if q == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0));
    }
    let mut adj = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // cofactor C_ij lands at adj_ji
            adj[(j, i)] = sign * minor.determinant();
        }
    }
    Ok(adj)
}
