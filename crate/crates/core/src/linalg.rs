use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor of the SPD matrix `a`. If the factorization fails or is
/// numerically rank deficient, it is retried once with each diagonal entry
/// inflated by the relative amount `ridge`; the flag reports the retry.
pub(crate) fn spd_factor(a: &DMatrix<f64>, ridge: f64) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        if chol_is_sound(&chol, a) {
            return Ok((chol, false));
        }
    }
    let n = a.nrows();
    let mean_diag = if n > 0 { a.trace() / n as f64 } else { 0.0 };
    let fallback = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut shifted = a.clone();
    for i in 0..n {
        let d = a[(i, i)];
        shifted[(i, i)] += ridge * if d > 0.0 { d } else { fallback };
    }
    match Cholesky::new(shifted.clone()) {
        Some(chol) if chol.l_dirty().iter().all(|v| v.is_finite()) => Ok((chol, true)),
        _ => Err(Error::Numerical(format!(
            "{n}x{n} system is not positive definite even after ridge {ridge:e}"
        ))),
    }
}

// Pivot i squared is the part of column i not explained by columns < i; a
// pivot that is negligible relative to the column's own diagonal means the
// system is singular to working precision.
fn chol_is_sound(chol: &Cholesky<f64, Dyn>, a: &DMatrix<f64>) -> bool {
    let l = chol.l_dirty();
    (0..l.nrows()).all(|i| {
        let pivot = l[(i, i)];
        pivot.is_finite() && pivot * pivot > 1e-11 * a[(i, i)] && a[(i, i)] > 0.0
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
pub(crate) fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable sort keeps ties in the decomposition's order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

pub(crate) fn column_subset(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

pub(crate) fn principal_subset(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub(crate) fn vector_subset(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
