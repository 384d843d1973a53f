//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Condition number above which a symmetric system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Failure of a guarded symmetric solve; carries the observed condition number.
#[derive(Debug, Clone, Copy)]
pub struct Singular {
    pub cond: f64,
}

/// Replaces `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for a in 0..k {
        for b in (a + 1)..k {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    if m.nrows() == 1 {
        return vec![m[(0, 0)]];
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Spectral condition number of a symmetric matrix; infinite when not positive definite.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 && lo.is_finite() && hi.is_finite() => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky, refusing
/// systems whose condition number exceeds [`MAX_CONDITION`].
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, Singular> {
    let (x, _) = spd_solve_cond(a, b)?;
    Ok(x)
}

/// Like [`spd_solve`] but also returns the condition number of `a`.
pub fn spd_solve_cond(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), Singular> {
    let cond = sym_condition(a);
    if !(cond <= MAX_CONDITION) {
        return Err(Singular { cond });
    }
    let mut s = a.clone();
    symmetrize(&mut s);
    let chol = s.cholesky().ok_or(Singular { cond })?;
    Ok((chol.solve(b), cond))
}

/// Inverse of a symmetric positive-definite matrix under the same guard as [`spd_solve`].
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, Singular> {
    let k = a.nrows();
    let mut inv = spd_solve(a, &DMatrix::identity(k, k))?;
    symmetrize(&mut inv);
    Ok(inv)
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_matches_known_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = spd_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn singular_system_is_refused() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(spd_solve(&a, &b).is_err());
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(spd_solve(&c, &b).is_err());
    }

    #[test]
    fn eigenvalues_are_sorted() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 5.0]);
        assert_eq!(sym_eigenvalues(&a), vec![-1.0, 2.0, 5.0]);
        assert_eq!(min_eigenvalue(&a), -1.0);
        assert!(sym_condition(&a).is_infinite());
    }
}
