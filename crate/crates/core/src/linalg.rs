//! Dense small-matrix kernels used by the allocator.
//!
//! Everything here works on `nalgebra` dynamic matrices. The SVD is a
//! one-sided (Hestenes) Jacobi iteration, which is accurate for the tiny,
//! possibly rank-deficient matrices that show up in allocation problems and
//! always returns *full* `U` and `V` so that null-space and left-complement
//! columns are available.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("SVD did not converge after {sweeps} Jacobi sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("{op}: matrix is rank deficient (rank {rank}, need {required})")]
    Singular {
        op: &'static str,
        rank: usize,
        required: usize,
    },
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

/// Full singular value decomposition `M = U * diag(s) * V^T`.
///
/// `u` is `rows x rows`, `v` is `cols x cols` and `singular_values` has
/// `min(rows, cols)` entries sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

impl Svd {
    /// Rebuilds `U * Sigma * V^T` with the rectangular `Sigma`.
    pub fn reconstruct(&self) -> Matrix {
        let (r, c) = (self.u.nrows(), self.v.nrows());
        let mut sigma = Matrix::zeros(r, c);
        for (i, s) in self.singular_values.iter().enumerate() {
            sigma[(i, i)] = *s;
        }
        &self.u * sigma * self.v.transpose()
    }

    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Default rank threshold `max(rows, cols) * eps * sigma_max`.
pub fn default_rank_tol(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

fn check_finite(m: &Matrix) -> Result<(), LinalgError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

pub fn svd(m: &Matrix) -> Result<Svd, LinalgError> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(LinalgError::Shape {
            op: "svd",
            msg: format!("empty {}x{} matrix", m.nrows(), m.ncols()),
        });
    }
    let mut d = if m.nrows() >= m.ncols() {
        svd_tall(m)?
    } else {
        let t = svd_tall(&m.transpose())?;
        Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        }
    };
    normalize_signs(&mut d);
    Ok(d)
}

/// Largest-magnitude entry of each left vector positive; the paired right
/// vector follows. Unpaired completion columns are normalized on their own.
fn normalize_signs(d: &mut Svd) {
    let p = d.singular_values.len();
    for j in 0..d.u.ncols() {
        if leading_sign(&d.u.column(j).into_owned()) < 0.0 {
            d.u.column_mut(j).neg_mut();
            if j < p {
                d.v.column_mut(j).neg_mut();
            }
        }
    }
    for j in p..d.v.ncols() {
        if leading_sign(&d.v.column(j).into_owned()) < 0.0 {
            d.v.column_mut(j).neg_mut();
        }
    }
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn svd_tall(a: &Matrix) -> Result<Svd, LinalgError> {
    let (rows, cols) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(cols, cols);

    // columns below this squared norm are numerically zero and left alone
    let floor = (f64::EPSILON * a.norm()).powi(2);
    let eps = f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                // the second bound is the rounding floor when one column is
                // much shorter than the other
                if gamma == 0.0
                    || alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                    || gamma.abs() <= eps * alpha.max(beta)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = norms[order[0]];
    let zero_tol = default_rank_tol(rows, cols, sigma_max);

    let mut singular_values = Vector::zeros(cols);
    let mut v_sorted = Matrix::zeros(cols, cols);
    let mut u_cols: Vec<Option<Vector>> = Vec::with_capacity(rows);
    for (dst, &src) in order.iter().enumerate() {
        singular_values[dst] = norms[src];
        v_sorted.set_column(dst, &v.column(src));
        if norms[src] > zero_tol && norms[src] > 0.0 {
            // re-orthogonalize against the larger left vectors; short
            // columns carry rounding noise from the rotations
            let mut col = w.column(src) / norms[src];
            for _ in 0..2 {
                for prev in u_cols.iter().flatten() {
                    let proj = prev.dot(&col);
                    col -= prev * proj;
                }
            }
            let nrm = col.norm();
            u_cols.push((nrm > 0.5).then(|| col / nrm));
        } else {
            u_cols.push(None);
        }
    }
    u_cols.resize(rows, None);
    let u = complete_orthonormal(rows, u_cols);

    Ok(Svd {
        u,
        singular_values,
        v: v_sorted,
    })
}

fn leading_sign(col: &Vector) -> f64 {
    let mut best = 0.0f64;
    for &x in col.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Fills the `None` slots with unit vectors orthogonal to everything already
/// present, drawing candidates from the standard basis.
fn complete_orthonormal(dim: usize, cols: Vec<Option<Vector>>) -> Matrix {
    let mut out = Matrix::zeros(dim, dim);
    let mut basis: Vec<Vector> = cols.iter().flatten().cloned().collect();
    let mut filled: Vec<Option<Vector>> = cols;
    for slot in filled.iter_mut() {
        if slot.is_some() {
            continue;
        }
        let mut best: Option<Vector> = None;
        let mut best_norm = -1.0;
        for e in 0..dim {
            let mut cand = Vector::zeros(dim);
            cand[e] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&cand);
                    cand -= b * proj;
                }
            }
            let nrm = cand.norm();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(cand);
            }
        }
        let unit = best.expect("dimension is positive") / best_norm;
        basis.push(unit.clone());
        *slot = Some(unit);
    }
    for (j, col) in filled.into_iter().enumerate() {
        out.set_column(j, &col.expect("all slots filled"));
    }
    out
}

/// Number of singular values above `tol`; `None` selects the default
/// `max(rows, cols) * eps * sigma_max`.
pub fn rank_with_tol(m: &Matrix, tol: Option<f64>) -> Result<usize, LinalgError> {
    let d = svd(m)?;
    let tol = tol.unwrap_or_else(|| default_rank_tol(m.nrows(), m.ncols(), d.max_singular_value()));
    Ok(d.rank(tol))
}

/// Rank with a threshold relative to the largest singular value.
pub fn rank_relative(m: &Matrix, rtol: f64) -> Result<usize, LinalgError> {
    let d = svd(m)?;
    Ok(d.rank(rtol * d.max_singular_value()))
}

fn spd_inverse(g: Matrix, op: &'static str, required: usize) -> Result<Matrix, LinalgError> {
    match g.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(LinalgError::Singular {
            op,
            rank: rank_with_tol(&g, None).unwrap_or(0),
            required,
        }),
    }
}

/// Right pseudo-inverse `M^T (M M^T)^-1` of a full-row-rank matrix.
pub fn pinv_right(m: &Matrix) -> Result<Matrix, LinalgError> {
    let (rows, cols) = m.shape();
    if cols < rows {
        return Err(LinalgError::Shape {
            op: "pinv_right",
            msg: format!("need cols >= rows, got {rows}x{cols}"),
        });
    }
    let rank = rank_with_tol(m, None)?;
    if rank < rows {
        return Err(LinalgError::Singular {
            op: "pinv_right",
            rank,
            required: rows,
        });
    }
    let gram = m * m.transpose();
    Ok(m.transpose() * spd_inverse(gram, "pinv_right", rows)?)
}

/// Least-squares left inverse `(M^T M)^-1 M^T` of a full-column-rank matrix.
pub fn lsq_inverse(m: &Matrix) -> Result<Matrix, LinalgError> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(LinalgError::Shape {
            op: "lsq_inverse",
            msg: format!("need cols <= rows, got {rows}x{cols}"),
        });
    }
    let rank = rank_with_tol(m, None)?;
    if rank < cols {
        return Err(LinalgError::Singular {
            op: "lsq_inverse",
            rank,
            required: cols,
        });
    }
    let gram = m.transpose() * m;
    Ok(spd_inverse(gram, "lsq_inverse", cols)? * m.transpose())
}

/// Orthonormal basis of `ker(B)` for a full-row-rank wide `B`: the last
/// `m - n` right singular vectors.
pub fn null_space(b: &Matrix) -> Result<Matrix, LinalgError> {
    let (n, m) = b.shape();
    if m <= n {
        return Err(LinalgError::Shape {
            op: "null_space",
            msg: format!("need more columns than rows, got {n}x{m}"),
        });
    }
    let d = svd(b)?;
    let rank = d.rank(default_rank_tol(n, m, d.max_singular_value()));
    if rank < n {
        return Err(LinalgError::Singular {
            op: "null_space",
            rank,
            required: n,
        });
    }
    Ok(d.v.columns(n, m - n).into_owned())
}

/// Generalized inverse of a row-rank-deficient `n x p` matrix by augmenting
/// it with the left singular vectors that span the complement of its range.
///
/// With `Bbar = U D V^T` of rank `r < n`, the augmented matrix
/// `[Bbar | U[:, r..n]]` has full row rank; its right pseudo-inverse `P` is
/// `(p + n - r) x n` and the first `p` rows are returned.
///
/// `rtol` is the rank threshold relative to `sigma_max`; `None` uses the
/// default tolerance.
pub fn singular_inverse(bbar: &Matrix, rtol: Option<f64>) -> Result<Matrix, LinalgError> {
    let (n, p) = bbar.shape();
    let d = svd(bbar)?;
    let smax = d.max_singular_value();
    let tol = match rtol {
        Some(r) => r * smax,
        None => default_rank_tol(n, p, smax),
    };
    let r = d.rank(tol);
    if r >= n {
        return Err(LinalgError::Contract {
            op: "singular_inverse",
            msg: format!("matrix already has full row rank {n}; use pinv_right"),
        });
    }
    let mut aug = Matrix::zeros(n, p + n - r);
    aug.columns_mut(0, p).copy_from(bbar);
    aug.columns_mut(p, n - r).copy_from(&d.u.columns(r, n - r));
    let gram = &aug * aug.transpose();
    let pinv = aug.transpose() * spd_inverse(gram, "singular_inverse", n)?;
    Ok(pinv.rows(0, p).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_b() -> Matrix {
        Matrix::from_row_slice(
            3,
            5,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0,
            ],
        )
    }

    fn columns(b: &Matrix, idx: &[usize]) -> Matrix {
        b.select_columns(idx.iter())
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let diff = (a - b).amax();
        assert!(diff <= tol, "max diff {diff:e}\n{a}\n{b}");
    }

    #[test]
    fn svd_identity() {
        let d = svd(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(d.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
        for j in 0..3 {
            assert!((d.u.column(j).amax() - 1.0).abs() < 1e-15);
            assert!((d.v.column(j).amax() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn svd_diagonal_with_zero() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let d = svd(&m).unwrap();
        assert_eq!(d.singular_values.as_slice(), &[3.0, 0.0]);
        assert_close(&d.reconstruct(), &m, 1e-15);
        assert_close(&(d.u.transpose() * &d.u), &Matrix::identity(2, 2), 1e-15);
    }

    #[test]
    fn svd_sign_convention() {
        let m = Matrix::from_row_slice(2, 3, &[-1.0, 2.0, 0.5, 0.3, -4.0, 1.0]);
        let d = svd(&m).unwrap();
        for j in 0..2 {
            let col = d.u.column(j);
            let lead = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
        assert_close(&d.reconstruct(), &m, 1e-14);
    }

    #[test]
    fn svd_rejects_nan() {
        let m = Matrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert_eq!(svd(&m).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_with_tol(&Matrix::zeros(3, 4), None).unwrap(), 0);
        let b = paper_b();
        assert_eq!(rank_with_tol(&b, None).unwrap(), 3);
        assert_eq!(rank_with_tol(&columns(&b, &[0, 3, 4]), None).unwrap(), 2);
    }

    #[test]
    fn pinv_right_identity_and_example() {
        assert_close(&pinv_right(&Matrix::identity(3, 3)).unwrap(), &Matrix::identity(3, 3), 1e-15);
        let u = pinv_right(&paper_b()).unwrap() * Vector::from_vec(vec![1.4, 1.0, -1.0]);
        let expected = Vector::from_vec(vec![-1.0, 1.0, 1.0, 0.2, 0.2]);
        assert!((u - expected).amax() < 1e-12);
    }

    #[test]
    fn pinv_right_rejects_rank_deficient() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(pinv_right(&m), Err(LinalgError::Singular { rank: 1, .. })));
    }

    #[test]
    fn lsq_inverse_examples() {
        let e = Matrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert_close(&lsq_inverse(&e).unwrap(), &e.transpose(), 1e-15);

        let bf = columns(&paper_b(), &[0, 3]);
        let expected = Matrix::from_row_slice(2, 3, &[0.0, 0.5, 0.5, 1.0, -0.5, -0.5]);
        assert_close(&lsq_inverse(&bf).unwrap(), &expected, 1e-12);
    }

    #[test]
    fn lsq_inverse_rejects_dependent_columns() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(lsq_inverse(&m), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn null_space_of_row_vector() {
        let n = null_space(&Matrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((n[(0, 0)].abs() - s).abs() < 1e-15);
        assert!((n[(0, 0)] + n[(1, 0)]).abs() < 1e-15);
    }

    #[test]
    fn null_space_paper_b() {
        let b = paper_b();
        let n = null_space(&b).unwrap();
        assert_eq!(n.shape(), (5, 2));
        assert!((&b * &n).amax() < 1e-10);
        assert_close(&(n.transpose() * &n), &Matrix::identity(2, 2), 1e-10);
    }

    #[test]
    fn null_space_rank_deficient() {
        let b = Matrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(matches!(null_space(&b), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn singular_inverse_paper_free_block() {
        let bf = columns(&paper_b(), &[0, 3, 4]);
        let expected = Matrix::from_row_slice(
            3,
            3,
            &[0.0, 0.5, 0.5, 0.5, -0.25, -0.25, 0.5, -0.25, -0.25],
        );
        assert_close(&singular_inverse(&bf, None).unwrap(), &expected, 1e-12);
    }

    #[test]
    fn singular_inverse_zero_matrix() {
        let g = singular_inverse(&Matrix::zeros(3, 2), None).unwrap();
        assert_eq!(g.shape(), (2, 3));
        assert!(g.amax() == 0.0);
    }

    #[test]
    fn singular_inverse_rejects_full_rank() {
        let err = singular_inverse(&paper_b(), None).unwrap_err();
        assert!(matches!(err, LinalgError::Contract { .. }));
    }
}
