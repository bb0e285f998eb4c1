//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::of(0.5);
    (m + m.transpose()) * half
}

/// Cholesky of `m`, retrying with `jitter·I`, `10·jitter·I`, ... when `m` is not
/// numerically positive definite.
pub fn cholesky_jittered<T: Scalar>(m: &DMatrix<T>, jitter: T) -> Option<Cholesky<T, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let n = m.nrows();
    let scale = (0..n)
        .map(|i| m[(i, i)].abs())
        .fold(T::one(), |a, b| if b > a { b } else { a });
    let mut eps = jitter * scale;
    for _ in 0..20 {
        let shifted = m + DMatrix::identity(n, n) * eps;
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        eps *= T::of(10.0);
    }
    None
}

pub fn cholesky_logdet<T: Scalar>(c: &Cholesky<T, Dyn>) -> T {
    let l = c.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln())
        * T::of(2.0)
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse_logdet<T: Scalar>(m: &DMatrix<T>, jitter: T) -> Option<(DMatrix<T>, T)> {
    let c = cholesky_jittered(m, jitter)?;
    let logdet = cholesky_logdet(&c);
    Some((symmetrize(&c.inverse()), logdet))
}

/// Lower-triangular `L` with `L Lᵀ = m` for a symmetric positive
/// semi-definite `m`. Zero (or slightly negative) pivots produce zero columns.
pub fn psd_lower_factor<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    let scale = (0..n)
        .map(|i| m[(i, i)].abs())
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let floor = scale * T::of(1e-14);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= floor {
            continue;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    l
}

/// `(XᵀX + λI)⁻¹ XᵀY`.
pub fn ridge_solve<T: Scalar>(x: &DMatrix<T>, y: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>> {
    let p = x.ncols();
    let xtx = x.transpose() * x + DMatrix::identity(p, p) * lambda;
    let xty = x.transpose() * y;
    let c = Cholesky::new(xtx).ok_or(Error::SingularDesign)?;
    Ok(c.solve(&xty))
}

pub fn mat_vec<T: Scalar>(m: &DMatrix<T>, v: &[T]) -> Vec<T> {
    let out = m * DVector::from_column_slice(v);
    out.iter().copied().collect()
}
