//! Small dense helpers on flat column-major slices, plus thin wrappers over
//! nalgebra for factorizations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `out = A x` for square column-major `A`.
#[inline]
pub fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    out[..d].iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate().take(d) {
        if xj == 0.0 {
            continue;
        }
        let col = &a[j * d..(j + 1) * d];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

/// `out = Aᵀ x` for square column-major `A`.
#[inline]
pub fn mat_t_vec(a: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    for (j, o) in out.iter_mut().enumerate().take(d) {
        *o = dot(&a[j * d..(j + 1) * d], x);
    }
}

/// `out = A B` for square column-major matrices.
#[inline]
pub fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for j in 0..d {
        let oc = &mut out[j * d..(j + 1) * d];
        oc.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..d {
            let bkj = b[k + j * d];
            if bkj == 0.0 {
                continue;
            }
            for (o, &aik) in oc.iter_mut().zip(&a[k * d..(k + 1) * d]) {
                *o += aik * bkj;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Largest `|E_ij − E_ji|`.
pub fn max_asymmetry(e: &[f64], d: usize) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..d {
        for i in 0..j {
            m = m.max((e[i + j * d] - e[j + i * d]).abs());
        }
    }
    m
}

/// Replace `E` by `(E + Eᵀ)/2`.
pub fn symmetrize(e: &mut [f64], d: usize) {
    for j in 0..d {
        for i in 0..j {
            let v = 0.5 * (e[i + j * d] + e[j + i * d]);
            e[i + j * d] = v;
            e[j + i * d] = v;
        }
    }
}

pub fn to_dmatrix(a: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, a)
}

/// Inverse of a square column-major matrix.
pub fn invert(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let m = to_dmatrix(a, d, d);
    m.try_inverse()
        .map(|inv| inv.as_slice().to_vec())
        .ok_or_else(|| Error::Singular(format!("{d}×{d} matrix is not invertible")))
}

/// Solve `M x = b` for symmetric positive definite `M`, falling back to LU.
pub fn solve_spd(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("normal matrix is singular".into()))
}

/// Reciprocal condition estimate from the symmetric eigenvalues.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products() {
        // A = [[1,2],[3,4]] column-major
        let a = [1.0, 3.0, 2.0, 4.0];
        let mut out = [0.0; 2];
        mat_vec(&a, &[1.0, 1.0], &mut out, 2);
        assert_eq!(out, [3.0, 7.0]);
        mat_t_vec(&a, &[1.0, 1.0], &mut out, 2);
        assert_eq!(out, [4.0, 6.0]);
        let mut ab = [0.0; 4];
        mat_mul(&a, &a, &mut ab, 2);
        assert_eq!(ab, [7.0, 15.0, 10.0, 22.0]);
        let inv = invert(&a, 2).unwrap();
        mat_mul(&a, &inv, &mut ab, 2);
        for (x, y) in ab.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetry_helpers() {
        let mut e = [1.0, 2.0, 4.0, 5.0];
        assert_eq!(max_asymmetry(&e, 2), 2.0);
        symmetrize(&mut e, 2);
        assert_eq!(e, [1.0, 3.0, 3.0, 5.0]);
    }
}
