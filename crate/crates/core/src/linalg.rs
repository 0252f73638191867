//! Thin wrapper around LAPACK's dense LU routines (dgetrf/dgetrs).
//!
//! Everything in this crate solves square systems of the form
//! `(I - gamma T) x = b`, which for `gamma < 1` and stochastic `T` is
//! strictly diagonally dominant enough to be nonsingular, so a reported
//! singular factor signals corrupted input rather than an expected state.

use crate::{Error, Result};

/// LU factorization with partial pivoting of a square matrix.
///
/// Stores the factors column-major as LAPACK expects; one factorization
/// serves both `A x = b` and `A^T x = b` solves.
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    ipiv: Vec<i32>,
}

impl LuFactor {
    /// Factor a row-major `n x n` matrix given as a flat slice.
    pub fn factor(a_row_major: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a_row_major.len(), n * n);
        let mut lu = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                lu[j * n + i] = a_row_major[i * n + j];
            }
        }
        let mut ipiv = vec![0i32; n];
        let mut info = 0i32;
        let ni = n as i32;
        unsafe {
            lapack_sys::dgetrf_(&ni, &ni, lu.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), &mut info);
        }
        if info != 0 {
            return Err(Error::Numerical(format!(
                "LU factorization failed (dgetrf info = {info}); input matrix is singular or corrupted"
            )));
        }
        Ok(Self { n, lu, ipiv })
    }

    fn getrs(&self, trans: u8, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let ni = self.n as i32;
        let one = 1i32;
        let mut info = 0i32;
        unsafe {
            lapack_sys::dgetrs_(
                &(trans as std::os::raw::c_char),
                &ni,
                &one,
                self.lu.as_ptr(),
                &ni,
                self.ipiv.as_ptr(),
                x.as_mut_ptr(),
                &ni,
                &mut info,
            );
        }
        if info != 0 {
            return Err(Error::Numerical(format!("dgetrs failed (info = {info})")));
        }
        Ok(x)
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.getrs(b'N', b)
    }

    /// Solve `A^T x = b`.
    pub fn solve_transposed(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.getrs(b'T', b)
    }
}
