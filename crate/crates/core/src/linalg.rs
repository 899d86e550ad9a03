//! Dense helpers over row-major `Vec<f64>` tables, backed by nalgebra for
//! factorizations.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};

/// Solves `a x = b` for a row-major square `a`.
pub fn solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let m = DMatrix::from_row_slice(n, n, a);
    let lu = m.lu();
    let x = lu.solve(&DVector::from_column_slice(b)).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x.as_slice().to_vec())
}

/// Solves `aᵀ x = b` for a row-major square `a`.
pub fn solve_transposed(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut t = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    solve(&t, b)
}

/// Moduli of all eigenvalues of a row-major square matrix, sorted descending.
pub fn eigenvalue_moduli(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let mut out: Vec<f64> = m.complex_eigenvalues().iter().map(|z| Float::sqrt(z.re * z.re + z.im * z.im)).collect();
    out.sort_by(|x, y| y.total_cmp(x));
    out
}

/// Second-largest eigenvalue modulus of a stochastic matrix: one eigenvalue
/// closest to 1 is removed and the largest remaining modulus returned.
pub fn second_eigen_modulus(a: &[f64], n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = m.complex_eigenvalues();
    let mut unit = 0;
    let mut best = f64::INFINITY;
    for (k, z) in eig.iter().enumerate() {
        let dist = Float::sqrt((z.re - 1.0) * (z.re - 1.0) + z.im * z.im);
        if dist < best {
            best = dist;
            unit = k;
        }
    }
    eig.iter()
        .enumerate()
        .filter(|(k, _)| *k != unit)
        .map(|(_, z)| Float::sqrt(z.re * z.re + z.im * z.im))
        .fold(0.0, f64::max)
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    Float::sqrt(dot(x, x))
}

pub fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| Float::abs(*v)).sum()
}

pub fn dist2(x: &[f64], y: &[f64]) -> f64 {
    Float::sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Removes the all-ones component: the orthogonal projection onto
/// `{δ : Σδ = 0}`.
pub fn tangent(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// `true` when `x` is nonnegative and sums to one, both within `tol`.
pub fn is_distribution(x: &[f64], tol: f64) -> bool {
    x.iter().all(|&v| v >= -tol && v.is_finite()) && Float::abs(x.iter().sum::<f64>() - 1.0) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a = [4.0, 1.0, 2.0, 3.0];
        let x = solve(&a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        let y = solve_transposed(&a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * y[0] + 2.0 * y[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        assert_eq!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]), Err(Error::SingularSystem));
    }

    #[test]
    fn slem_of_switching_chain() {
        // eigenvalues 1 and 1 - 2p
        let p = 0.3;
        let m = [1.0 - p, p, p, 1.0 - p];
        assert!((second_eigen_modulus(&m, 2) - 0.4).abs() < 1e-12);
    }
}
