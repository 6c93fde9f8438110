//! Small dense helpers shared by the differentiable model code.
//!
//! Matrices here are row-major slices so they can hold any [`Scalar`]. Only
//! dimensions up to three are supported by the closed-form routines.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diff::Scalar;

/// Largest state dimension handled by the closed-form inverse.
pub const MAX_CLOSED_FORM_DIM: usize = 3;

/// Determinant of a `dim × dim` row-major matrix, `dim ≤ 3`.
pub fn det<S: Scalar>(m: &[S], dim: usize) -> S {
    debug_assert_eq!(m.len(), dim * dim);
    match dim {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            let c0 = m[4] * m[8] - m[5] * m[7];
            let c1 = m[5] * m[6] - m[3] * m[8];
            let c2 = m[3] * m[7] - m[4] * m[6];
            m[0] * c0 + m[1] * c1 + m[2] * c2
        }
        _ => panic!("closed-form determinant supports dim ≤ 3, got {dim}"),
    }
}

/// Adjugate (transposed cofactor matrix) of a `dim × dim` row-major matrix.
pub fn adjugate<S: Scalar>(m: &[S], dim: usize) -> Vec<S> {
    debug_assert_eq!(m.len(), dim * dim);
    match dim {
        1 => vec![m[0].constant_like(1.0)],
        2 => vec![m[3], -m[1], -m[2], m[0]],
        3 => {
            let c = |r0: usize, c0: usize, r1: usize, c1: usize| {
                m[r0 * 3 + c0] * m[r1 * 3 + c1] - m[r0 * 3 + c1] * m[r1 * 3 + c0]
            };
            vec![
                c(1, 1, 2, 2),
                c(0, 2, 2, 1),
                c(0, 1, 1, 2),
                c(1, 2, 2, 0),
                c(0, 0, 2, 2),
                c(0, 2, 1, 0),
                c(1, 0, 2, 1),
                c(0, 1, 2, 0),
                c(0, 0, 1, 1),
            ]
        }
        _ => panic!("closed-form adjugate supports dim ≤ 3, got {dim}"),
    }
}

/// Inverse via the adjugate formula. Returns `None` when `|det| < min_det`.
pub fn inverse<S: Scalar>(m: &[S], dim: usize, min_det: f64) -> Option<Vec<S>> {
    let det = det(m, dim);
    if det.value().abs() < min_det || !det.value().is_finite() {
        return None;
    }
    Some(adjugate(m, dim).into_iter().map(|a| a / det).collect())
}

/// Row-major product of `a` (`n × k`) and `b` (`k × m`).
pub fn matmul<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let zero = a[0].constant_like(0.0);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            out.push(S::sum_products(zero, (0..k).map(|l| (a[i * k + l], b[l * m + j]))));
        }
    }
    out
}

/// `a · aᵀ` for a square row-major matrix.
pub fn gram<S: Scalar>(a: &[S], dim: usize) -> Vec<S> {
    let zero = a[0].constant_like(0.0);
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.push(S::sum_products(zero, (0..dim).map(|l| (a[i * dim + l], a[j * dim + l]))));
        }
    }
    out
}

/// Row-major matrix-vector product.
pub fn matvec<S: Scalar>(m: &[S], x: &[S], rows: usize) -> Vec<S> {
    let cols = x.len();
    debug_assert_eq!(m.len(), rows * cols);
    let zero = x[0].constant_like(0.0);
    (0..rows)
        .map(|i| S::sum_products(zero, m[i * cols..(i + 1) * cols].iter().copied().zip(x.iter().copied())))
        .collect()
}

/// Row-major copy of a dense matrix.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// JSON form of a dense matrix: explicit shape and row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    /// The dense matrix, or `None` if `data` does not match the shape.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.data.len() == self.rows * self.cols).then(|| DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: to_row_major(m) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_3x3_matches_nalgebra() {
        let m = [2.0, -1.0, 0.5, 0.3, 1.7, -0.2, 0.1, 0.4, 3.0];
        let inv = inverse(&m, 3, 1e-12).unwrap();
        let reference = DMatrix::from_row_slice(3, 3, &m).try_inverse().unwrap();
        for (a, b) in inv.iter().zip(to_row_major(&reference)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_rejected() {
        assert!(inverse(&[1.0, 2.0, 2.0, 4.0], 2, 1e-12).is_none());
    }

    #[test]
    fn gram_is_symmetric() {
        let a = [1.0, 2.0, -3.0, 0.5];
        let g = gram(&a, 2);
        assert_eq!(g, vec![5.0, -2.0, -2.0, 9.25]);
    }
}
