//! Monomial lifting of a latent linear system.
//!
//! If `ẏ = A y`, every monomial `y^α` obeys
//! `d/dt y^α = Σ_{i,j} α_i A_ij y^{α − e_i + e_j}`, which stays within monomials
//! of the same total order. Stacking all monomials with `1 ≤ |α|₁ ≤ p̄` gives a
//! `D`-dimensional linear system with a block-diagonal transition matrix whose
//! eigenvalues are the sums `Σ α_i λ_i`.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::diff::Scalar;
use crate::hurwitz::Complex64;

/// Largest lifted dimension accepted by [`MultiIndexBasis::enumerate`].
pub const MAX_LIFT_DIM: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonomialError {
    #[error("state dimension and order must both be at least 1 (got d={dim}, p̄={order})")]
    Empty { dim: usize, order: usize },
    #[error("lifted dimension for d={dim}, p̄={order} exceeds {MAX_LIFT_DIM}")]
    TooLarge { dim: usize, order: usize },
}

/// One nonzero contribution `coef · A[i][j]` to entry `(row, col)` of the
/// lifted matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftTerm {
    pub row: usize,
    pub col: usize,
    pub i: usize,
    pub j: usize,
    pub coef: u32,
}

/// Ordered multi-indices `α ∈ ℕ₀^d` with `1 ≤ |α|₁ ≤ p̄`.
///
/// Grouped by total order ascending; within an order, lexicographically
/// descending, so the first `d` entries are the unit indices `e_1 … e_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexBasis {
    dim: usize,
    max_order: usize,
    indices: Vec<Vec<u32>>,
    /// For non-unit monomials, `(k, i)` such that `y^α = y^{α_k} · y_i`.
    recursion: Vec<(usize, usize)>,
    blocks: Vec<Range<usize>>,
    terms: Vec<LiftTerm>,
}

/// `(d + p̄ choose d) − 1`, or `None` when it exceeds [`MAX_LIFT_DIM`].
pub fn lifted_dimension(dim: usize, order: usize) -> Option<usize> {
    // C(p̄ + k, k) = C(p̄ + k − 1, k − 1)·(p̄ + k)/k is exact at every step.
    let mut c: u128 = 1;
    for k in 1..=dim as u128 {
        c = c.checked_mul(order as u128 + k)? / k;
    }
    let d = usize::try_from(c - 1).ok()?;
    (d <= MAX_LIFT_DIM).then_some(d)
}

impl MultiIndexBasis {
    pub fn enumerate(dim: usize, max_order: usize) -> Result<Self, MonomialError> {
        if dim == 0 || max_order == 0 {
            return Err(MonomialError::Empty { dim, order: max_order });
        }
        let total = lifted_dimension(dim, max_order)
            .ok_or(MonomialError::TooLarge { dim, order: max_order })?;

        let mut indices = Vec::with_capacity(total);
        let mut blocks = Vec::with_capacity(max_order);
        for order in 1..=max_order {
            let start = indices.len();
            let mut current = vec![0u32; dim];
            push_descending(&mut indices, &mut current, 0, order as u32);
            blocks.push(start..indices.len());
        }
        debug_assert_eq!(indices.len(), total);

        let position: HashMap<&[u32], usize> =
            indices.iter().enumerate().map(|(k, a)| (a.as_slice(), k)).collect();

        let mut recursion = Vec::with_capacity(indices.len());
        for (k, alpha) in indices.iter().enumerate() {
            if k < dim {
                recursion.push((k, k));
                continue;
            }
            let i = alpha.iter().position(|&a| a > 0).expect("order ≥ 1");
            let mut parent = alpha.clone();
            parent[i] -= 1;
            recursion.push((position[parent.as_slice()], i));
        }

        let mut terms = Vec::new();
        for (row, alpha) in indices.iter().enumerate() {
            for i in 0..dim {
                if alpha[i] == 0 {
                    continue;
                }
                for j in 0..dim {
                    let mut beta = alpha.clone();
                    beta[i] -= 1;
                    beta[j] += 1;
                    let col = position[beta.as_slice()];
                    terms.push(LiftTerm { row, col, i, j, coef: alpha[i] });
                }
            }
        }

        Ok(Self { dim, max_order, indices, recursion, blocks, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Lifted dimension `D`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Index ranges of the order-`p` blocks, `p = 1..=p̄`.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn terms(&self) -> &[LiftTerm] {
        &self.terms
    }

    /// `ρ(y)`: every monomial `y^α` in basis order, one multiplication each.
    pub fn lift<S: Scalar>(&self, y: &[S]) -> Vec<S> {
        assert_eq!(y.len(), self.dim, "lift: state length does not match basis");
        let mut z: Vec<S> = Vec::with_capacity(self.len());
        z.extend_from_slice(y);
        for &(parent, i) in &self.recursion[self.dim..] {
            let v = z[parent] * y[i];
            z.push(v);
        }
        z
    }

    /// `J_ρ(y)` as a `D × d` matrix with entries `α_i y^{α − e_i}`.
    pub fn lift_jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        assert_eq!(y.len(), self.dim, "lift_jacobian: state length does not match basis");
        DMatrix::from_fn(self.len(), self.dim, |k, i| {
            let alpha = &self.indices[k];
            if alpha[i] == 0 {
                return 0.0;
            }
            let mut v = f64::from(alpha[i]);
            for (l, &a) in alpha.iter().enumerate() {
                let p = if l == i { a - 1 } else { a };
                v *= y[l].powi(p as i32);
            }
            v
        })
    }

    /// Dense `A_[p̄](A)`.
    pub fn lifted_matrix(&self, a: &DMatrix<f64>) -> LiftedMatrix {
        assert_eq!(a.shape(), (self.dim, self.dim), "lifted_matrix: latent matrix shape");
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for t in &self.terms {
            m[(t.row, t.col)] += f64::from(t.coef) * a[(t.i, t.j)];
        }
        LiftedMatrix { matrix: m, blocks: self.blocks.clone() }
    }

    /// `A_[p̄](A) · z` without forming the dense matrix. `a` is row-major.
    pub fn apply_lifted<S: Scalar>(&self, a: &[S], z: &[S]) -> Vec<S> {
        self.apply_lifted_scaled(&self.scaled_latent(a), z)
    }

    /// Copies `m·A` for `m = 1..=p̄`, the only coefficients the lifted matrix
    /// uses. Computed once and shared by many [`Self::apply_lifted_scaled`] calls.
    pub fn scaled_latent<S: Scalar>(&self, a: &[S]) -> Vec<S> {
        assert_eq!(a.len(), self.dim * self.dim);
        (1..=self.max_order)
            .flat_map(|m| a.iter().map(move |&v| if m == 1 { v } else { v * m as f64 }))
            .collect()
    }

    /// `A_[p̄](A) · z` given the table from [`Self::scaled_latent`].
    pub fn apply_lifted_scaled<S: Scalar>(&self, scaled: &[S], z: &[S]) -> Vec<S> {
        assert_eq!(z.len(), self.len());
        let d2 = self.dim * self.dim;
        let zero = z[0].constant_like(0.0);
        let mut out = Vec::with_capacity(self.len());
        let mut start = 0;
        while start < self.terms.len() {
            let row = self.terms[start].row;
            let end = start + self.terms[start..].iter().take_while(|t| t.row == row).count();
            debug_assert_eq!(row, out.len());
            let v = S::sum_products(
                zero,
                self.terms[start..end]
                    .iter()
                    .map(|t| (scaled[(t.coef as usize - 1) * d2 + t.i * self.dim + t.j], z[t.col])),
            );
            out.push(v);
            start = end;
        }
        out
    }

    /// `M · A_[p̄](A)` for a row-major `rows × D` matrix `m`, given the table
    /// from [`Self::scaled_latent`]. Returns a row-major `rows × D` matrix.
    pub fn premultiply_lifted<S: Scalar>(&self, m: &[S], rows: usize, scaled: &[S]) -> Vec<S> {
        let n = self.len();
        assert_eq!(m.len(), rows * n);
        let d2 = self.dim * self.dim;
        let mut by_col: Vec<Vec<&LiftTerm>> = vec![Vec::new(); n];
        for t in &self.terms {
            by_col[t.col].push(t);
        }
        let zero = scaled[0].constant_like(0.0);
        let mut out = Vec::with_capacity(rows * n);
        for r in 0..rows {
            for terms in &by_col {
                out.push(S::sum_products(
                    zero,
                    terms
                        .iter()
                        .map(|t| (m[r * n + t.row], scaled[(t.coef as usize - 1) * d2 + t.i * self.dim + t.j])),
                ));
            }
        }
        out
    }

    /// Eigenvalues of the lifted matrix from those of the latent one:
    /// `{Σ α_i λ_i}` over the basis.
    pub fn lifted_spectrum(&self, eigs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(eigs.len(), self.dim);
        self.indices
            .iter()
            .map(|alpha| alpha.iter().zip(eigs).map(|(&a, &l)| l * f64::from(a)).sum())
            .collect()
    }
}

fn push_descending(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for a in (0..=remaining).rev() {
        current[pos] = a;
        push_descending(out, current, pos + 1, remaining - a);
    }
    current[pos] = 0;
}

/// The lifted transition matrix together with its diagonal block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    pub matrix: DMatrix<f64>,
    pub blocks: Vec<Range<usize>>,
}

impl LiftedMatrix {
    pub fn block(&self, p: usize) -> DMatrix<f64> {
        let r = &self.blocks[p - 1];
        self.matrix.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent evaluator: direct products of powers.
    fn monomial(alpha: &[u32], y: &[f64]) -> f64 {
        alpha.iter().zip(y).map(|(&a, &v)| v.powi(a as i32)).product()
    }

    fn brute_force_count(dim: usize, order: usize) -> usize {
        // Count all α in {0..=p̄}^d with 1 ≤ |α| ≤ p̄.
        let mut count = 0;
        let base = order + 1;
        for code in 0..base.pow(dim as u32) {
            let mut c = code;
            let mut sum = 0;
            for _ in 0..dim {
                sum += c % base;
                c /= base;
            }
            if (1..=order).contains(&sum) {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn identity_lift() {
        let b = MultiIndexBasis::enumerate(2, 1).unwrap();
        assert_eq!(b.indices(), &[vec![1, 0], vec![0, 1]]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn forty_four_coordinates_at_order_eight() {
        assert_eq!(MultiIndexBasis::enumerate(2, 8).unwrap().len(), 44);
    }

    #[test]
    fn three_dim_order_two() {
        let b = MultiIndexBasis::enumerate(3, 2).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(brute_force_count(3, 2), 9);
        assert_eq!(&b.indices()[3..], &[
            vec![2, 0, 0],
            vec![1, 1, 0],
            vec![1, 0, 1],
            vec![0, 2, 0],
            vec![0, 1, 1],
            vec![0, 0, 2]
        ]);
    }

    #[test]
    fn count_identity_matches_brute_force() {
        for dim in 1..=4 {
            for order in 1..=10 {
                let b = MultiIndexBasis::enumerate(dim, order).unwrap();
                assert_eq!(b.len(), brute_force_count(dim, order), "d={dim} p={order}");
                let unique: std::collections::HashSet<_> = b.indices().iter().collect();
                assert_eq!(unique.len(), b.len());
                for i in 0..dim {
                    assert_eq!(b.indices()[i].iter().sum::<u32>(), 1);
                    assert_eq!(b.indices()[i][i], 1);
                }
            }
        }
    }

    #[test]
    fn oversized_basis_rejected() {
        assert!(matches!(MultiIndexBasis::enumerate(10, 30), Err(MonomialError::TooLarge { .. })));
        assert!(matches!(MultiIndexBasis::enumerate(0, 3), Err(MonomialError::Empty { .. })));
    }

    #[test]
    fn lift_examples() {
        let b = MultiIndexBasis::enumerate(2, 2).unwrap();
        assert_eq!(b.lift(&[0.0, 0.0]), vec![0.0; 5]);
        assert_eq!(b.lift(&[2.0, 3.0]), vec![2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn lift_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let b = MultiIndexBasis::enumerate(dim, 5).unwrap();
            let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let z = b.lift(&y);
            for (alpha, zk) in b.indices().iter().zip(&z) {
                let direct = monomial(alpha, &y);
                assert!((zk - direct).abs() <= 1e-13 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn jacobian_scalar_case() {
        let b = MultiIndexBasis::enumerate(1, 3).unwrap();
        let j = b.lift_jacobian(&[2.0]);
        assert_eq!(j.as_slice(), &[1.0, 4.0, 12.0]);
    }

    #[test]
    fn jacobian_top_block_is_identity_and_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = MultiIndexBasis::enumerate(3, 4).unwrap();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j = b.lift_jacobian(&y);
        assert_eq!(j.view((0, 0), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        let h = 1e-6;
        for i in 0..3 {
            let mut up = y.clone();
            let mut down = y.clone();
            up[i] += h;
            down[i] -= h;
            let (zu, zd) = (b.lift(&up), b.lift(&down));
            for k in 0..b.len() {
                assert!((j[(k, i)] - (zu[k] - zd[k]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scalar_lifted_matrix_is_diagonal() {
        let b = MultiIndexBasis::enumerate(1, 3).unwrap();
        let a = DMatrix::from_element(1, 1, -0.75);
        let l = b.lifted_matrix(&a);
        assert_eq!(l.matrix, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-0.75, -1.5, -2.25])));
    }

    #[test]
    fn diagonal_latent_spectrum() {
        let b = MultiIndexBasis::enumerate(2, 2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.5]);
        let l = b.lifted_matrix(&a);
        let mut eigs: Vec<f64> = l.matrix.complex_eigenvalues().iter().map(|c| c.re).collect();
        eigs.sort_by(f64::total_cmp);
        let mut expected = vec![-1.0, -2.5, -2.0, -3.5, -5.0];
        expected.sort_by(f64::total_cmp);
        for (x, y) in eigs.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lifted_matrix_is_block_diagonal_with_latent_leading_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = MultiIndexBasis::enumerate(3, 3).unwrap();
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let l = b.lifted_matrix(&a);
        assert_eq!(l.block(1), a);
        for (r, alpha) in b.indices().iter().enumerate() {
            for (c, beta) in b.indices().iter().enumerate() {
                let same = alpha.iter().sum::<u32>() == beta.iter().sum::<u32>();
                if !same {
                    assert_eq!(l.matrix[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn sparse_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = MultiIndexBasis::enumerate(2, 6).unwrap();
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let z: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = b.lifted_matrix(&a).matrix * nalgebra::DVector::from_vec(z.clone());
        let sparse = b.apply_lifted(&crate::linalg::to_row_major(&a), &z);
        for (x, y) in dense.iter().zip(&sparse) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn lifted_spectrum_examples() {
        let c = |re: f64| Complex64::new(re, 0.0);
        let b1 = MultiIndexBasis::enumerate(1, 3).unwrap();
        assert_eq!(b1.lifted_spectrum(&[c(-1.0)]), vec![c(-1.0), c(-2.0), c(-3.0)]);
        let b2 = MultiIndexBasis::enumerate(2, 2).unwrap();
        assert_eq!(
            b2.lifted_spectrum(&[c(-1.0), c(-2.0)]),
            vec![c(-1.0), c(-2.0), c(-2.0), c(-3.0), c(-4.0)]
        );
    }

    #[test]
    fn premultiply_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let basis = MultiIndexBasis::enumerate(2, 4).unwrap();
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..2 * basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = basis.premultiply_lifted(&m, 2, &basis.scaled_latent(&a));
        let dense = DMatrix::from_row_slice(2, basis.len(), &m)
            * basis.lifted_matrix(&DMatrix::from_row_slice(2, 2, &a)).matrix;
        for (g, e) in got.iter().zip(crate::linalg::to_row_major(&dense)) {
            assert!((g - e).abs() < 1e-13);
        }
    }
}
