//! Unconstrained parameterization of Hurwitz matrices.
//!
//! Any triple of square matrices `(N, Q, R)` and `ε > 0` maps to
//!
//! ```text
//! A = (N Nᵀ + ε I)⁻¹ (−Q Qᵀ − ε I + ½ (R − Rᵀ))
//! ```
//!
//! which always has its spectrum in the open left half-plane, and every
//! Hurwitz matrix is reached this way as `ε → 0⁺`. Training can therefore
//! move `N`, `Q`, `R` freely without a projection step.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::Scalar;
use crate::linalg;

pub type Complex64 = Complex<f64>;

/// Default regularization of the parameterization.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HurwitzError {
    #[error("epsilon must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("factor shapes disagree: N is {n}×{n}, Q is {q}×{q}, R is {r}×{r}")]
    ShapeMismatch { n: usize, q: usize, r: usize },
    #[error("factor matrices must be square")]
    NotSquare,
    #[error("closed-form spectrum supports dimension ≤ 3, got {0}; use the lifted spectrum")]
    UnsupportedDimension(usize),
}

/// The free parameters behind a Hurwitz latent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HurwitzFactors {
    n: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    epsilon: f64,
}

impl HurwitzFactors {
    pub fn new(
        n: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        epsilon: f64,
    ) -> Result<Self, HurwitzError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(HurwitzError::NonPositiveEpsilon(epsilon));
        }
        if !n.is_square() || !q.is_square() || !r.is_square() {
            return Err(HurwitzError::NotSquare);
        }
        if n.nrows() != q.nrows() || n.nrows() != r.nrows() {
            return Err(HurwitzError::ShapeMismatch { n: n.nrows(), q: q.nrows(), r: r.nrows() });
        }
        Ok(Self { n, q, r, epsilon })
    }

    /// Factors assembling to `−I`: `N = Q = I`, `R = 0`.
    pub fn negative_identity(dim: usize, epsilon: f64) -> Result<Self, HurwitzError> {
        Self::new(
            DMatrix::identity(dim, dim),
            DMatrix::identity(dim, dim),
            DMatrix::zeros(dim, dim),
            epsilon,
        )
    }

    /// Independent standard-normal entries scaled by `std`.
    pub fn random<R: Rng + ?Sized>(dim: usize, std: f64, epsilon: f64, rng: &mut R) -> Self {
        let mut draw = || DMatrix::from_fn(dim, dim, |_, _| std * rng.sample::<f64, _>(StandardNormal));
        let (n, q, r) = (draw(), draw(), draw());
        Self { n, q, r, epsilon }
    }

    pub fn dim(&self) -> usize {
        self.n.nrows()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// The Hurwitz matrix these factors describe.
    pub fn assemble(&self) -> DMatrix<f64> {
        let dim = self.dim();
        if dim <= linalg::MAX_CLOSED_FORM_DIM {
            let out = assemble_with(
                &linalg::to_row_major(&self.n),
                &linalg::to_row_major(&self.q),
                &linalg::to_row_major(&self.r),
                dim,
                self.epsilon,
            );
            return DMatrix::from_row_slice(dim, dim, &out);
        }
        let eye = DMatrix::<f64>::identity(dim, dim);
        let x = &self.n * self.n.transpose() + &eye * self.epsilon;
        let rhs = -(&self.q * self.q.transpose()) - &eye * self.epsilon
            + (&self.r - self.r.transpose()) * 0.5;
        x.cholesky().expect("N Nᵀ + εI is positive definite").solve(&rhs)
    }
}

/// Differentiable assembly from row-major factor slices, `dim ≤ 3`.
///
/// The inverse of `N Nᵀ + εI` uses the adjugate formula so the whole map is a
/// fixed arithmetic expression in the factor entries.
pub fn assemble_with<S: Scalar>(n: &[S], q: &[S], r: &[S], dim: usize, epsilon: f64) -> Vec<S> {
    let mut x = linalg::gram(n, dim);
    let mut rhs = linalg::gram(q, dim);
    for i in 0..dim {
        x[i * dim + i] = x[i * dim + i] + epsilon;
        for j in 0..dim {
            let skew = (r[i * dim + j] - r[j * dim + i]) * 0.5;
            let neg = -rhs[i * dim + j] + skew;
            rhs[i * dim + j] = if i == j { neg - epsilon } else { neg };
        }
    }
    let x_inv = linalg::inverse(&x, dim, 0.0).expect("N Nᵀ + εI is positive definite");
    linalg::matmul(&x_inv, &rhs, dim, dim, dim)
}

/// Eigenvalues of a real matrix of dimension ≤ 3 from its characteristic
/// polynomial.
pub fn spectrum(m: &DMatrix<f64>) -> Result<Vec<Complex64>, HurwitzError> {
    if !m.is_square() {
        return Err(HurwitzError::NotSquare);
    }
    match m.nrows() {
        1 => Ok(vec![Complex64::new(m[(0, 0)], 0.0)]),
        2 => {
            let trace = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            Ok(quadratic_roots(-trace, det).to_vec())
        }
        3 => {
            let trace = m.trace();
            let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
                + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
                + m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
            let det = m.determinant();
            Ok(cubic_roots(-trace, minors, -det).to_vec())
        }
        d => Err(HurwitzError::UnsupportedDimension(d)),
    }
}

/// Largest real part over a set of eigenvalues.
pub fn max_real_part(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `‖(M − λI) v‖ / ‖v‖` for the null vector `v` built from cross products of
/// the rows of `M − λI`; small exactly when `λ` is an eigenvalue.
pub fn eigen_residual(m: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let d = m.nrows();
    let shifted = DMatrix::from_fn(d, d, |i, j| {
        Complex64::new(m[(i, j)], 0.0) - if i == j { lambda } else { Complex64::new(0.0, 0.0) }
    });
    let candidates: Vec<Vec<Complex64>> = match d {
        1 => vec![vec![Complex64::new(1.0, 0.0)]],
        2 => vec![
            vec![shifted[(0, 1)], -shifted[(0, 0)]],
            vec![shifted[(1, 1)], -shifted[(1, 0)]],
        ],
        3 => {
            let row = |i: usize| [shifted[(i, 0)], shifted[(i, 1)], shifted[(i, 2)]];
            let cross = |a: [Complex64; 3], b: [Complex64; 3]| {
                vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
            };
            vec![cross(row(0), row(1)), cross(row(0), row(2)), cross(row(1), row(2))]
        }
        _ => return f64::NAN,
    };
    let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let v = candidates
        .into_iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("at least one candidate");
    let vn = norm(&v);
    if vn == 0.0 {
        // Every row pair is parallel: M − λI has rank ≤ 1 and any vector
        // orthogonal to a nonzero row works.
        return 0.0;
    }
    let residual: Vec<Complex64> =
        (0..d).map(|i| (0..d).map(|j| shifted[(i, j)] * v[j]).sum()).collect();
    norm(&residual) / vn
}

/// Roots of `λ² + bλ + c`.
fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let half = -0.5 * b;
    let disc = half * half - c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Avoid cancellation: compute the larger-magnitude root first.
        let big = if half >= 0.0 { half + s } else { half - s };
        let small = if big != 0.0 { c / big } else { 0.0 };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(half, s), Complex64::new(half, -s)]
    }
}

/// Roots of `λ³ + aλ² + bλ + c`.
fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let t = if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 - q.signum() * s).cbrt();
        if u == 0.0 {
            0.0
        } else {
            u - p / (3.0 * u)
        }
    } else if p == 0.0 {
        0.0
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        2.0 * r * (arg.acos() / 3.0).cos()
    };
    let mut root = t - a / 3.0;
    for _ in 0..4 {
        let f = ((root + a) * root + b) * root + c;
        let df = (3.0 * root + 2.0 * a) * root + b;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        root -= step;
        if step.abs() <= f64::EPSILON * root.abs() {
            break;
        }
    }
    // Deflate: λ³ + aλ² + bλ + c = (λ − root)(λ² + (a + root)λ + (b + root(a + root))).
    let b2 = a + root;
    let c2 = b + root * b2;
    let [r1, r2] = quadratic_roots(b2, c2);
    [Complex64::new(root, 0.0), r1, r2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn zero_factors_give_negative_identity() {
        let z = DMatrix::zeros(2, 2);
        let f = HurwitzFactors::new(z.clone(), z.clone(), z, 1.0).unwrap();
        assert_eq!(f.assemble(), -DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn symmetric_r_gives_real_negative_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = HurwitzFactors::random(3, 1.0, 1e-3, &mut rng);
        f.r = &f.r + f.r.transpose();
        let a = f.assemble();
        let eye = DMatrix::<f64>::identity(3, 3);
        let x = f.n() * f.n().transpose() + &eye * f.epsilon();
        let y = f.q() * f.q().transpose() + &eye * f.epsilon();
        let expected = -x.try_inverse().unwrap() * y;
        assert!((&a - expected).amax() < 1e-10);
        for l in spectrum(&a).unwrap() {
            assert!(l.im.abs() < 1e-6 * l.re.abs().max(1.0), "{l}");
            assert!(l.re < 0.0);
        }
    }

    #[test]
    fn invalid_epsilon_rejected() {
        let z = DMatrix::zeros(2, 2);
        let err = HurwitzFactors::new(z.clone(), z.clone(), z, 0.0).unwrap_err();
        assert_eq!(err, HurwitzError::NonPositiveEpsilon(0.0));
    }

    #[test]
    fn spectrum_of_negative_identity() {
        let m = -DMatrix::<f64>::identity(2, 2);
        let eigs = spectrum(&m).unwrap();
        assert_eq!(eigs, vec![Complex64::new(-1.0, 0.0); 2]);
    }

    #[test]
    fn spectrum_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let eigs = sorted(spectrum(&m).unwrap());
        assert_eq!(eigs, vec![Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)]);
    }

    #[test]
    fn spectrum_rejects_large_dimension() {
        let m = DMatrix::<f64>::identity(4, 4);
        assert_eq!(spectrum(&m).unwrap_err(), HurwitzError::UnsupportedDimension(4));
    }

    #[test]
    fn roots_satisfy_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [2, 3] {
            for _ in 0..200 {
                let a = HurwitzFactors::random(dim, 1.0, DEFAULT_EPSILON, &mut rng).assemble();
                let ac = a.map(|v| Complex64::new(v, 0.0));
                for l in spectrum(&a).unwrap() {
                    let shifted = &ac - DMatrix::<Complex64>::identity(dim, dim) * l;
                    let scale = a.norm().max(1.0).powi(dim as i32);
                    assert!(shifted.determinant().norm() < 1e-9 * scale);
                    assert!(eigen_residual(&a, l) < 1e-8 * a.norm().max(1.0));
                    assert!(l.re < 0.0);
                }
            }
        }
    }

    #[test]
    fn matches_schur_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = HurwitzFactors::random(3, 1.0, DEFAULT_EPSILON, &mut rng).assemble();
            let ours = sorted(spectrum(&a).unwrap());
            let reference = sorted(a.complex_eigenvalues().iter().copied().collect());
            for (x, y) in ours.iter().zip(&reference) {
                assert!((x - y).norm() < 1e-8 * a.norm().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn epsilon_to_zero_approaches_imaginary_axis() {
        // With N = Q = 0 and skew R, Ā = −I + S/ε: the real part stays at −1
        // while the imaginary part grows, so the eigenvalues approach the
        // imaginary axis in angle.
        let z = DMatrix::zeros(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let mut last = f64::NEG_INFINITY;
        for eps in [1.0, 1e-1, 1e-2, 1e-3, 1e-4] {
            let f = HurwitzFactors::new(z.clone(), z.clone(), r.clone(), eps).unwrap();
            let eigs = spectrum(&f.assemble()).unwrap();
            let ratio = eigs.iter().map(|l| l.re / l.norm()).fold(f64::NEG_INFINITY, f64::max);
            assert!(max_real_part(&eigs) < 0.0);
            assert!(ratio > last);
            last = ratio;
        }
        assert!(last > -1e-4);
    }

    #[test]
    fn epsilon_to_zero_with_unit_n_moves_real_parts_to_zero() {
        // N = I, Q = 0: Ā = (S − εI)/(1 + ε), real parts −ε/(1 + ε).
        let n = DMatrix::identity(2, 2);
        let z = DMatrix::zeros(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let mut last = f64::NEG_INFINITY;
        for eps in [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6] {
            let f = HurwitzFactors::new(n.clone(), z.clone(), r.clone(), eps).unwrap();
            let m = max_real_part(&spectrum(&f.assemble()).unwrap());
            assert!(m < 0.0 && m > last);
            assert!((m + eps / (1.0 + eps)).abs() < 1e-12);
            last = m;
        }
        assert!(last > -1e-5);
    }

    #[test]
    fn large_dimension_assembly_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = HurwitzFactors::random(6, 1.0, DEFAULT_EPSILON, &mut rng).assemble();
        let eigs: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
        assert!(max_real_part(&eigs) < 0.0);
    }

    #[test]
    fn assembly_gradient_matches_finite_differences() {
        use crate::diff::reverse_gradient;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = HurwitzFactors::random(2, 1.0, 1e-2, &mut rng);
        let mut flat = linalg::to_row_major(f.n());
        flat.extend(linalg::to_row_major(f.q()));
        flat.extend(linalg::to_row_major(f.r()));
        for entry in 0..4 {
            let eval = |p: &[f64]| assemble_with(&p[0..4], &p[4..8], &p[8..12], 2, 1e-2)[entry];
            let (_, grad) = reverse_gradient(&flat, |_, v| {
                assemble_with(&v[0..4], &v[4..8], &v[8..12], 2, 1e-2)[entry]
            })
            .unwrap();
            for k in 0..flat.len() {
                let h = 1e-6;
                let mut up = flat.clone();
                let mut down = flat.clone();
                up[k] += h;
                down[k] -= h;
                let fd = (eval(&up) - eval(&down)) / (2.0 * h);
                let denom = grad[k].abs().max(fd.abs()).max(1e-6);
                assert!((grad[k] - fd).abs() / denom < 1e-4, "entry {entry} param {k}");
            }
        }
    }
}
