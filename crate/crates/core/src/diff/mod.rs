//! Scalar automatic differentiation.
//!
//! Two number types share the [`Scalar`] interface:
//!
//! * [`Var`] records every primitive on a [`Tape`] and yields exact reverse-mode
//!   gradients of a scalar output with respect to all recorded inputs.
//! * [`Tangent`] is a dual number carrying a primal value and one directional
//!   derivative. It is generic over its component type, so `Tangent<f64>` gives
//!   Jacobian-vector products and `Tangent<Var>` records the tangent arithmetic
//!   itself on the tape (forward-over-reverse).
//!
//! Model code is written once against [`Scalar`] and evaluated with whichever
//! number type the caller needs.

mod tangent;
mod tape;

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub use tangent::Tangent;
pub use tape::{Adjoints, Tape, Var};

/// Primitive that produced a tape node. Reported when a value goes non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Elu,
    Powi,
    /// Bias plus a sum of pairwise products (matrix-vector rows).
    SumProducts,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("non-finite value {value} produced by {op:?} at node {node}")]
    NonFinite { op: Op, node: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Number type that model code is generic over.
///
/// Mixed arithmetic with plain `f64` constants is supported on the right-hand
/// side; constants on the left go through [`Scalar::constant_like`].
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// Primal value.
    fn value(&self) -> f64;

    /// A constant of the same type (and on the same tape, for [`Var`]).
    fn constant_like(&self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    /// Exponential linear unit with unit slope parameter.
    fn elu(self) -> Self;
    /// Derivative of [`Scalar::elu`], itself differentiable.
    fn elu_prime(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// `bias + Σ a·b` recorded as one node where the type allows it.
    ///
    /// The iterator is cloned by nested number types, so it must be cheap to
    /// clone and must not touch the tape itself.
    fn sum_products<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone;

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }

    #[inline]
    fn constant_like(&self, c: f64) -> Self {
        c
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn elu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            f64::exp_m1(self)
        }
    }

    #[inline]
    fn elu_prime(self) -> Self {
        if self > 0.0 {
            1.0
        } else {
            f64::exp(self)
        }
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }

    #[inline]
    fn sum_products<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        terms.fold(bias, |acc, (a, b)| acc + a * b)
    }
}

/// Dot product `Σ a_k·b_k` over two slices of equal length.
pub fn dot<S: Scalar>(zero: S, a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    S::sum_products(zero, a.iter().copied().zip(b.iter().copied()))
}

/// Gradient of a scalar program at `inputs`.
///
/// The closure receives a fresh tape and one recorded input per entry of
/// `inputs`. Nested forward-mode work (a [`Tangent<Var>`] pass inside the
/// closure) is differentiated like any other recorded arithmetic.
pub fn reverse_gradient<F>(inputs: &[f64], program: F) -> Result<(f64, Vec<f64>), DiffError>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_capacity(inputs.len() * 8);
    let vars: Vec<Var<'_>> = inputs.iter().map(|&x| tape.input(x)).collect();
    let out = program(&tape, &vars);
    let adjoints = tape.gradient(out)?;
    Ok((out.value(), vars.iter().map(|v| adjoints.wrt(*v)).collect()))
}

/// Value and Jacobian-vector product `J(x)·direction` of a vector program.
pub fn forward_tangent<F>(
    input: &[f64],
    direction: &[f64],
    program: F,
) -> Result<(Vec<f64>, Vec<f64>), DiffError>
where
    F: FnOnce(&[Tangent<f64>]) -> Vec<Tangent<f64>>,
{
    if input.len() != direction.len() {
        return Err(DiffError::DimensionMismatch { expected: input.len(), actual: direction.len() });
    }
    let seeded: Vec<Tangent<f64>> =
        input.iter().zip(direction).map(|(&p, &t)| Tangent::new(p, t)).collect();
    let out = program(&seeded);
    let (values, jvp): (Vec<f64>, Vec<f64>) = out.iter().map(|t| (t.primal, t.tangent)).unzip();
    if let Some((node, &value)) = values.iter().chain(&jvp).enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DiffError::NonFinite { op: Op::Input, node, value });
    }
    Ok((values, jvp))
}

/// Value and full Jacobian (row-major, `outputs × inputs`) of a vector
/// program, one tangent pass per input coordinate.
///
/// Works for any component type, so with `S = Var` the Jacobian entries are
/// themselves recorded and can be differentiated again.
pub fn jacobian<S, F>(x: &[S], mut program: F) -> (Vec<S>, Vec<S>)
where
    S: Scalar,
    F: FnMut(&[Tangent<S>]) -> Vec<Tangent<S>>,
{
    let n = x.len();
    let mut value = Vec::new();
    let mut columns: Vec<Vec<S>> = Vec::with_capacity(n);
    for k in 0..n {
        let seeded: Vec<Tangent<S>> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| Tangent::new(xi, xi.constant_like(if i == k { 1.0 } else { 0.0 })))
            .collect();
        let out = program(&seeded);
        if k == 0 {
            value = out.iter().map(|t| t.primal).collect();
        }
        columns.push(out.iter().map(|t| t.tangent).collect());
    }
    let m = value.len();
    let mut jac = Vec::with_capacity(m * n);
    for i in 0..m {
        for col in &columns {
            jac.push(col[i]);
        }
    }
    (value, jac)
}
