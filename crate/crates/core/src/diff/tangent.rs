use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Dual number: a primal value and one directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent<T> {
    pub primal: T,
    pub tangent: T,
}

impl<T: Scalar> Tangent<T> {
    pub fn new(primal: T, tangent: T) -> Self {
        Self { primal, tangent }
    }

    /// Lifts a value that does not vary along the seeded direction.
    pub fn constant(primal: T) -> Self {
        Self { primal, tangent: primal.constant_like(0.0) }
    }
}

impl<T: Scalar> Add for Tangent<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl<T: Scalar> Sub for Tangent<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl<T: Scalar> Mul for Tangent<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let zero = self.primal.constant_like(0.0);
        let tangent = T::sum_products(
            zero,
            [(self.tangent, rhs.primal), (self.primal, rhs.tangent)].into_iter(),
        );
        Self::new(self.primal * rhs.primal, tangent)
    }
}

impl<T: Scalar> Div for Tangent<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.primal / rhs.primal;
        Self::new(q, (self.tangent - q * rhs.tangent) / rhs.primal)
    }
}

impl<T: Scalar> Neg for Tangent<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.primal, -self.tangent)
    }
}

impl<T: Scalar> Add<f64> for Tangent<T> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.primal + rhs, self.tangent)
    }
}

impl<T: Scalar> Sub<f64> for Tangent<T> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        Self::new(self.primal - rhs, self.tangent)
    }
}

impl<T: Scalar> Mul<f64> for Tangent<T> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.primal * rhs, self.tangent * rhs)
    }
}

impl<T: Scalar> Scalar for Tangent<T> {
    #[inline]
    fn value(&self) -> f64 {
        self.primal.value()
    }

    fn constant_like(&self, c: f64) -> Self {
        Self::constant(self.primal.constant_like(c))
    }

    fn exp(self) -> Self {
        let e = self.primal.exp();
        Self::new(e, e * self.tangent)
    }

    fn ln(self) -> Self {
        Self::new(self.primal.ln(), self.tangent / self.primal)
    }

    fn tanh(self) -> Self {
        let th = self.primal.tanh();
        // (1 - th²)·t
        Self::new(th, self.tangent - th * th * self.tangent)
    }

    fn elu(self) -> Self {
        Self::new(self.primal.elu(), self.primal.elu_prime() * self.tangent)
    }

    fn elu_prime(self) -> Self {
        if self.primal.value() > 0.0 {
            self.constant_like(1.0)
        } else {
            self.exp()
        }
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return self.constant_like(1.0);
        }
        let lower = self.primal.powi(n - 1);
        Self::new(lower * self.primal, lower * self.tangent * f64::from(n))
    }

    fn sum_products<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        let primal = T::sum_products(bias.primal, terms.clone().map(|(a, b)| (a.primal, b.primal)));
        let tangent = T::sum_products(bias.tangent, ProductRule { terms, pending: None });
        Self::new(primal, tangent)
    }
}

/// Yields `(a′, b)` then `(a, b′)` for each pair: the terms of the
/// derivative of `Σ a·b`.
#[derive(Clone)]
struct ProductRule<I, T> {
    terms: I,
    pending: Option<(T, T)>,
}

impl<T: Scalar, I: Iterator<Item = (Tangent<T>, Tangent<T>)>> Iterator for ProductRule<I, T> {
    type Item = (T, T);

    #[inline]
    fn next(&mut self) -> Option<(T, T)> {
        if let Some(p) = self.pending.take() {
            return Some(p);
        }
        let (a, b) = self.terms.next()?;
        self.pending = Some((a.primal, b.tangent));
        Some((a.tangent, b.primal))
    }
}
