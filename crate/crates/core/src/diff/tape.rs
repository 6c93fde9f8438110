use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{DiffError, Op, Scalar};

/// Index marking a value that is not recorded (a constant).
const UNTRACKED: u32 = u32::MAX;

/// Wengert list of scalar nodes in creation (topological) order.
///
/// Node `i` stores its parents and the local partial derivative with respect
/// to each of them in a flat compressed layout.
pub struct Tape {
    inner: RefCell<Nodes>,
}

#[derive(Default)]
struct Nodes {
    values: Vec<f64>,
    ops: Vec<Op>,
    starts: Vec<u32>,
    edges: Vec<Edge>,
    fault: Option<DiffError>,
}

/// Parent index and local partial derivative.
#[derive(Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

thread_local! {
    /// Buffers of dropped tapes, reused to avoid faulting in fresh pages.
    static POOL: RefCell<Option<Nodes>> = const { RefCell::new(None) };
}

impl Nodes {
    fn clear(&mut self) {
        self.values.clear();
        self.ops.clear();
        self.starts.clear();
        self.edges.clear();
        self.fault = None;
    }

    #[inline]
    fn push_node(&mut self, op: Op, value: f64) -> u32 {
        let index = self.values.len() as u32;
        self.values.push(value);
        self.ops.push(op);
        self.starts.push(self.edges.len() as u32);
        if !value.is_finite() {
            self.record_fault(op, index, value);
        }
        index
    }

    #[cold]
    fn record_fault(&mut self, op: Op, index: u32, value: f64) {
        if self.fault.is_none() {
            self.fault = Some(DiffError::NonFinite { op, node: index as usize, value });
        }
    }

    #[inline]
    fn edge(&mut self, parent: &Var<'_>, partial: f64) {
        if parent.index != UNTRACKED && partial != 0.0 {
            self.edges.push(Edge { parent: parent.index, partial });
        }
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        let mut nodes = std::mem::take(self.inner.get_mut());
        nodes.clear();
        // Keep the larger buffer set.
        let _ = POOL.try_with(|pool| {
            let mut pool = pool.borrow_mut();
            if pool.as_ref().is_none_or(|p| p.edges.capacity() < nodes.edges.capacity()) {
                *pool = Some(nodes);
            }
        });
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &nodes.values.len())
            .field("edges", &nodes.edges.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    /// Tape with room for `nodes` nodes and roughly twice as many edges.
    /// Buffers released by an earlier tape on this thread are reused.
    pub fn with_capacity(nodes: usize) -> Self {
        let mut inner = POOL.try_with(|pool| pool.borrow_mut().take()).ok().flatten().unwrap_or_default();
        inner.values.reserve(nodes);
        inner.ops.reserve(nodes);
        inner.starts.reserve(nodes);
        inner.edges.reserve(2 * nodes);
        Self { inner: RefCell::new(inner) }
    }

    /// Records an independent variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        let index = self.inner.borrow_mut().push_node(Op::Input, value);
        Var { tape: self, index, value }
    }

    /// A constant that takes part in arithmetic but is never recorded.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var { tape: self, index: UNTRACKED, value }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from `output`.
    ///
    /// Fails if any recorded node became non-finite, naming the first
    /// primitive that did.
    pub fn gradient(&self, output: Var<'_>) -> Result<Adjoints, DiffError> {
        let nodes = self.inner.borrow();
        if let Some(fault) = &nodes.fault {
            return Err(fault.clone());
        }
        let n = nodes.values.len();
        let mut adjoint = vec![0.0; n];
        if output.index == UNTRACKED {
            return Ok(Adjoints(adjoint));
        }
        adjoint[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let g = adjoint[i];
            if g == 0.0 {
                continue;
            }
            let start = nodes.starts[i] as usize;
            let end = nodes.starts.get(i + 1).map_or(nodes.edges.len(), |&s| s as usize);
            for e in &nodes.edges[start..end] {
                adjoint[e.parent as usize] += g * e.partial;
            }
        }
        Ok(Adjoints(adjoint))
    }

    fn unary(&self, op: Op, value: f64, x: &Var<'_>, dx: f64) -> Var<'_> {
        if x.index == UNTRACKED {
            return self.constant(value);
        }
        let mut nodes = self.inner.borrow_mut();
        let index = nodes.push_node(op, value);
        nodes.edge(x, dx);
        Var { tape: self, index, value }
    }

    fn binary(&self, op: Op, value: f64, a: &Var<'_>, da: f64, b: &Var<'_>, db: f64) -> Var<'_> {
        if a.index == UNTRACKED && b.index == UNTRACKED {
            return self.constant(value);
        }
        let mut nodes = self.inner.borrow_mut();
        let index = nodes.push_node(op, value);
        nodes.edge(a, da);
        nodes.edge(b, db);
        Var { tape: self, index, value }
    }
}

/// Adjoint of every tape node after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    /// Derivative of the swept output with respect to `var` (zero for
    /// constants and for nodes the output does not depend on).
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        if var.index == UNTRACKED {
            0.0
        } else {
            self.0[var.index as usize]
        }
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.index == UNTRACKED {
            write!(f, "Var(const {})", self.value)
        } else {
            write!(f, "Var(#{} = {})", self.index, self.value)
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.index == UNTRACKED
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(Op::Add, self.value + rhs.value, &self, 1.0, &rhs, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(Op::Sub, self.value - rhs.value, &self, 1.0, &rhs, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(Op::Mul, self.value * rhs.value, &self, rhs.value, &rhs, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.tape.binary(Op::Div, q, &self, 1.0 / rhs.value, &rhs, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(Op::Neg, -self.value, &self, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.tape.unary(Op::Add, self.value + rhs, &self, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.tape.unary(Op::Sub, self.value - rhs, &self, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.tape.unary(Op::Mul, self.value * rhs, &self, rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    fn constant_like(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(Op::Exp, e, &self, e)
    }

    fn ln(self) -> Self {
        self.tape.unary(Op::Ln, self.value.ln(), &self, 1.0 / self.value)
    }

    fn tanh(self) -> Self {
        let th = self.value.tanh();
        self.tape.unary(Op::Tanh, th, &self, 1.0 - th * th)
    }

    fn elu(self) -> Self {
        let (v, d) = if self.value > 0.0 {
            (self.value, 1.0)
        } else {
            (self.value.exp_m1(), self.value.exp())
        };
        self.tape.unary(Op::Elu, v, &self, d)
    }

    fn elu_prime(self) -> Self {
        if self.value > 0.0 {
            self.tape.constant(1.0)
        } else {
            self.exp()
        }
    }

    fn powi(self, n: i32) -> Self {
        let v = self.value.powi(n);
        let d = if n == 0 { 0.0 } else { f64::from(n) * self.value.powi(n - 1) };
        self.tape.unary(Op::Powi, v, &self, d)
    }

    fn sum_products<I>(bias: Self, terms: I) -> Self
    where
        I: Iterator<Item = (Self, Self)> + Clone,
    {
        // Single pass: record edges while accumulating, then patch the value.
        let tape = bias.tape;
        let mut nodes = tape.inner.borrow_mut();
        let index = nodes.values.len() as u32;
        let first_edge = nodes.edges.len();
        let mut value = bias.value;
        nodes.edge(&bias, 1.0);
        for (a, b) in terms {
            value += a.value * b.value;
            nodes.edge(&a, b.value);
            nodes.edge(&b, a.value);
        }
        if nodes.edges.len() == first_edge {
            return tape.constant(value);
        }
        nodes.values.push(value);
        nodes.ops.push(Op::SumProducts);
        nodes.starts.push(first_edge as u32);
        if !value.is_finite() {
            nodes.record_fault(Op::SumProducts, index, value);
        }
        Var { tape, index, value }
    }
}
