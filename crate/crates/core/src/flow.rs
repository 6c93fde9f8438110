//! Invertible coupling flows.
//!
//! A flow is a stack of affine coupling layers, each keeping one block of
//! coordinates `x_a` fixed and updating the complementary block as
//!
//! ```text
//! y_b = x_b ⊙ exp(s(x_a)) + t(x_a)
//! ```
//!
//! optionally followed by a dimension-wise `tanh` that maps the latent space
//! into the open unit box. Every piece is invertible in closed form and its
//! Jacobian is triangular per layer, so the composite is a diffeomorphism.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{self, Scalar, Tangent};

/// Bound applied to scale outputs through `c·tanh(s/c)`.
pub const DEFAULT_SCALE_CLAMP: f64 = 5.0;

/// Standard deviation of the output-layer weights at initialization.
const OUTPUT_INIT_STD: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("coupling flows need at least two state dimensions, got {0}")]
    DimensionTooSmall(usize),
    #[error("coordinate {index} = {value} is outside the open unit box of the final tanh layer")]
    OutsideUnitBox { index: usize, value: f64 },
    #[error("invalid partition in layer {layer}: {reason}")]
    InvalidPartition { layer: usize, reason: String },
    #[error("expected {expected} parameters, got {actual}")]
    ParameterCount { expected: usize, actual: usize },
    #[error("expected a state of length {expected}, got {actual}")]
    StateLength { expected: usize, actual: usize },
    #[error("network widths must start and end with the partition sizes and be nonzero")]
    InvalidWidths,
}

/// Fully connected network shape: ELU on hidden layers, linear output.
///
/// Parameters for each affine map are laid out as row-major weights
/// (`out × in`) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(widths: Vec<usize>) -> Result<Self, FlowError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(FlowError::InvalidWidths);
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.widths[0]);
        let mut h = x.to_vec();
        let mut offset = 0;
        let last = self.widths.len() - 2;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            h = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let v = S::sum_products(biases[o], row.iter().copied().zip(h.iter().copied()));
                    if l == last {
                        v
                    } else {
                        v.elu()
                    }
                })
                .collect();
        }
        h
    }

    /// Appends Gaussian weights with per-layer standard deviation
    /// `std(fan_in, is_output)` and zero biases.
    fn init(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>, std: impl Fn(usize, bool) -> f64) {
        let last = self.widths.len() - 2;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let sd = std(n_in, l == last);
            out.extend((0..n_in * n_out).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
            out.extend(std::iter::repeat_n(0.0, n_out));
        }
    }
}

/// One affine coupling layer: `fixed` coordinates condition the update of
/// the `transformed` ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub fixed: Vec<usize>,
    pub transformed: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

impl CouplingLayer {
    fn validate(&self, dim: usize, layer: usize) -> Result<(), FlowError> {
        let bad = |reason: &str| FlowError::InvalidPartition { layer, reason: reason.to_string() };
        if self.fixed.is_empty() || self.transformed.is_empty() {
            return Err(bad("both blocks must be nonempty"));
        }
        let mut seen = vec![false; dim];
        for &i in self.fixed.iter().chain(&self.transformed) {
            if i >= dim || seen[i] {
                return Err(bad("blocks must partition the coordinates"));
            }
            seen[i] = true;
        }
        if seen.contains(&false) {
            return Err(bad("blocks must cover every coordinate"));
        }
        for net in [&self.scale_net, &self.shift_net] {
            let w = net.widths();
            if w[0] != self.fixed.len() || w[w.len() - 1] != self.transformed.len() {
                return Err(FlowError::InvalidWidths);
            }
        }
        Ok(())
    }
}

/// Layer count and hidden widths of the coupling networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_true")]
    pub final_tanh: bool,
}

fn default_true() -> bool {
    true
}

impl FlowConfig {
    /// Seven layers with three hidden layers of 120 units.
    pub fn imitation() -> Self {
        Self { layers: 7, hidden: vec![120, 120, 120], final_tanh: true }
    }

    /// Nine layers with two hidden layers of 50 units.
    pub fn validation() -> Self {
        Self { layers: 9, hidden: vec![50, 50], final_tanh: true }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self::imitation()
    }
}

/// Layer structure of a flow, independent of parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArchitecture {
    dim: usize,
    layers: Vec<CouplingLayer>,
    final_tanh: bool,
    scale_clamp: f64,
    /// Parameter ranges of the scale and shift nets per layer.
    ranges: Vec<(Range<usize>, Range<usize>)>,
    param_count: usize,
}

impl FlowArchitecture {
    pub fn new(
        dim: usize,
        layers: Vec<CouplingLayer>,
        final_tanh: bool,
        scale_clamp: f64,
    ) -> Result<Self, FlowError> {
        if dim < 2 {
            return Err(FlowError::DimensionTooSmall(dim));
        }
        let mut ranges = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (k, layer) in layers.iter().enumerate() {
            layer.validate(dim, k)?;
            let s = offset..offset + layer.scale_net.param_count();
            let t = s.end..s.end + layer.shift_net.param_count();
            offset = t.end;
            ranges.push((s, t));
        }
        Ok(Self { dim, layers, final_tanh, scale_clamp, ranges, param_count: offset })
    }

    /// Alternating partitions: layer `k` transforms `⌊d/2⌋` coordinates
    /// starting at `(d − ⌊d/2⌋ + k⌊d/2⌋) mod d`. For `d = 2` this updates the
    /// second coordinate, then the first, and so on.
    pub fn alternating(dim: usize, config: &FlowConfig) -> Result<Self, FlowError> {
        if dim < 2 {
            return Err(FlowError::DimensionTooSmall(dim));
        }
        let n = dim / 2;
        let layers = (0..config.layers)
            .map(|k| {
                let transformed: Vec<usize> = (0..n).map(|i| (dim - n + k * n + i) % dim).collect();
                let fixed: Vec<usize> = (0..dim).filter(|i| !transformed.contains(i)).collect();
                let widths = |inp: usize, out: usize| {
                    let mut w = vec![inp];
                    w.extend(&config.hidden);
                    w.push(out);
                    Mlp::new(w)
                };
                Ok(CouplingLayer {
                    scale_net: widths(fixed.len(), transformed.len())?,
                    shift_net: widths(fixed.len(), transformed.len())?,
                    fixed,
                    transformed,
                })
            })
            .collect::<Result<Vec<_>, FlowError>>()?;
        Self::new(dim, layers, config.final_tanh, DEFAULT_SCALE_CLAMP)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn final_tanh(&self) -> bool {
        self.final_tanh
    }

    pub fn scale_clamp(&self) -> f64 {
        self.scale_clamp
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn clamp<S: Scalar>(&self, s: S) -> S {
        (s * (1.0 / self.scale_clamp)).tanh() * self.scale_clamp
    }

    /// Clamped scale and shift outputs of layer `k` at `x`.
    fn scale_shift<S: Scalar>(&self, k: usize, params: &[S], x: &[S]) -> (Vec<S>, Vec<S>) {
        let layer = &self.layers[k];
        let (sr, tr) = &self.ranges[k];
        let xa: Vec<S> = layer.fixed.iter().map(|&i| x[i]).collect();
        let s = layer.scale_net.forward(&params[sr.clone()], &xa);
        let t = layer.shift_net.forward(&params[tr.clone()], &xa);
        (s.into_iter().map(|v| self.clamp(v)).collect(), t)
    }

    pub fn layer_forward_with<S: Scalar>(&self, k: usize, params: &[S], x: &[S]) -> Vec<S> {
        let (s, t) = self.scale_shift(k, params, x);
        let mut out = x.to_vec();
        for (m, &b) in self.layers[k].transformed.iter().enumerate() {
            out[b] = x[b] * s[m].exp() + t[m];
        }
        out
    }

    pub fn layer_inverse_with<S: Scalar>(&self, k: usize, params: &[S], y: &[S]) -> Vec<S> {
        // The fixed block passes through unchanged, so s and t can be
        // evaluated on y directly.
        let (s, t) = self.scale_shift(k, params, y);
        let mut out = y.to_vec();
        for (m, &b) in self.layers[k].transformed.iter().enumerate() {
            out[b] = (y[b] - t[m]) * (-s[m]).exp();
        }
        out
    }

    pub fn forward_with<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        let mut h = x.to_vec();
        for k in 0..self.layers.len() {
            h = self.layer_forward_with(k, params, &h);
        }
        if self.final_tanh {
            h = h.into_iter().map(Scalar::tanh).collect();
        }
        h
    }

    /// Value and row-major Jacobian of the flow, one tangent pass per input
    /// coordinate through the whole flow. `params` must be lifted to tangents.
    pub fn jacobian_by_passes<S: Scalar>(&self, params: &[Tangent<S>], x: &[S]) -> (Vec<S>, Vec<S>) {
        diff::jacobian(x, |seeded| self.forward_with(params, seeded))
    }

    /// Value and row-major Jacobian of the flow, composed layer by layer.
    ///
    /// Each layer's Jacobian is the identity on the fixed block and
    /// `diag(exp s) + (x_b ⊙ exp s) ∂s/∂x_a + ∂t/∂x_a` on the transformed
    /// rows, so the nets only need one tangent pass per fixed coordinate.
    /// `params` must be lifted to tangents.
    pub fn jacobian_with<S: Scalar>(&self, params: &[Tangent<S>], x: &[S]) -> (Vec<S>, Vec<S>) {
        let d = self.dim;
        let zero = x[0].constant_like(0.0);
        let one = x[0].constant_like(1.0);
        let mut h = x.to_vec();
        let mut jac: Vec<S> = (0..d * d).map(|k| if k % (d + 1) == 0 { one } else { zero }).collect();
        for (k, layer) in self.layers.iter().enumerate() {
            let (sr, tr) = &self.ranges[k];
            let nb = layer.transformed.len();
            // Values and derivatives of s and t with respect to each fixed coordinate.
            let mut s = Vec::new();
            let mut t = Vec::new();
            let mut ds = vec![Vec::with_capacity(layer.fixed.len()); nb];
            let mut dt = vec![Vec::with_capacity(layer.fixed.len()); nb];
            for m in 0..layer.fixed.len() {
                let xa: Vec<Tangent<S>> = layer
                    .fixed
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| Tangent::new(h[c], if i == m { one } else { zero }))
                    .collect();
                let so = layer.scale_net.forward(&params[sr.clone()], &xa);
                let to = layer.shift_net.forward(&params[tr.clone()], &xa);
                for (j, (sv, tv)) in so.into_iter().zip(to).enumerate() {
                    let sv = self.clamp(sv);
                    ds[j].push(sv.tangent);
                    dt[j].push(tv.tangent);
                    if m == 0 {
                        s.push(sv.primal);
                        t.push(tv.primal);
                    }
                }
            }
            let mut next = h.clone();
            let mut next_jac = jac.clone();
            for (j, &b) in layer.transformed.iter().enumerate() {
                let e = s[j].exp();
                let he = h[b] * e;
                next[b] = he + t[j];
                // Coefficient of row a_m of the old Jacobian in the new row b.
                let coef: Vec<S> = (0..layer.fixed.len()).map(|m| S::sum_products(dt[j][m], [(he, ds[j][m])].into_iter())).collect();
                for col in 0..d {
                    next_jac[b * d + col] = S::sum_products(
                        zero,
                        std::iter::once((e, jac[b * d + col]))
                            .chain(layer.fixed.iter().zip(&coef).map(|(&a, &c)| (c, jac[a * d + col]))),
                    );
                }
            }
            h = next;
            jac = next_jac;
        }
        if self.final_tanh {
            for i in 0..d {
                let th = h[i].tanh();
                let slope = -(th * th) + 1.0;
                h[i] = th;
                for col in 0..d {
                    jac[i * d + col] = jac[i * d + col] * slope;
                }
            }
        }
        (h, jac)
    }
}

/// A coupling flow with concrete parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlowRepr", into = "FlowRepr")]
pub struct CouplingFlow {
    arch: FlowArchitecture,
    params: Vec<f64>,
}

impl CouplingFlow {
    pub fn new(arch: FlowArchitecture, params: Vec<f64>) -> Result<Self, FlowError> {
        if params.len() != arch.param_count() {
            return Err(FlowError::ParameterCount { expected: arch.param_count(), actual: params.len() });
        }
        Ok(Self { arch, params })
    }

    /// Random near-identity initialization, deterministic in `seed`.
    ///
    /// Hidden weights use fan-in scaling, output weights are drawn with
    /// standard deviation `1e-2`, and all biases start at zero, so the initial
    /// flow is close to the identity (or to `tanh`) and maps `0` to `0`.
    pub fn init(arch: FlowArchitecture, seed: u64) -> Self {
        Self::gaussian(arch, seed, |fan_in, output| {
            if output {
                OUTPUT_INIT_STD
            } else {
                (1.0 / fan_in as f64).sqrt()
            }
        })
    }

    /// All weights `N(0, std²)` and all biases zero. Zero biases make every
    /// shift net vanish at the origin, so the flow fixes `0`.
    pub fn random_weights(arch: FlowArchitecture, std: f64, seed: u64) -> Self {
        Self::gaussian(arch, seed, |_, _| std)
    }

    fn gaussian(arch: FlowArchitecture, seed: u64, std: impl Fn(usize, bool) -> f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for layer in &arch.layers {
            layer.scale_net.init(&mut rng, &mut params, &std);
            layer.shift_net.init(&mut rng, &mut params, &std);
        }
        Self { arch, params }
    }

    /// Exactly the identity (or `tanh`): all parameters zero.
    pub fn identity(arch: FlowArchitecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    pub fn architecture(&self) -> &FlowArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    fn check_len(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.arch.dim {
            return Err(FlowError::StateLength { expected: self.arch.dim, actual: x.len() });
        }
        Ok(())
    }

    pub fn layer_forward(&self, k: usize, x: &[f64]) -> Vec<f64> {
        self.arch.layer_forward_with(k, &self.params, x)
    }

    pub fn layer_inverse(&self, k: usize, y: &[f64]) -> Vec<f64> {
        self.arch.layer_inverse_with(k, &self.params, y)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.arch.forward_with(&self.params, x)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_len(y)?;
        let mut h = y.to_vec();
        if self.arch.final_tanh {
            for (index, v) in h.iter_mut().enumerate() {
                if !(v.abs() < 1.0) {
                    return Err(FlowError::OutsideUnitBox { index, value: *v });
                }
                *v = v.atanh();
            }
        }
        for k in (0..self.arch.layers.len()).rev() {
            h = self.layer_inverse(k, &h);
        }
        Ok(h)
    }

    /// `J_d(x)` from forward tangent passes.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let lifted: Vec<Tangent<f64>> = self.params.iter().map(|&p| Tangent::constant(p)).collect();
        let (_, jac) = self.arch.jacobian_with(&lifted, x);
        DMatrix::from_row_slice(self.arch.dim, self.arch.dim, &jac)
    }

    /// `ln |det J_d(x)|` from the layer structure: the sum of clamped scale
    /// outputs plus `Σ ln(1 − tanh²)` for the final layer.
    pub fn log_abs_det_jacobian(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let mut total = 0.0;
        for k in 0..self.arch.layers.len() {
            let (s, _) = self.arch.scale_shift(k, &self.params, &h);
            total += s.iter().sum::<f64>();
            h = self.layer_forward(k, &h);
        }
        if self.arch.final_tanh {
            // ln(1 − tanh²v) = ln 4 − 2|v| − 2 ln(1 + e^{−2|v|}), stable for large |v|.
            total += h
                .iter()
                .map(|v| 4f64.ln() - 2.0 * v.abs() - 2.0 * (-2.0 * v.abs()).exp().ln_1p())
                .sum::<f64>();
        }
        total
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowRepr {
    dim: usize,
    final_tanh: bool,
    scale_clamp: f64,
    layers: Vec<CouplingLayer>,
    params: Vec<f64>,
}

impl TryFrom<FlowRepr> for CouplingFlow {
    type Error = FlowError;
    fn try_from(r: FlowRepr) -> Result<Self, FlowError> {
        let arch = FlowArchitecture::new(r.dim, r.layers, r.final_tanh, r.scale_clamp)?;
        CouplingFlow::new(arch, r.params)
    }
}

impl From<CouplingFlow> for FlowRepr {
    fn from(f: CouplingFlow) -> Self {
        FlowRepr {
            dim: f.arch.dim,
            final_tanh: f.arch.final_tanh,
            scale_clamp: f.arch.scale_clamp,
            layers: f.arch.layers,
            params: f.params,
        }
    }
}
