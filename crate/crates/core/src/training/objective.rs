//! The relaxed training objective and its gradient.
//!
//! Per sample `(x, ẋ)`:
//!
//! ```text
//! prediction/reconstruction  ‖ẋ − C A_lift ρ(d(x))‖² + ‖x − C ρ(d(x))‖²
//! invariance                 ‖ẋ − J_d(x)⁻¹ Ā d(x)‖²
//! ```
//!
//! plus the data-independent near-identity term `‖J_d(0) − I‖² + ‖d(0)‖²`,
//! added once per evaluation. The gradient runs reverse mode over a tape on
//! which the Jacobian's tangent passes are themselves recorded.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::ScalingRecord;
use crate::diff::{Scalar, Tangent, Tape, Var};
use crate::flow::{CouplingFlow, FlowArchitecture};
use crate::hurwitz::{assemble_with, HurwitzFactors};
use crate::linalg;
use crate::monomial::MultiIndexBasis;
use crate::predictor::LinearPredictor;

/// Jacobians with `|det|` below this are skipped in the invariance term.
pub const MIN_JACOBIAN_DET: f64 = 1e-12;

/// One training pair in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub prediction: f64,
    pub invariance: f64,
    pub identity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { prediction: 1.0, invariance: 1.0, identity: 1.0 }
    }
}

/// Loss value split by term. Totals are weighted; parts are not.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction_reconstruction: f64,
    pub invariance: f64,
    pub near_identity: f64,
    /// Samples whose Jacobian was too close to singular for the invariance term.
    pub guard_events: usize,
    /// Samples that contributed to the invariance term.
    pub invariance_samples: usize,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.prediction_reconstruction += other.prediction_reconstruction;
        self.invariance += other.invariance;
        self.near_identity += other.near_identity;
        self.guard_events += other.guard_events;
        self.invariance_samples += other.invariance_samples;
    }

    /// Invariance residual averaged over contributing samples.
    pub fn mean_invariance(&self) -> f64 {
        if self.invariance_samples == 0 {
            0.0
        } else {
            self.invariance / self.invariance_samples as f64
        }
    }
}

/// Where each parameter group lives in the flat parameter vector: flow
/// weights, then `N`, `Q`, `R` (row-major `d × d`), then `C` (row-major `d × D`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub dim: usize,
    pub lifted_dim: usize,
    pub flow: Range<usize>,
    pub n: Range<usize>,
    pub q: Range<usize>,
    pub r: Range<usize>,
    pub c: Range<usize>,
}

impl ParamLayout {
    pub fn new(flow_params: usize, dim: usize, lifted_dim: usize) -> Self {
        let d2 = dim * dim;
        let flow = 0..flow_params;
        let n = flow.end..flow.end + d2;
        let q = n.end..n.end + d2;
        let r = q.end..q.end + d2;
        let c = r.end..r.end + dim * lifted_dim;
        Self { dim, lifted_dim, flow, n, q, r, c }
    }

    pub fn len(&self) -> usize {
        self.c.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter-dependent quantities shared by all samples of one evaluation.
struct Shared<S> {
    flow: Vec<Tangent<S>>,
    latent: Vec<S>,
    /// `C · A_lift`, row-major `d × D`.
    ca: Vec<S>,
    c: Vec<S>,
}

/// Loss terms of one sample, unweighted.
struct SampleTerms<S> {
    prediction: S,
    invariance: Option<S>,
}

#[derive(Debug, Clone)]
pub struct Objective {
    arch: FlowArchitecture,
    basis: MultiIndexBasis,
    layout: ParamLayout,
    weights: LossWeights,
    epsilon: f64,
    chunk_size: usize,
}

fn squared_residual<S: Scalar>(zero: S, pred: &[S], target: &[f64]) -> S {
    let r: Vec<S> = pred.iter().zip(target).map(|(&p, &t)| p - t).collect();
    S::sum_products(zero, r.iter().map(|&v| (v, v)))
}

impl Objective {
    pub fn new(
        arch: FlowArchitecture,
        basis: MultiIndexBasis,
        weights: LossWeights,
        epsilon: f64,
        chunk_size: usize,
    ) -> Result<Self, TrainError> {
        let dim = arch.dim();
        if basis.dim() != dim {
            return Err(TrainError::Config(format!("basis dimension {} ≠ flow dimension {dim}", basis.dim())));
        }
        if dim > linalg::MAX_CLOSED_FORM_DIM {
            return Err(TrainError::Config(format!(
                "training supports state dimension ≤ {}, got {dim}",
                linalg::MAX_CLOSED_FORM_DIM
            )));
        }
        let layout = ParamLayout::new(arch.param_count(), dim, basis.len());
        Ok(Self { arch, basis, layout, weights, epsilon, chunk_size: chunk_size.max(1) })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn architecture(&self) -> &FlowArchitecture {
        &self.arch
    }

    pub fn basis(&self) -> &MultiIndexBasis {
        &self.basis
    }

    /// Near-identity flow from `seed`, `N = I + σZ₁`, `Q = I + σZ₂`,
    /// `R = σZ₃` (so `Ā ≈ −I`), and `C = [I 0]`.
    pub fn initial_params(&self, seed: u64, noise: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = CouplingFlow::init(self.arch.clone(), rng.random());
        let d = self.layout.dim;
        let mut params = flow.params().to_vec();
        for eye in [1.0, 1.0, 0.0] {
            for i in 0..d {
                for j in 0..d {
                    let base = if i == j { eye } else { 0.0 };
                    params.push(base + noise * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        let c = LinearPredictor::leading_block_reconstruction(d, self.layout.lifted_dim);
        params.extend(linalg::to_row_major(&c));
        debug_assert_eq!(params.len(), self.layout.len());
        params
    }

    fn check_params(&self, params: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.layout.len() {
            return Err(TrainError::Config(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn factors(&self, params: &[f64]) -> HurwitzFactors {
        let d = self.layout.dim;
        let m = |r: &Range<usize>| DMatrix::from_row_slice(d, d, &params[r.clone()]);
        HurwitzFactors::new(m(&self.layout.n), m(&self.layout.q), m(&self.layout.r), self.epsilon)
            .expect("epsilon validated and shapes fixed by the layout")
    }

    /// `Ā` for the given parameters.
    pub fn latent_matrix(&self, params: &[f64]) -> DMatrix<f64> {
        self.factors(params).assemble()
    }

    /// Packs parameters into a predictor with the given domain scaling.
    pub fn predictor(&self, params: &[f64], scaling: ScalingRecord) -> Result<LinearPredictor, TrainError> {
        self.check_params(params)?;
        let flow = CouplingFlow::new(self.arch.clone(), params[self.layout.flow.clone()].to_vec())?;
        let c = DMatrix::from_row_slice(self.layout.dim, self.layout.lifted_dim, &params[self.layout.c.clone()]);
        Ok(LinearPredictor::new(flow, self.factors(params), self.basis.max_order(), c, scaling)?)
    }

    fn shared<S: Scalar>(&self, p: &[S]) -> Shared<S> {
        let l = &self.layout;
        let flow = p[l.flow.clone()].iter().map(|&w| Tangent::constant(w)).collect();
        let latent = assemble_with(&p[l.n.clone()], &p[l.q.clone()], &p[l.r.clone()], l.dim, self.epsilon);
        let scaled = self.basis.scaled_latent(&latent);
        let c = p[l.c.clone()].to_vec();
        let ca = self.basis.premultiply_lifted(&c, l.dim, &scaled);
        Shared { flow, latent, ca, c }
    }

    fn sample_terms<S: Scalar>(&self, sh: &Shared<S>, zero: S, s: &Sample) -> SampleTerms<S> {
        let d = self.layout.dim;
        let x: Vec<S> = s.x.iter().map(|&v| zero.constant_like(v)).collect();
        let (y, jac) = self.arch.jacobian_with(&sh.flow, &x);
        let z = self.basis.lift(&y);
        let velocity = linalg::matvec(&sh.ca, &z, d);
        let state = linalg::matvec(&sh.c, &z, d);
        let prediction = squared_residual(zero, &velocity, &s.v) + squared_residual(zero, &state, &s.x);
        let invariance = linalg::inverse(&jac, d, MIN_JACOBIAN_DET).map(|jinv| {
            let ay = linalg::matvec(&sh.latent, &y, d);
            squared_residual(zero, &linalg::matvec(&jinv, &ay, d), &s.v)
        });
        SampleTerms { prediction, invariance }
    }

    fn identity_term<S: Scalar>(&self, sh: &Shared<S>, zero: S) -> S {
        let d = self.layout.dim;
        let (y, jac) = self.arch.jacobian_with(&sh.flow, &vec![zero; d]);
        let eye: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        squared_residual(zero, &jac, &eye) + squared_residual(zero, &y, &vec![0.0; d])
    }

    /// Terms for a batch, reduced into one weighted scalar per part.
    fn evaluate<S: Scalar>(&self, p: &[S], zero: S, batch: &[Sample], identity: bool) -> (Vec<(S, f64)>, LossBreakdown) {
        let sh = self.shared(p);
        let w = self.weights;
        let mut terms = Vec::with_capacity(2 * batch.len() + 1);
        let mut lb = LossBreakdown::default();
        for s in batch {
            let t = self.sample_terms(&sh, zero, s);
            lb.prediction_reconstruction += t.prediction.value();
            terms.push((t.prediction, w.prediction));
            match t.invariance {
                Some(v) => {
                    lb.invariance += v.value();
                    lb.invariance_samples += 1;
                    terms.push((v, w.invariance));
                }
                None => lb.guard_events += 1,
            }
        }
        if identity {
            let v = self.identity_term(&sh, zero);
            lb.near_identity = v.value();
            terms.push((v, w.identity));
        }
        lb.total = w.prediction * lb.prediction_reconstruction + w.invariance * lb.invariance + w.identity * lb.near_identity;
        (terms, lb)
    }

    /// Loss without derivatives.
    pub fn loss(&self, params: &[f64], batch: &[Sample]) -> Result<LossBreakdown, TrainError> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        Ok(self.evaluate(params, 0.0, batch, true).1)
    }

    fn chunk_gradient(&self, params: &[f64], chunk: &[Sample], identity: bool) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
        let tape = Tape::with_capacity(64 * params.len());
        let p: Vec<Var<'_>> = params.iter().map(|&v| tape.input(v)).collect();
        let zero = tape.constant(0.0);
        let (terms, lb) = self.evaluate(&p, zero, chunk, identity);
        let total = Var::sum_products(zero, terms.iter().map(|&(v, w)| (v, zero.constant_like(w))));
        let adjoints = tape.gradient(total).map_err(|source| TrainError::NonFinite { source, loss: lb })?;
        Ok((lb, p.iter().map(|v| adjoints.wrt(*v)).collect()))
    }

    /// Exact gradient of the batch loss. Samples are processed in chunks,
    /// possibly in parallel; chunk results are summed in order, so the result
    /// does not depend on scheduling.
    pub fn gradient(&self, params: &[f64], batch: &[Sample]) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let chunks: Vec<&[Sample]> = batch.chunks(self.chunk_size).collect();
        let run = |(k, chunk): (usize, &&[Sample])| self.chunk_gradient(params, chunk, k == 0);
        #[cfg(feature = "parallel")]
        let results: Vec<_> = {
            use rayon::prelude::*;
            chunks.par_iter().enumerate().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<_> = chunks.iter().enumerate().map(run).collect();

        let mut lb = LossBreakdown::default();
        let mut grad = vec![0.0; params.len()];
        for r in results {
            let (part, g) = r?;
            lb.accumulate(&part);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((lb, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;

    fn objective(layers: usize, hidden: Vec<usize>, tanh: bool, p: usize) -> Objective {
        let arch = FlowArchitecture::alternating(2, &FlowConfig { layers, hidden, final_tanh: tanh }).unwrap();
        Objective::new(arch, MultiIndexBasis::enumerate(2, p).unwrap(), LossWeights::default(), 1e-6, 3).unwrap()
    }

    fn random_params(obj: &Objective, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        (0..obj.layout().len()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| Sample {
                x: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                v: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            })
            .collect()
    }

    /// Fourth-order central difference of the total loss.
    fn fd_gradient(obj: &Objective, params: &[f64], batch: &[Sample], h: f64) -> Vec<f64> {
        let f = |p: &[f64]| obj.loss(p, batch).unwrap().total;
        (0..params.len())
            .map(|k| {
                let at = |s: f64| {
                    let mut p = params.to_vec();
                    p[k] += s * h;
                    f(&p)
                };
                (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
            })
            .collect()
    }

    /// `|g − fd| / max(|g|, |fd|, 1e-6·max(‖g‖∞, 1))`.
    fn max_relative_error(g: &[f64], fd: &[f64]) -> f64 {
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        g.iter()
            .zip(fd)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_linear_system_has_zero_loss() {
        let obj = objective(2, vec![4], false, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = vec![0.0; obj.layout().len()];
        let l = obj.layout().clone();
        // N, Q and R are contiguous.
        for (k, v) in params[l.n.start..l.r.end].iter_mut().enumerate() {
            *v = rng.sample::<f64, _>(StandardNormal) + if k % 3 == 0 { 1.0 } else { 0.0 };
        }
        let c = LinearPredictor::leading_block_reconstruction(2, l.lifted_dim);
        params[l.c.clone()].copy_from_slice(&linalg::to_row_major(&c));
        let a = obj.latent_matrix(&params);
        let batch: Vec<Sample> = random_batch(&mut rng, 10)
            .into_iter()
            .map(|s| {
                let v = (&a * nalgebra::DVector::from_column_slice(&s.x)).as_slice().to_vec();
                Sample { x: s.x, v }
            })
            .collect();
        let lb = obj.loss(&params, &batch).unwrap();
        assert!(lb.total < 1e-28, "{lb:?}");
        assert_eq!(lb.guard_events, 0);
        assert_eq!(lb.invariance_samples, 10);
    }

    #[test]
    fn zero_reconstruction_gives_target_norm() {
        let obj = objective(2, vec![4], true, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = random_params(&obj, &mut rng, 0.3);
        let c = obj.layout().c.clone();
        params[c].iter_mut().for_each(|v| *v = 0.0);
        let batch = random_batch(&mut rng, 8);
        let expected: f64 = batch.iter().map(|s| s.x.iter().chain(&s.v).map(|v| v * v).sum::<f64>()).sum();
        let lb = obj.loss(&params, &batch).unwrap();
        assert!((lb.prediction_reconstruction - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for case in 0..20 {
            let obj = objective(1 + case % 3, vec![3 + case % 4], case % 2 == 0, 1 + case % 3);
            let params = random_params(&obj, &mut rng, 0.4);
            let batch = random_batch(&mut rng, 8);
            let (lb, g) = obj.gradient(&params, &batch).unwrap();
            assert!((lb.total - obj.loss(&params, &batch).unwrap().total).abs() < 1e-10 * lb.total);
            let fd = fd_gradient(&obj, &params, &batch, 1e-4);
            worst = worst.max(max_relative_error(&g, &fd));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn chunking_does_not_change_the_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obj = objective(2, vec![5], true, 3);
        let params = random_params(&obj, &mut rng, 0.3);
        let batch = random_batch(&mut rng, 11);
        let single = Objective { chunk_size: 100, ..obj.clone() };
        let (a, ga) = obj.gradient(&params, &batch).unwrap();
        let (b, gb) = single.gradient(&params, &batch).unwrap();
        assert!((a.total - b.total).abs() < 1e-12 * a.total);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
        assert_eq!(obj.gradient(&params, &batch).unwrap().1, ga);
    }

    #[test]
    fn identity_term_gradient_at_zero_flow_is_finite() {
        let obj = objective(2, vec![4], true, 2);
        let mut params = vec![0.0; obj.layout().len()];
        let l = obj.layout().clone();
        params[l.n.start] = 1.0;
        params[l.n.start + 3] = 1.0;
        let batch = vec![Sample { x: vec![0.0, 0.0], v: vec![0.0, 0.0] }];
        let (lb, g) = obj.gradient(&params, &batch).unwrap();
        assert_eq!(lb.near_identity, 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
        let fd = fd_gradient(&obj, &params, &batch, 1e-4);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn initial_parameters_give_negative_identity_latent() {
        let obj = objective(3, vec![8], true, 4);
        let p = obj.initial_params(5, 0.0);
        let a = obj.latent_matrix(&p);
        assert!((a + DMatrix::identity(2, 2)).amax() < 1e-5);
        let m = obj.predictor(&p, ScalingRecord::identity(2)).unwrap();
        assert_eq!(m.flow().forward(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_batch_rejected() {
        let obj = objective(1, vec![2], false, 1);
        let p = vec![0.1; obj.layout().len()];
        assert!(matches!(obj.gradient(&p, &[]), Err(TrainError::EmptyBatch)));
    }
}
