//! The trained linear predictor and its simulation.
//!
//! With `ψ = ρ ∘ d` the predictor is
//!
//! ```text
//! z₀ = ψ(x₀),   ż = A_lift z,   x̂ = C z
//! ```
//!
//! Because `ρ(exp(Ā t) y) = exp(A_lift t) ρ(y)`, rollouts evolve only the
//! `d`-dimensional latent state and lift it at each query time.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ScalingRecord;
use crate::flow::{CouplingFlow, FlowError};
use crate::hurwitz::{self, Complex64, HurwitzError, HurwitzFactors};
use crate::linalg::MatrixRecord;
use crate::monomial::{LiftedMatrix, MonomialError, MultiIndexBasis};

/// Version tag written to and required in model files.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unsupported model version {found} (expected {MODEL_VERSION})")]
    Version { found: u32 },
    #[error("state has length {actual}, expected {expected}")]
    StateLength { expected: usize, actual: usize },
    #[error("non-finite state {0:?}")]
    NonFinite(Vec<f64>),
    #[error("times must be ascending and non-negative")]
    BadTimes,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Hurwitz(#[from] HurwitzError),
    #[error(transparent)]
    Monomial(#[from] MonomialError),
}

/// Degree-13 Padé coefficients.
const B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `exp(M t)` by scaling and squaring with the degree-13 Padé approximant.
pub fn matrix_exp(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    const THETA_13: f64 = 5.371920351148152;
    let n = m.nrows();
    let a = m * t;
    let norm = a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let mut r = pade_13(&a, &a2, &a4, &a6, &eye);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Degree-13 Padé approximant given the even powers of `a`.
fn pade_13(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a4: &DMatrix<f64>,
    a6: &DMatrix<f64>,
    eye: &DMatrix<f64>,
) -> DMatrix<f64> {
    let u_inner = a6 * (a6 * B[13] + a4 * B[11] + a2 * B[9]) + a6 * B[7] + a4 * B[5] + a2 * B[3] + eye * B[1];
    let u = a * u_inner;
    let v = a6 * (a6 * B[12] + a4 * B[10] + a2 * B[8]) + a6 * B[6] + a4 * B[4] + a2 * B[2] + eye * B[0];
    (&v - &u).lu().solve(&(&v + &u)).expect("Padé denominator is nonsingular after scaling")
}
/// `exp(L t)` for a block-diagonal lifted matrix, one exponential per block.
pub fn lifted_exp(lifted: &LiftedMatrix, t: f64) -> DMatrix<f64> {
    let n = lifted.matrix.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (p, r) in lifted.blocks.iter().enumerate() {
        let e = matrix_exp(&lifted.block(p + 1), t);
        out.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&e);
    }
    out
}

/// The trained triple `(ψ, A_lift, C)` plus the domain scaling.
///
/// Methods without a `_scaled` suffix take and return physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    flow: CouplingFlow,
    factors: HurwitzFactors,
    basis: MultiIndexBasis,
    latent: DMatrix<f64>,
    lifted: LiftedMatrix,
    c: DMatrix<f64>,
    scaling: ScalingRecord,
    demo_time: Option<f64>,
}

impl LinearPredictor {
    pub fn new(
        flow: CouplingFlow,
        factors: HurwitzFactors,
        max_order: usize,
        c: DMatrix<f64>,
        scaling: ScalingRecord,
    ) -> Result<Self, PredictorError> {
        let dim = flow.dim();
        if factors.dim() != dim || scaling.dim() != dim || scaling.scale.len() != dim {
            return Err(PredictorError::Malformed(format!(
                "flow, factors and scaling disagree on dimension ({dim}, {}, {})",
                factors.dim(),
                scaling.dim()
            )));
        }
        let basis = MultiIndexBasis::enumerate(dim, max_order)?;
        if c.nrows() != dim || c.ncols() != basis.len() {
            return Err(PredictorError::Malformed(format!(
                "C is {}×{}, expected {dim}×{}",
                c.nrows(),
                c.ncols(),
                basis.len()
            )));
        }
        let latent = factors.assemble();
        let lifted = basis.lifted_matrix(&latent);
        Ok(Self { flow, factors, basis, latent, lifted, c, scaling, demo_time: None })
    }

    /// `C = [I 0]`: reconstruction reads the leading latent block.
    pub fn leading_block_reconstruction(dim: usize, lifted_dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, lifted_dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn with_demo_time(mut self, demo_time: Option<f64>) -> Self {
        self.demo_time = demo_time;
        self
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn flow(&self) -> &CouplingFlow {
        &self.flow
    }

    pub fn factors(&self) -> &HurwitzFactors {
        &self.factors
    }

    pub fn basis(&self) -> &MultiIndexBasis {
        &self.basis
    }

    /// `Ā`.
    pub fn latent_matrix(&self) -> &DMatrix<f64> {
        &self.latent
    }

    pub fn lifted_matrix(&self) -> &LiftedMatrix {
        &self.lifted
    }

    pub fn reconstruction(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn scaling(&self) -> &ScalingRecord {
        &self.scaling
    }

    /// Mean demonstration duration of the training data, when known.
    pub fn demo_time(&self) -> Option<f64> {
        self.demo_time
    }

    pub fn latent_spectrum(&self) -> Result<Vec<Complex64>, PredictorError> {
        Ok(hurwitz::spectrum(&self.latent)?)
    }

    pub fn lifted_spectrum(&self) -> Result<Vec<Complex64>, PredictorError> {
        Ok(self.basis.lifted_spectrum(&self.latent_spectrum()?))
    }

    fn check(&self, x: &[f64]) -> Result<(), PredictorError> {
        if x.len() != self.dim() {
            return Err(PredictorError::StateLength { expected: self.dim(), actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::NonFinite(x.to_vec()));
        }
        Ok(())
    }

    /// `z₀ = ρ(d(x))` for a state already in the training box.
    pub fn lift_state_scaled(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        self.check(x)?;
        Ok(self.basis.lift(&self.flow.forward(x)))
    }

    /// `z₀ = ρ(d(x))` for a physical state.
    pub fn lift_state(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        self.check(x)?;
        self.lift_state_scaled(&self.scaling.apply(x))
    }

    /// `C z` in scaled units.
    pub fn reconstruct_scaled(&self, z: &[f64]) -> Vec<f64> {
        (&self.c * DVector::from_column_slice(z)).as_slice().to_vec()
    }

    fn check_times(times: &[f64]) -> Result<(), PredictorError> {
        let ascending = times.windows(2).all(|w| w[0] <= w[1]);
        if !ascending || times.first().is_some_and(|t| !(*t >= 0.0)) || times.iter().any(|t| !t.is_finite()) {
            return Err(PredictorError::BadTimes);
        }
        Ok(())
    }

    /// Latent states `exp(Ā t) d(x₀)` for a scaled initial condition.
    pub fn latent_rollout_scaled(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, PredictorError> {
        self.check(x0)?;
        Self::check_times(times)?;
        let y0 = DVector::from_vec(self.flow.forward(x0));
        Ok(times.iter().map(|&t| (matrix_exp(&self.latent, t) * &y0).as_slice().to_vec()).collect())
    }

    /// `x̂(t) = C ρ(exp(Ā t) d(x₀))` in scaled units.
    pub fn simulate_scaled(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, PredictorError> {
        Ok(self
            .latent_rollout_scaled(x0, times)?
            .iter()
            .map(|y| self.reconstruct_scaled(&self.basis.lift(y)))
            .collect())
    }

    /// `x̂(t) = C exp(A_lift t) ψ(x₀)` in scaled units, evolving the full
    /// lifted state.
    pub fn simulate_lifted_scaled(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, PredictorError> {
        Self::check_times(times)?;
        let z0 = DVector::from_vec(self.lift_state_scaled(x0)?);
        Ok(times
            .iter()
            .map(|&t| (&self.c * (lifted_exp(&self.lifted, t) * &z0)).as_slice().to_vec())
            .collect())
    }

    /// Rollout from a physical initial condition, returned in physical units.
    pub fn simulate(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, PredictorError> {
        self.check(x0)?;
        let out = self.simulate_scaled(&self.scaling.apply(x0), times)?;
        Ok(out.iter().map(|x| self.scaling.invert(x)).collect())
    }

    /// `C A_lift ψ(x)` in scaled units.
    pub fn vector_field_scaled(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        let z = self.lift_state_scaled(x)?;
        let dz = self.basis.apply_lifted(&crate::linalg::to_row_major(&self.latent), &z);
        Ok(self.reconstruct_scaled(&dz))
    }

    /// Predicted velocity at a physical state, in physical units.
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        self.check(x)?;
        let v = self.vector_field_scaled(&self.scaling.apply(x))?;
        Ok(self.scaling.invert_velocity(&v))
    }

    pub fn to_json(&self) -> Result<String, PredictorError> {
        serde_json::to_string_pretty(&ModelRecord::from(self)).map_err(|e| PredictorError::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PredictorError::Malformed(e.to_string()))?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => return Err(PredictorError::Version { found: v as u32 }),
            None => return Err(PredictorError::Malformed("missing version".into())),
        }
        let record: ModelRecord =
            serde_json::from_value(value).map_err(|e| PredictorError::Malformed(e.to_string()))?;
        record.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        fs::write(path, self.to_json()?).map_err(|source| PredictorError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let text =
            fs::read_to_string(path).map_err(|source| PredictorError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    version: u32,
    d: usize,
    p_bar: usize,
    #[serde(rename = "D")]
    lifted_dim: usize,
    flow: CouplingFlow,
    #[serde(rename = "N")]
    n: MatrixRecord,
    #[serde(rename = "Q")]
    q: MatrixRecord,
    #[serde(rename = "R")]
    r: MatrixRecord,
    epsilon: f64,
    #[serde(rename = "C")]
    c: MatrixRecord,
    scaling: ScalingRecord,
    multi_indices: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demo_time: Option<f64>,
}

impl From<&LinearPredictor> for ModelRecord {
    fn from(m: &LinearPredictor) -> Self {
        Self {
            version: MODEL_VERSION,
            d: m.dim(),
            p_bar: m.basis.max_order(),
            lifted_dim: m.basis.len(),
            flow: m.flow.clone(),
            n: m.factors.n().into(),
            q: m.factors.q().into(),
            r: m.factors.r().into(),
            epsilon: m.factors.epsilon(),
            c: (&m.c).into(),
            scaling: m.scaling.clone(),
            multi_indices: m.basis.indices().to_vec(),
            demo_time: m.demo_time,
        }
    }
}

impl TryFrom<ModelRecord> for LinearPredictor {
    type Error = PredictorError;
    fn try_from(r: ModelRecord) -> Result<Self, PredictorError> {
        let matrix = |name: &str, m: &MatrixRecord| {
            m.to_matrix().ok_or_else(|| PredictorError::Malformed(format!("{name}: data does not match shape")))
        };
        if r.flow.dim() != r.d {
            return Err(PredictorError::Malformed(format!("flow dimension {} ≠ d = {}", r.flow.dim(), r.d)));
        }
        let factors = HurwitzFactors::new(matrix("N", &r.n)?, matrix("Q", &r.q)?, matrix("R", &r.r)?, r.epsilon)?;
        let model = LinearPredictor::new(r.flow, factors, r.p_bar, matrix("C", &r.c)?, r.scaling)?;
        if model.basis.len() != r.lifted_dim || model.basis.indices() != r.multi_indices.as_slice() {
            return Err(PredictorError::Malformed("multi-index list does not match d and p_bar".into()));
        }
        Ok(model.with_demo_time(r.demo_time))
    }
}
