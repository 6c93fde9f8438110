//! Ground-truth systems that are exactly linear in known coordinates.
//!
//! A random Hurwitz matrix `Ā` and a random coupling flow `g` with `g(0) = 0`
//! define `f(x) = J_g(x)⁻¹ Ā g(x)`, so `y = g(x)` obeys `ẏ = Ā y`. Trajectories
//! are integrated with classical Runge-Kutta and the exact `ẋ = f(x)` is
//! recorded at each sample.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Demonstration};
use crate::flow::{CouplingFlow, FlowArchitecture, FlowConfig};
use crate::hurwitz::{self, HurwitzFactors, DEFAULT_EPSILON};
use crate::linalg::MatrixRecord;
use crate::predictor::matrix_exp;

/// How the ground-truth coordinates are related to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticFlavor {
    /// `g` is the identity: a plain linear system.
    Linear,
    /// `g` is a random mild coupling flow.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub dim: usize,
    pub flavor: SyntheticFlavor,
    pub trajectories: usize,
    pub samples: usize,
    /// Integrator step in seconds; sample spacing is a whole multiple of a
    /// step no longer than this.
    pub step: f64,
    /// Radius of the circle holding the initial conditions.
    pub radius: f64,
    pub flow_layers: usize,
    pub flow_hidden: Vec<usize>,
    pub weight_std: f64,
    /// Duration in units of the slowest latent time constant.
    pub horizon: f64,
    /// Accepted range for the slowest decay rate `−max Re λ(Ā)`.
    pub min_decay: f64,
    /// Accepted bound on the fastest decay rate and on `|Im λ(Ā)|`.
    pub max_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 2,
            flavor: SyntheticFlavor::Coupled,
            trajectories: 3,
            samples: 600,
            step: 1e-3,
            radius: 1.0,
            flow_layers: 2,
            flow_hidden: vec![8],
            weight_std: 0.25,
            horizon: 5.0,
            min_decay: 0.3,
            max_rate: 3.0,
        }
    }
}

/// The exact coordinates and latent matrix behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub flow: CouplingFlow,
    pub factors: HurwitzFactors,
    pub a: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    flow: CouplingFlow,
    #[serde(rename = "N")]
    n: MatrixRecord,
    #[serde(rename = "Q")]
    q: MatrixRecord,
    #[serde(rename = "R")]
    r: MatrixRecord,
    epsilon: f64,
    #[serde(rename = "A")]
    a: MatrixRecord,
}

impl SyntheticTruth {
    /// `f(x) = J_g(x)⁻¹ Ā g(x)`.
    pub fn vector_field(&self, x: &[f64]) -> Vec<f64> {
        let y = DVector::from_vec(self.flow.forward(x));
        let rhs = &self.a * y;
        let j = self.flow.jacobian(x);
        j.lu().solve(&rhs).expect("coupling flow Jacobians are invertible").as_slice().to_vec()
    }

    /// Closed-form state at time `t`: `g⁻¹(exp(Ā t) g(x₀))`.
    pub fn exact_state(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let y = matrix_exp(&self.a, t) * DVector::from_vec(self.flow.forward(x0));
        self.flow.inverse(y.as_slice()).expect("no final tanh on ground-truth flows")
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        let record = TruthRecord {
            flow: self.flow.clone(),
            n: self.factors.n().into(),
            q: self.factors.q().into(),
            r: self.factors.r().into(),
            epsilon: self.factors.epsilon(),
            a: (&self.a).into(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    pub dataset: Dataset,
    pub truth: SyntheticTruth,
}

fn rk4(truth: &SyntheticTruth, x: &[f64], h: f64) -> Vec<f64> {
    let axpy = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(a, k)| a + s * k).collect::<Vec<_>>();
    let k1 = truth.vector_field(x);
    let k2 = truth.vector_field(&axpy(x, &k1, h / 2.0));
    let k3 = truth.vector_field(&axpy(x, &k2, h / 2.0));
    let k4 = truth.vector_field(&axpy(x, &k3, h));
    (0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Draws a ground-truth system and integrates trajectories from evenly
/// spaced points on a circle (the first two coordinates; others start at 0).
///
/// `Ā` is redrawn until its slowest decay rate lies in
/// `[min_decay, max_rate]` and all eigenvalues satisfy `|Re λ|, |Im λ| ≤ max_rate`.
pub fn synthetic_system(config: &SyntheticConfig) -> Result<SyntheticSystem, DataError> {
    let bad = |m: &str| DataError::Schema(format!("synthetic config: {m}"));
    if !(2..=3).contains(&config.dim) {
        return Err(bad("dim must be 2 or 3"));
    }
    if config.trajectories == 0 || config.samples < 3 || !(config.step > 0.0) || !(config.horizon > 0.0) {
        return Err(bad("trajectories ≥ 1, samples ≥ 3, positive step and horizon required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (factors, a, eigs) = (0..10_000)
        .find_map(|_| {
            let f = HurwitzFactors::random(config.dim, 1.0, DEFAULT_EPSILON, &mut rng);
            let a = f.assemble();
            let eigs = hurwitz::spectrum(&a).ok()?;
            let slowest = -hurwitz::max_real_part(&eigs);
            let ok = slowest >= config.min_decay
                && eigs.iter().all(|l| -l.re <= config.max_rate && l.im.abs() <= config.max_rate);
            ok.then_some((f, a, eigs))
        })
        .ok_or_else(|| bad("no Hurwitz matrix met the decay bounds"))?;

    let flow_config =
        FlowConfig { layers: config.flow_layers, hidden: config.flow_hidden.clone(), final_tanh: false };
    let arch = FlowArchitecture::alternating(config.dim, &flow_config).map_err(|e| bad(&e.to_string()))?;
    let flow = match config.flavor {
        SyntheticFlavor::Linear => CouplingFlow::identity(arch),
        SyntheticFlavor::Coupled => CouplingFlow::random_weights(arch, config.weight_std, rng.random()),
    };
    let truth = SyntheticTruth { flow, factors, a };

    let duration = config.horizon / -hurwitz::max_real_part(&eigs);
    let interval = duration / (config.samples - 1) as f64;
    let substeps = (interval / config.step).ceil().max(1.0) as usize;
    let h = interval / substeps as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let demos = (0..config.trajectories)
        .map(|k| {
            let angle = phase + std::f64::consts::TAU * k as f64 / config.trajectories as f64;
            let mut x = vec![0.0; config.dim];
            x[0] = config.radius * angle.cos();
            x[1] = config.radius * angle.sin();
            let mut t = Vec::with_capacity(config.samples);
            let mut pos = Vec::with_capacity(config.samples);
            let mut vel = Vec::with_capacity(config.samples);
            for s in 0..config.samples {
                if s > 0 {
                    for _ in 0..substeps {
                        x = rk4(&truth, &x, h);
                    }
                }
                t.push(s as f64 * interval);
                vel.push(truth.vector_field(&x));
                pos.push(x.clone());
            }
            Demonstration::new(k.to_string(), t, pos, vel)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = Dataset::new(format!("synthetic-{}", config.seed), demos)?;
    Ok(SyntheticSystem { dataset, truth })
}
