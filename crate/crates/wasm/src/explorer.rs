use koopflow::data::ScalingRecord;
use koopflow::flow::{CouplingFlow, FlowArchitecture, FlowConfig};
use koopflow::hurwitz::{HurwitzFactors, DEFAULT_EPSILON};
use koopflow::predictor::LinearPredictor;
use nalgebra::{Complex, DMatrix};

/// Entries of `N`, `Q` and `R` (row-major, 2×2 each) in a planar model.
pub const FACTOR_ENTRIES: usize = 12;

/// A planar predictor in scaled units.
pub struct Explorer {
    model: LinearPredictor,
}

fn flatten(eigs: &[Complex<f64>]) -> Vec<f64> {
    eigs.iter().flat_map(|l| [l.re, l.im]).collect()
}

impl Explorer {
    /// Random flow with weight scale `flow_std` and factors from `factors`.
    pub fn random(factors: &[f64], p_bar: usize, flow_std: f64, seed: u64) -> Result<Self, String> {
        if factors.len() != FACTOR_ENTRIES {
            return Err(format!("expected {FACTOR_ENTRIES} factor entries, got {}", factors.len()));
        }
        let m = |k: usize| DMatrix::from_row_slice(2, 2, &factors[4 * k..4 * k + 4]);
        let factors = HurwitzFactors::new(m(0), m(1), m(2), DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        let config = FlowConfig { layers: 4, hidden: vec![16], final_tanh: false };
        let arch = FlowArchitecture::alternating(2, &config).map_err(|e| e.to_string())?;
        let flow = CouplingFlow::random_weights(arch, flow_std, seed);
        let lifted = koopflow::monomial::lifted_dimension(2, p_bar).ok_or("lift dimension overflows")?;
        let c = LinearPredictor::leading_block_reconstruction(2, lifted);
        let model = LinearPredictor::new(flow, factors, p_bar, c, ScalingRecord::identity(2)).map_err(|e| e.to_string())?;
        Ok(Self { model })
    }

    /// A trained planar model saved by the command-line tool.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let model = LinearPredictor::from_json(text).map_err(|e| e.to_string())?;
        if model.dim() != 2 {
            return Err(format!("the demo shows planar models, this one has dimension {}", model.dim()));
        }
        Ok(Self { model })
    }

    /// Latent eigenvalues as `[re, im, re, im, ...]`.
    pub fn latent_spectrum(&self) -> Result<Vec<f64>, String> {
        self.model.latent_spectrum().map(|e| flatten(&e)).map_err(|e| e.to_string())
    }

    /// Eigenvalues of the lifted generator as `[re, im, ...]`.
    pub fn lifted_spectrum(&self) -> Result<Vec<f64>, String> {
        self.model.lifted_spectrum().map(|e| flatten(&e)).map_err(|e| e.to_string())
    }

    /// `[x1, x2, dx1, dx2]` per node of a `grid × grid` lattice over `[−1, 1]²`.
    pub fn vector_field(&self, grid: usize) -> Result<Vec<f64>, String> {
        if grid < 2 {
            return Err("grid must be at least 2".into());
        }
        let at = |k: usize| -1.0 + 2.0 * k as f64 / (grid - 1) as f64;
        let mut out = Vec::with_capacity(4 * grid * grid);
        for j in 0..grid {
            for i in 0..grid {
                let x = [at(i), at(j)];
                let v = self.model.vector_field_scaled(&x).map_err(|e| e.to_string())?;
                out.extend([x[0], x[1], v[0], v[1]]);
            }
        }
        Ok(out)
    }

    /// `[t, x1, x2]` per sample of a rollout from `(x1, x2)` over `duration` seconds.
    pub fn rollout(&self, x1: f64, x2: f64, duration: f64, samples: usize) -> Result<Vec<f64>, String> {
        if samples < 2 || !(duration.is_finite() && duration > 0.0) {
            return Err("need at least 2 samples and a positive duration".into());
        }
        let times: Vec<f64> = (0..samples).map(|k| duration * k as f64 / (samples - 1) as f64).collect();
        let states = self.model.simulate_scaled(&[x1, x2], &times).map_err(|e| e.to_string())?;
        Ok(times.iter().zip(&states).flat_map(|(t, x)| [*t, x[0], x[1]]).collect())
    }

    pub fn lifted_dim(&self) -> usize {
        self.model.basis().len()
    }
}
