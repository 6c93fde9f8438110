//! Demonstrations, preprocessing into the training box, and synthetic data.
//!
//! Datasets are exchanged as CSV with header `demo,t,x1,...,xd[,v1,...,vd]`,
//! one row per sample. See [`Dataset::read_csv`].

mod io;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use synthetic::{synthetic_system, SyntheticConfig, SyntheticFlavor, SyntheticSystem, SyntheticTruth};

/// Samples per demonstration after resampling.
pub const DEFAULT_RESAMPLE: usize = 900;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("demo {demo}: time is not strictly increasing at sample {index}")]
    NonMonotoneTime { demo: String, index: usize },
    #[error("demo {demo}: non-finite value at sample {index}")]
    NonFinite { demo: String, index: usize },
    #[error("demo {demo}: needs at least {needed} samples, has {actual}")]
    TooFewSamples { demo: String, needed: usize, actual: usize },
    #[error("dimension {0} has zero extent and cannot be scaled")]
    DegenerateDimension(usize),
    #[error("expected {expected} demonstrations, found {actual}")]
    DemoCount { expected: usize, actual: usize },
}

/// One timestamped trajectory with positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub t: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
}

impl Demonstration {
    /// Validates lengths, finiteness and strictly increasing time.
    pub fn new(id: impl Into<String>, t: Vec<f64>, pos: Vec<Vec<f64>>, vel: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let id = id.into();
        let dim = pos.first().map_or(0, Vec::len);
        if t.len() != pos.len() || t.len() != vel.len() {
            return Err(DataError::Schema(format!(
                "demo {id}: {} times, {} positions, {} velocities",
                t.len(),
                pos.len(),
                vel.len()
            )));
        }
        for (index, ((ti, p), v)) in t.iter().zip(&pos).zip(&vel).enumerate() {
            if p.len() != dim || v.len() != dim {
                return Err(DataError::Schema(format!("demo {id}: ragged sample {index}")));
            }
            if !ti.is_finite() || p.iter().chain(v).any(|x| !x.is_finite()) {
                return Err(DataError::NonFinite { demo: id, index });
            }
            if index > 0 && *ti <= t[index - 1] {
                return Err(DataError::NonMonotoneTime { demo: id, index });
            }
        }
        Ok(Self { id, t, pos, vel })
    }

    /// Builds a demonstration whose velocities come from finite differences.
    pub fn from_positions(id: impl Into<String>, t: Vec<f64>, pos: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let id = id.into();
        let vel = finite_diff_velocities(&pos, &t).map_err(|e| match e {
            DataError::TooFewSamples { needed, actual, .. } => {
                DataError::TooFewSamples { demo: id.clone(), needed, actual }
            }
            other => other,
        })?;
        Self::new(id, t, pos, vel)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pos.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0) - self.t.first().copied().unwrap_or(0.0)
    }

    /// Sample times shifted so the first is zero.
    pub fn relative_times(&self) -> Vec<f64> {
        let t0 = self.t[0];
        self.t.iter().map(|t| t - t0).collect()
    }

    /// Linear interpolation of positions and velocities at `n` uniformly
    /// spaced times over `[t₀, t_end]`.
    pub fn resample(&self, n: usize) -> Result<Self, DataError> {
        if self.len() < 2 || n < 2 {
            return Err(DataError::TooFewSamples { demo: self.id.clone(), needed: 2, actual: self.len().min(n) });
        }
        let (t0, t1) = (self.t[0], self.t[self.len() - 1]);
        let mut t = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        let mut seg = 0;
        for k in 0..n {
            let tk = if k == n - 1 { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 };
            while seg + 2 < self.len() && self.t[seg + 1] < tk {
                seg += 1;
            }
            let w = ((tk - self.t[seg]) / (self.t[seg + 1] - self.t[seg])).clamp(0.0, 1.0);
            let lerp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect::<Vec<_>>();
            t.push(tk);
            pos.push(lerp(&self.pos[seg], &self.pos[seg + 1]));
            vel.push(lerp(&self.vel[seg], &self.vel[seg + 1]));
        }
        Self::new(self.id.clone(), t, pos, vel)
    }
}

/// Per-dimension affine map into the training box: `x_s = (x − offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRecord {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ScalingRecord {
    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.offset).zip(&self.scale).map(|((x, o), s)| (x - o) / s).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.offset).zip(&self.scale).map(|((x, o), s)| x * s + o).collect()
    }

    pub fn apply_velocity(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    pub fn invert_velocity(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }

    /// Applies this scaling to every demo, e.g. to map validation demos into
    /// the coordinates fixed by the training split.
    pub fn apply_dataset(&self, dataset: &Dataset) -> Dataset {
        Dataset {
            name: dataset.name.clone(),
            dim: dataset.dim,
            demos: dataset.demos.iter().map(|d| self.apply_demo(d)).collect(),
            scaling: Some(self.clone()),
        }
    }

    fn apply_demo(&self, demo: &Demonstration) -> Demonstration {
        Demonstration {
            id: demo.id.clone(),
            t: demo.t.clone(),
            pos: demo.pos.iter().map(|p| self.apply(p)).collect(),
            vel: demo.vel.iter().map(|v| self.apply_velocity(v)).collect(),
        }
    }
}

/// Named collection of demonstrations sharing a state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub demos: Vec<Demonstration>,
    /// Set once the dataset has been mapped into the training box.
    pub scaling: Option<ScalingRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, demos: Vec<Demonstration>) -> Result<Self, DataError> {
        let dim = demos.first().map_or(0, Demonstration::dim);
        if demos.is_empty() || dim == 0 {
            return Err(DataError::Schema("dataset has no samples".into()));
        }
        if let Some(bad) = demos.iter().find(|d| d.dim() != dim) {
            return Err(DataError::Schema(format!("demo {} has dimension {}, expected {dim}", bad.id, bad.dim())));
        }
        Ok(Self { name: name.into(), dim, demos, scaling: None })
    }

    pub fn sample_count(&self) -> usize {
        self.demos.iter().map(Demonstration::len).sum()
    }

    /// Mean demonstration duration.
    pub fn demo_time(&self) -> f64 {
        self.demos.iter().map(Demonstration::duration).sum::<f64>() / self.demos.len() as f64
    }

    pub fn resample(&self, n: usize) -> Result<Self, DataError> {
        let demos = self.demos.iter().map(|d| d.resample(n)).collect::<Result<_, _>>()?;
        Ok(Self { demos, ..self.clone() })
    }

    /// Mean of the final positions.
    pub fn mean_endpoint(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for d in &self.demos {
            for (m, x) in mean.iter_mut().zip(&d.pos[d.len() - 1]) {
                *m += x / self.demos.len() as f64;
            }
        }
        mean
    }

    /// Translates `anchor` (default: the mean endpoint) to the origin and
    /// scales each dimension by its largest absolute value, so positions lie
    /// in `[−1, 1]^d`.
    pub fn preprocess(&self, anchor: Option<&[f64]>) -> Result<(Self, ScalingRecord), DataError> {
        let offset = match anchor {
            Some(a) if a.len() != self.dim => {
                return Err(DataError::Schema(format!("anchor has length {}, expected {}", a.len(), self.dim)))
            }
            Some(a) => a.to_vec(),
            None => self.mean_endpoint(),
        };
        let mut scale = vec![0.0f64; self.dim];
        for d in &self.demos {
            for p in &d.pos {
                for (i, s) in scale.iter_mut().enumerate() {
                    *s = s.max((p[i] - offset[i]).abs());
                }
            }
        }
        if let Some(i) = scale.iter().position(|&s| !(s > 0.0)) {
            return Err(DataError::DegenerateDimension(i));
        }
        let record = ScalingRecord { offset, scale };
        let demos = self.demos.iter().map(|d| record.apply_demo(d)).collect();
        Ok((Self { name: self.name.clone(), dim: self.dim, demos, scaling: Some(record.clone()) }, record))
    }

    /// First `n_train` demos for training, the rest for validation.
    pub fn split(&self, n_train: usize) -> Result<(Self, Self), DataError> {
        if n_train == 0 || n_train >= self.demos.len() {
            return Err(DataError::DemoCount { expected: n_train + 1, actual: self.demos.len() });
        }
        let (a, b) = self.demos.split_at(n_train);
        let part = |demos: &[Demonstration]| Self { demos: demos.to_vec(), ..self.clone() };
        Ok((part(a), part(b)))
    }

    /// Four training and three validation demos; requires exactly seven.
    pub fn split_train_val(&self) -> Result<(Self, Self), DataError> {
        if self.demos.len() != 7 {
            return Err(DataError::DemoCount { expected: 7, actual: self.demos.len() });
        }
        self.split(4)
    }
}

/// Sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub d: usize,
    pub n_demos: usize,
    pub source: String,
}

/// Second-order finite differences: three-point central-type formulas in the
/// interior and one-sided three-point formulas at both ends. Handles
/// non-uniform time steps.
pub fn finite_diff_velocities(pos: &[Vec<f64>], t: &[f64]) -> Result<Vec<Vec<f64>>, DataError> {
    let n = t.len();
    if n < 3 || pos.len() != n {
        return Err(DataError::TooFewSamples { demo: String::new(), needed: 3, actual: n.min(pos.len()) });
    }
    let combine = |k: [usize; 3], w: [f64; 3]| -> Vec<f64> {
        (0..pos[0].len()).map(|i| w[0] * pos[k[0]][i] + w[1] * pos[k[1]][i] + w[2] * pos[k[2]][i]).collect()
    };
    let mut vel = Vec::with_capacity(n);
    {
        let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
        vel.push(combine(
            [0, 1, 2],
            [-(2.0 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))],
        ));
    }
    for k in 1..n - 1 {
        let (h1, h2) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        vel.push(combine(
            [k - 1, k, k + 1],
            [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))],
        ));
    }
    {
        let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
        vel.push(combine(
            [n - 3, n - 2, n - 1],
            [h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (h1 + 2.0 * h2) / (h2 * (h1 + h2))],
        ));
    }
    Ok(vel)
}
