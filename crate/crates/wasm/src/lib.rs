//! Browser bindings: explore the spectrum of a stable generator, draw the
//! vector field of a planar predictor and roll it out from a clicked point.

mod explorer;

pub use explorer::{Explorer, FACTOR_ENTRIES};

use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    inner: Explorer,
}

#[wasm_bindgen]
impl Demo {
    /// Random planar model from 12 factor entries (`N`, `Q`, `R` row-major).
    #[wasm_bindgen(constructor)]
    pub fn new(factors: &[f64], p_bar: usize, flow_std: f64, seed: u64) -> Result<Demo, JsError> {
        Explorer::random(factors, p_bar, flow_std, seed).map(|inner| Demo { inner }).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = fromJson)]
    pub fn from_json(text: &str) -> Result<Demo, JsError> {
        Explorer::from_json(text).map(|inner| Demo { inner }).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = latentSpectrum)]
    pub fn latent_spectrum(&self) -> Result<Vec<f64>, JsError> {
        self.inner.latent_spectrum().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = liftedSpectrum)]
    pub fn lifted_spectrum(&self) -> Result<Vec<f64>, JsError> {
        self.inner.lifted_spectrum().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = vectorField)]
    pub fn vector_field(&self, grid: usize) -> Result<Vec<f64>, JsError> {
        self.inner.vector_field(grid).map_err(|e| JsError::new(&e))
    }

    pub fn rollout(&self, x1: f64, x2: f64, duration: f64, samples: usize) -> Result<Vec<f64>, JsError> {
        self.inner.rollout(x1, x2, duration, samples).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = liftedDim)]
    pub fn lifted_dim(&self) -> usize {
        self.inner.lifted_dim()
    }
}
