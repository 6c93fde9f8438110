/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "adam: gradient length mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powf(self.step as f64);
        let c2 = 1.0 - self.beta2.powf(self.step as f64);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..10 {
            s.step(&mut p, &[0.0, 0.0], 0.1);
        }
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.5, -3.0, 1e-9];
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        s.step(&mut p, &g, 1e-3);
        for k in 0..3 {
            let expected = 1.0 - 1e-3 * g[k] / (g[k].abs() + 1e-8);
            assert!((p[k] - expected).abs() < 1e-15, "{k}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut x = vec![0.8, -0.5, 0.3];
        let mut s = AdamState::new(3);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            s.step(&mut x, &g, 1e-2);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
    }
}
