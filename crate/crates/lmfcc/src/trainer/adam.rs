//! Adam with bias correction, one state per parameter tensor.

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One update. `t` is the 1-based step count shared across tensors.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], t: u64, p: &AdamParams) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(params.len(), grads.len());
        let bc1 = 1.0 - p.beta1.powi(t as i32);
        let bc2 = 1.0 - p.beta2.powi(t as i32);
        for ((theta, &g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        let p = AdamParams::default();
        let mut state = AdamState::new(1);
        let mut theta = [1.0];
        state.update(&mut theta, &[0.5], 1, &p);
        // With bias correction the first update is ~lr * sign(g).
        assert!((theta[0] - (1.0 - 1e-3)).abs() < 1e-6, "theta = {}", theta[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = AdamParams::default();
        let mut state = AdamState::new(2);
        let mut theta = [0.3, -0.7];
        state.update(&mut theta, &[0.0, 0.0], 1, &p);
        assert_eq!(theta, [0.3, -0.7]);
    }

    #[test]
    fn descends_a_quadratic() {
        let p = AdamParams { learning_rate: 0.05, ..AdamParams::default() };
        let mut state = AdamState::new(1);
        let mut theta = [3.0];
        for t in 1..=400 {
            let g = 2.0 * theta[0];
            state.update(&mut theta, &[g], t, &p);
        }
        assert!(theta[0].abs() < 0.05, "theta = {}", theta[0]);
    }
}
