//! Adam with decoupled-from-nothing weight decay: the decay term is added
//! straight into the gradient (classic L2 regularization), uniformly for
//! every parameter group.

/// First-moment decay.
pub const BETA1: f64 = 0.9;
/// Second-moment decay.
pub const BETA2: f64 = 0.999;
/// Denominator guard.
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    weight_decay: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    /// Optimizer state for parameter groups of the given sizes.
    pub fn new(learning_rate: f64, weight_decay: f64, group_sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            weight_decay,
            step_count: 0,
            first_moment: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    /// One bias-corrected update across all groups. Group count and sizes
    /// must match the constructor's layout.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        assert_eq!(
            params.len(),
            self.first_moment.len(),
            "group count mismatch"
        );
        assert_eq!(grads.len(), params.len(), "gradient group count mismatch");
        self.step_count += 1;
        let bias1 = 1.0 - BETA1.powi(self.step_count as i32);
        let bias2 = 1.0 - BETA2.powi(self.step_count as i32);
        for (gi, param) in params.iter_mut().enumerate() {
            let grad = &grads[gi];
            assert_eq!(param.len(), grad.len(), "group {gi} size mismatch");
            let m = &mut self.first_moment[gi];
            let v = &mut self.second_moment[gi];
            for i in 0..param.len() {
                let g = grad[i] + self.weight_decay * param[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}
