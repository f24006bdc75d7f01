use serde::{Deserialize, Serialize};

use super::Tensor;

/// Adam with decoupled weight decay and global gradient-norm clipping.
///
/// Learning-rate scheduling is the caller's job; see [`step_decay_lr`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Non-positive disables clipping.
    pub clip_norm: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// What one [`AdamState::step`] did, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64, clip_norm: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies one update from each parameter's accumulated `grad`, then
    /// clears the gradients. Parameters without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, params: &mut [Tensor]) -> StepReport {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        let sq: f64 = params
            .iter()
            .filter_map(|p| p.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        let grad_norm = sq.sqrt();
        let clipped = self.clip_norm > 0.0 && grad_norm > self.clip_norm;
        let scale = if clipped { self.clip_norm / grad_norm } else { 1.0 };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (k, p) in params.iter_mut().enumerate() {
            let grad = p.grad().map(|g| g.to_vec());
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            assert_eq!(m.len(), p.len(), "moment shape mismatch");
            let values = p.values_mut();
            for i in 0..values.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i] * scale);
                values[i] -= self.lr * self.weight_decay * values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        StepReport { grad_norm, clipped }
    }
}

/// `base * factor^(epoch / every)`.
pub fn step_decay_lr(base: f64, epoch: usize, every: usize, factor: f64) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((epoch / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap().with_grad()
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = vec![param(&[1.0, -2.0, 3.5])];
        p[0].accumulate_grad(&[0.0, 0.0, 0.0]);
        let mut adam = AdamState::new(&p, 0.001, 0.0, 2.0);
        adam.step(&mut p);
        assert_eq!(p[0].values(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn single_scalar_step_matches_hand_formula() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1.
        let mut p = vec![param(&[0.5])];
        p[0].accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(&p, 0.001, 0.0, 0.0);
        adam.step(&mut p);
        let expected = 0.5 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_gradients_at_twice_the_limit() {
        // grads (0, 4) have norm 4; clip 2 must act exactly like grads (0, 2).
        let mut clipped = vec![param(&[0.0, 0.0])];
        clipped[0].accumulate_grad(&[0.0, 4.0]);
        let mut a = AdamState::new(&clipped, 0.01, 0.0, 2.0);
        let report = a.step(&mut clipped);
        assert!(report.clipped);
        assert_eq!(report.grad_norm, 4.0);

        let mut plain = vec![param(&[0.0, 0.0])];
        plain[0].accumulate_grad(&[0.0, 2.0]);
        let mut b = AdamState::new(&plain, 0.01, 0.0, 0.0);
        b.step(&mut plain);
        assert_eq!(clipped[0].values(), plain[0].values());
        // Second moments see the halved gradient too.
        assert_eq!(a.second, b.second);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = vec![param(&[2.0])];
        p[0].accumulate_grad(&[0.0]);
        let mut adam = AdamState::new(&p, 0.1, 0.5, 0.0);
        adam.step(&mut p);
        assert!((p[0].values()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn lr_decays_every_120_epochs() {
        assert_eq!(step_decay_lr(1e-3, 0, 120, 0.1), 1e-3);
        assert_eq!(step_decay_lr(1e-3, 119, 120, 0.1), 1e-3);
        assert!((step_decay_lr(1e-3, 120, 120, 0.1) - 1e-4).abs() < 1e-18);
        assert!((step_decay_lr(1e-3, 250, 120, 0.1) - 1e-5).abs() < 1e-18);
    }
}
