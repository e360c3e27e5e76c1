//! Adam optimizer over named parameter blocks.

use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Optimizer state: step count, per-block moment buffers, and the learning
/// rate with its per-epoch decay factor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    block_names: Vec<String>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    learning_rate: f64,
    epoch_decay: f64,
}

impl AdamState {
    /// `blocks` lists (name, length) for every parameter block, in the order
    /// they will be passed to [`AdamState::update`].
    pub fn new(blocks: &[(String, usize)], learning_rate: f64, epoch_decay: f64) -> Result<Self> {
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(Error::Config("Adam learning rate must be positive".into()));
        }
        if epoch_decay <= 0.0 || epoch_decay > 1.0 {
            return Err(Error::Config("epoch decay must lie in (0, 1]".into()));
        }
        Ok(AdamState {
            step: 0,
            block_names: blocks.iter().map(|(n, _)| n.clone()).collect(),
            first_moment: blocks.iter().map(|&(_, len)| vec![0.0; len]).collect(),
            second_moment: blocks.iter().map(|&(_, len)| vec![0.0; len]).collect(),
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            learning_rate,
            epoch_decay,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Multiply the learning rate by the configured decay factor.
    pub fn apply_epoch_decay(&mut self) {
        self.learning_rate *= self.epoch_decay;
    }

    /// One bias-corrected Adam step over all blocks; increments the step
    /// count once. Gradients must be finite and shapes must match the state.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch {
                context: "adam block count".into(),
                expected: self.first_moment.len(),
                got: params.len().max(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != self.first_moment[i].len() {
                return Err(Error::ShapeMismatch {
                    context: format!("adam block `{}`", self.block_names[i]),
                    expected: self.first_moment[i].len(),
                    got: p.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: self.block_names[i].clone(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_state(lr: f64, decay: f64) -> AdamState {
        AdamState::new(&[("w".to_string(), 1)], lr, decay).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = scalar_state(0.001, 1.0);
        let mut p = [3.25];
        state.update(&mut [&mut p], &[&[0.0]]).unwrap();
        assert_eq!(p[0], 3.25);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn single_step_moves_by_learning_rate() {
        // g=1 at step 1: m̂=1, v̂=1, so Δ = lr / (1 + ε) ≈ lr.
        let mut state = scalar_state(0.001, 1.0);
        let mut p = [0.0];
        state.update(&mut [&mut p], &[&[1.0]]).unwrap();
        assert!(p[0] < 0.0);
        assert_abs_diff_eq!(p[0], -0.001, epsilon = 1e-9);
    }

    #[test]
    fn epoch_decay_scales_learning_rate() {
        let mut state = scalar_state(0.001, 0.95);
        state.apply_epoch_decay();
        assert_abs_diff_eq!(state.learning_rate(), 0.00095, epsilon = 1e-18);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut state = AdamState::new(
            &[("trunk.w0".to_string(), 2), ("trunk.b0".to_string(), 1)],
            0.001,
            1.0,
        )
        .unwrap();
        let mut w = [1.0, 2.0];
        let mut b = [0.0];
        let err = state
            .update(&mut [&mut w, &mut b], &[&[0.0, 0.0], &[f64::NAN]])
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { block } => assert_eq!(block, "trunk.b0"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(AdamState::new(&[("w".into(), 1)], 0.0, 1.0).is_err());
        assert!(AdamState::new(&[("w".into(), 1)], 0.001, 0.0).is_err());
        assert!(AdamState::new(&[("w".into(), 1)], 0.001, 1.5).is_err());
    }
}
