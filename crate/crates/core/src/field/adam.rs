use super::ParamVector;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(len: usize, lr: f32) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - (self.beta1 as f64).powi(t);
        let c2 = 1.0 - (self.beta2 as f64).powi(t);
        let step_size = (self.lr as f64 / c1) as f32;
        let inv_c2_sqrt = (1.0 / c2.sqrt()) as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() * inv_c2_sqrt + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(
    state: &AdamState,
    params: &ParamVector,
    grads: &ParamVector,
) -> Result<(AdamState, ParamVector)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.update(&mut params.values, &grads.values)?;
    Ok((state, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params() {
        let s = AdamState::new(3, 0.1);
        let p = ParamVector::new(vec![1.0, -2.0, 3.0]);
        let (s2, p2) = adam_step(&s, &p, &ParamVector::zeros(3)).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let s = AdamState::new(2, 0.0);
        let p = ParamVector::new(vec![1.0, 2.0]);
        let (_, p2) = adam_step(&s, &p, &ParamVector::new(vec![0.5, -3.0])).unwrap();
        assert_eq!(p2, p);
    }

    #[test]
    fn single_step_by_hand() {
        // m_hat = 1, v_hat = 1, p' = 1 - 0.1 / (1 + 1e-8)
        let s = AdamState::new(1, 0.1);
        let (_, p2) = adam_step(
            &s,
            &ParamVector::new(vec![1.0]),
            &ParamVector::new(vec![1.0]),
        )
        .unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p2.values[0] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn length_mismatch_errors() {
        let s = AdamState::new(2, 0.1);
        assert!(adam_step(&s, &ParamVector::zeros(3), &ParamVector::zeros(3)).is_err());
    }
}
