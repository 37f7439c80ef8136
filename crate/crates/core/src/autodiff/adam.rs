use super::{AutodiffError, Scalar, Tensor};

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments congruent with `params`.
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            first_moment: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<T>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<T>] {
        &self.second_moment
    }

    /// Applies one update to every parameter that requires gradients, then
    /// clears their gradients. Fails without touching anything if such a
    /// parameter has no gradient.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len() {
            return Err(AutodiffError::Contract {
                reason: format!(
                    "optimizer tracks {} parameters, got {}",
                    self.first_moment.len(),
                    params.len()
                ),
            });
        }
        for (index, p) in params.iter().enumerate() {
            if p.len() != self.first_moment[index].len() {
                return Err(AutodiffError::Contract {
                    reason: format!("parameter {index} changed size"),
                });
            }
            if p.requires_grad() && p.grad().is_none() {
                return Err(AutodiffError::MissingGradient { index });
            }
        }
        self.step_count += 1;
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            let values = p.values_mut();
            for i in 0..values.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.clear_grad();
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], state: &mut AdamState<T>) -> Result<(), AutodiffError> {
    state.step(params)
}
