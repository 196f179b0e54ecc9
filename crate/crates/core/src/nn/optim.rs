use super::tensor::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    /// Decay of the mean-square accumulator.
    pub rho: f64,
    pub learning_rate: f64,
    /// Added under the square root.
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            rho: 0.9,
            learning_rate: 0.001,
            epsilon: 1e-6,
        }
    }
}

/// Running mean of squared gradients for one parameter.
#[derive(Clone, Debug)]
pub struct RmsPropState<T> {
    pub accumulator: Tensor<T>,
}

impl<T: Real> RmsPropState<T> {
    pub fn new(shape: &[usize]) -> Self {
        RmsPropState {
            accumulator: Tensor::zeros(shape),
        }
    }

    /// `acc <- rho acc + (1 - rho) g^2; value <- value - lr g / sqrt(acc + eps)`
    pub fn step(&mut self, param: &mut Parameter<T>, cfg: &RmsPropConfig) {
        let rho = T::lit(cfg.rho);
        let one_minus = T::lit(1.0 - cfg.rho);
        let lr = T::lit(cfg.learning_rate);
        let eps = T::lit(cfg.epsilon);
        let grads = param.grad.data();
        for ((v, a), &g) in param
            .value
            .data_mut()
            .iter_mut()
            .zip(self.accumulator.data_mut())
            .zip(grads)
        {
            *a = rho * *a + one_minus * g * g;
            *v -= lr * g / (*a + eps).sqrt();
        }
    }
}

/// Optimizer over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    states: Vec<RmsPropState<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(config: RmsPropConfig, params: &[&mut Parameter<T>]) -> Self {
        RmsProp {
            config,
            states: params
                .iter()
                .map(|p| RmsPropState::new(p.value.shape()))
                .collect(),
        }
    }

    /// Updates every non-frozen parameter. `params` must list the same
    /// parameters, in the same order, as at construction.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            if !p.frozen {
                s.step(p, &self.config);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("s", Tensor::from_vec(&[1], vec![v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar(0.7, 0.0);
        let mut s = RmsPropState::new(&[1]);
        s.step(&mut p, &RmsPropConfig::default());
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        let mut p = scalar(1.0, 1.0);
        let mut s = RmsPropState::new(&[1]);
        s.step(&mut p, &RmsPropConfig::default());
        assert!((s.accumulator.data()[0] - 0.1).abs() < 1e-15);
        // 1 - 0.001 / sqrt(0.100001)
        assert!((p.value.data()[0] - 0.996_837_738_0).abs() < 1e-9);
        assert!((p.value.data()[0] - 0.996838).abs() < 5e-7);
    }

    #[test]
    fn accumulator_grows_under_constant_gradient() {
        let mut p = scalar(1.0, 0.5);
        let mut s = RmsPropState::new(&[1]);
        let cfg = RmsPropConfig::default();
        s.step(&mut p, &cfg);
        let first = s.accumulator.data()[0];
        s.step(&mut p, &cfg);
        assert!(s.accumulator.data()[0] > first);
        assert!(s.accumulator.data()[0] >= 0.0);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut a = scalar(1.0, 1.0);
        let mut b = scalar(1.0, 1.0);
        b.frozen = true;
        let mut opt = RmsProp::new(RmsPropConfig::default(), &[&mut a, &mut b]);
        opt.step(&mut [&mut a, &mut b]).unwrap();
        assert!(a.value.data()[0] < 1.0);
        assert_eq!(b.value.data()[0], 1.0);
        assert!(opt.step(&mut [&mut a]).is_err());
    }
}
