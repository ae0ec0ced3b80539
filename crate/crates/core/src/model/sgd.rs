use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ModelParams;

/// Learning-rate schedule and step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iteration: usize,
    /// `(drop_iter, dropped_lr)`: from iteration `drop_iter` on, use `dropped_lr`.
    pub lr_schedule: Option<(usize, f64)>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, lr_schedule: Option<(usize, f64)>) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            iteration: 0,
            lr_schedule,
        })
    }

    pub fn current_lr(&self) -> f64 {
        match self.lr_schedule {
            Some((drop_iter, dropped)) if self.iteration >= drop_iter => dropped,
            _ => self.learning_rate,
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub state: OptimState,
    velocity: Option<ModelParams<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(state: OptimState) -> Self {
        Self { state, velocity: None }
    }

    /// Applies one update. A non-finite gradient rejects the step and leaves
    /// both the parameters and the iteration counter untouched.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        let names: Vec<&'static str> = params.tensors().iter().map(|t| t.name).collect();
        let grad_tensors = grads.tensors();
        if grad_tensors.len() != names.len()
            || grad_tensors
                .iter()
                .zip(params.tensors())
                .any(|(g, p)| g.name != p.name || g.data.len() != p.data.len())
        {
            return Err(Error::InvalidArgument("gradient shapes do not match parameters".into()));
        }
        if let Some(bad) = grad_tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            log::error!(
                "rejecting SGD step at iteration {}: non-finite gradient in {}",
                self.state.iteration,
                bad.name
            );
            return Err(Error::NonFiniteGradient {
                tensor: bad.name.to_string(),
            });
        }

        let lr = T::lit(self.state.current_lr());
        let mu = T::lit(self.state.momentum);
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        for (((_, p), (_, v)), g) in params
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grad_tensors.iter())
        {
            for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g.data) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.state.iteration += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelShape, PoolingKind};

    fn params() -> ModelParams<f64> {
        let shape = ModelShape {
            d_raw: 2,
            hidden: 3,
            d: 2,
            pooling: PoolingKind::Vlad,
            k: 3,
            k_specific: 1,
            disc_hidden: 2,
            domains: 2,
        };
        ModelParams::init(&shape, 0).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_null_step() {
        let mut p = params();
        let before = p.clone();
        let mut sgd = Sgd::new(OptimState::new(0.1, 0.9, None).unwrap());
        sgd.step(&mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
        assert_eq!(sgd.state.iteration, 1);
    }

    #[test]
    fn scalar_step_without_momentum() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.classifier.bias[0] = 1.0;
        let mut sgd = Sgd::new(OptimState::new(0.1, 0.0, None).unwrap());
        sgd.step(&mut p, &g).unwrap();
        assert_eq!(p.classifier.bias[0], before.classifier.bias[0] - 0.1);
        assert_eq!(p.classifier.bias[1], before.classifier.bias[1]);
    }

    #[test]
    fn quadratic_bowl_shrinks_monotonically() {
        let mut p = params();
        let mut sgd = Sgd::new(OptimState::new(0.1, 0.0, None).unwrap());
        let norm = |p: &ModelParams<f64>| p.tensors().iter().flat_map(|t| t.data.iter()).map(|x| x * x).sum::<f64>();
        let mut last = norm(&p);
        for _ in 0..50 {
            // ∇‖p‖² = 2p
            let mut g = p.clone();
            for (_, d) in g.tensors_mut() {
                d.iter_mut().for_each(|x| *x *= 2.0);
            }
            sgd.step(&mut p, &g).unwrap();
            let now = norm(&p);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.encoder.hidden.bias[1] = f64::NAN;
        let mut sgd = Sgd::new(OptimState::new(0.1, 0.9, None).unwrap());
        let err = sgd.step(&mut p, &g).unwrap_err();
        assert!(err.to_string().contains("encoder.hidden.bias"));
        assert_eq!(p, before);
        assert_eq!(sgd.state.iteration, 0);
    }

    #[test]
    fn learning_rate_drops_on_schedule() {
        let mut s = OptimState::new(1e-3, 0.9, Some((1500, 1e-4))).unwrap();
        assert_eq!(s.current_lr(), 1e-3);
        s.iteration = 1500;
        assert_eq!(s.current_lr(), 1e-4);
        assert!(OptimState::new(0.0, 0.9, None).is_err());
    }
}
