//! Parameters and the two supported update rules (RMSProp, plain SGD),
//! plus the weight clipping that enforces the Wasserstein critic regime.

use std::collections::BTreeMap;

use super::tape::GradMap;
use super::{sc, Scalar, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensor. `clip_bound`, when set, records the box the
/// values are clamped into after critic updates.
#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub clip_bound: Option<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            clip_bound: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    RmsProp,
    Sgd,
}

#[derive(Clone, Copy, Debug)]
pub struct OptimConfig<T = f32> {
    pub kind: OptimKind,
    pub lr: T,
    /// RMSProp decay of the squared-gradient average.
    pub alpha: T,
    pub eps: T,
}

impl<T: Scalar> OptimConfig<T> {
    /// The default critic regime: RMSProp at 5e-5.
    pub fn rmsprop(lr: T) -> Self {
        OptimConfig {
            kind: OptimKind::RmsProp,
            lr,
            alpha: sc(0.9),
            eps: sc(1e-8),
        }
    }

    pub fn sgd(lr: T) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr,
            alpha: T::zero(),
            eps: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= T::zero() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

impl Default for OptimConfig<f32> {
    fn default() -> Self {
        OptimConfig::rmsprop(5e-5)
    }
}

/// Stateful optimizer. RMSProp keeps one squared-gradient accumulator per
/// parameter name; updates are deterministic given identical state and
/// gradients.
pub struct Optimizer<T: Scalar = f32> {
    pub config: OptimConfig<T>,
    state: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: BTreeMap::new(),
        })
    }

    /// Apply one update to every parameter. Each parameter must have a
    /// gradient in `grads`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter<T>>,
        grads: &GradMap<T>,
    ) -> Result<()> {
        for p in params {
            let g = grads.get(&p.name).ok_or_else(|| {
                Error::InvalidArgument(format!("missing gradient for parameter {:?}", p.name))
            })?;
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            match self.config.kind {
                OptimKind::Sgd => {
                    let lr = self.config.lr;
                    for (v, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *v = *v - lr * gv;
                    }
                }
                OptimKind::RmsProp => {
                    let sq = self
                        .state
                        .entry(p.name.clone())
                        .or_insert_with(|| vec![T::zero(); p.value.numel()]);
                    let (lr, alpha, eps) = (self.config.lr, self.config.alpha, self.config.eps);
                    for ((v, &gv), s) in
                        p.value.data_mut().iter_mut().zip(g.data()).zip(sq.iter_mut())
                    {
                        *s = alpha * *s + (T::one() - alpha) * gv * gv;
                        *v = *v - lr * gv / (s.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// RMSProp accumulators, for checkpointing. Empty for SGD.
    pub fn state(&self) -> &BTreeMap<String, Vec<T>> {
        &self.state
    }

    pub fn restore_state(&mut self, state: BTreeMap<String, Vec<T>>) {
        self.state = state;
    }
}

/// Clamp every value of every parameter into `[-bound, bound]` and record
/// the bound on the parameter. Values already inside are untouched.
pub fn clip_params<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    bound: T,
) -> Result<()> {
    if bound <= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "clip bound must be positive, got {bound}"
        )));
    }
    for p in params {
        for v in p.value.data_mut() {
            *v = (*v).max(-bound).min(bound);
        }
        p.clip_bound = Some(bound);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> Parameter<f64> {
        Parameter::new("p", Tensor::scalar(v))
    }

    fn grad_of(v: f64) -> GradMap<f64> {
        let mut g = GradMap::new();
        g.insert("p".to_string(), Tensor::scalar(v));
        g
    }

    #[test]
    fn sgd_subtracts_scaled_gradient() {
        let mut p = one_param(1.0);
        let mut opt = Optimizer::new(OptimConfig::sgd(1.0)).unwrap();
        opt.step([&mut p], &grad_of(0.25)).unwrap();
        assert_eq!(p.value.scalar_value().unwrap(), 0.75);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        for config in [OptimConfig::sgd(0.5), OptimConfig::rmsprop(0.5)] {
            let mut p = one_param(2.0);
            let mut opt = Optimizer::new(config).unwrap();
            opt.step([&mut p], &grad_of(0.0)).unwrap();
            assert_eq!(p.value.scalar_value().unwrap(), 2.0);
        }
    }

    #[test]
    fn rmsprop_matches_hand_recurrence() {
        // Two steps with constant gradient 1.0, computed by an independent
        // scalar recurrence.
        let (lr, alpha, eps) = (0.1f64, 0.9, 1e-8);
        let mut expect = 1.0f64;
        let mut sq = 0.0f64;
        for _ in 0..2 {
            sq = alpha * sq + (1.0 - alpha) * 1.0;
            expect -= lr * 1.0 / (sq.sqrt() + eps);
        }

        let mut p = one_param(1.0);
        let mut opt = Optimizer::new(OptimConfig {
            kind: OptimKind::RmsProp,
            lr,
            alpha,
            eps,
        })
        .unwrap();
        opt.step([&mut p], &grad_of(1.0)).unwrap();
        opt.step([&mut p], &grad_of(1.0)).unwrap();
        assert!((p.value.scalar_value().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = one_param(1.0);
        let mut opt = Optimizer::new(OptimConfig::sgd(1.0)).unwrap();
        let empty = GradMap::new();
        assert!(opt.step([&mut p], &empty).is_err());
    }

    #[test]
    fn clip_clamps_and_preserves_interior_values() {
        let mut p = Parameter::new(
            "w",
            Tensor::new(vec![3], vec![-5.0f64, 0.0, 5.0]).unwrap(),
        );
        clip_params([&mut p], 0.01).unwrap();
        assert_eq!(p.value.data(), &[-0.01, 0.0, 0.01]);
        assert_eq!(p.clip_bound, Some(0.01));

        let mut q = Parameter::new(
            "w2",
            Tensor::new(vec![2], vec![0.005f64, -0.003]).unwrap(),
        );
        clip_params([&mut q], 0.01).unwrap();
        assert_eq!(q.value.data(), &[0.005, -0.003]);
    }

    #[test]
    fn clip_rejects_non_positive_bound() {
        let mut p = one_param(1.0);
        assert!(clip_params([&mut p], 0.0).is_err());
        assert!(clip_params([&mut p], -1.0).is_err());
    }
}
