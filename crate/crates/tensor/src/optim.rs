//! AdamW with decoupled weight decay, and the per-epoch exponential schedule.
//!
//! One update with learning rate `lr`, decay `wd` and step `t`:
//!
//! ```text
//! w = w * (1 - lr * wd)
//! m = b1 * m + (1 - b1) * g
//! v = b2 * v + (1 - b2) * g^2
//! w = w - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer state: one pair of moment buffers per parameter, in visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every `(name, parameter)` pair using the gradient
    /// buffers. Parameters without a gradient are treated as having zero
    /// gradient. Nothing is modified if any gradient is non-finite.
    pub fn step<'a, T: Scalar>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>) -> Result<()> {
        let mut params: Vec<(String, &'a mut Tensor<T>)> = params.into_iter().collect();
        self.step_visit(|f: &mut dyn FnMut(String, &mut Tensor<T>)| {
            for (name, p) in params.iter_mut() {
                f(name.clone(), p);
            }
        })
    }

    /// Visitor form of [`AdamW::step`]. `visit` is called twice and must
    /// present the same parameters in the same order both times.
    pub fn step_visit<T: Scalar>(
        &mut self,
        mut visit: impl FnMut(&mut dyn FnMut(String, &mut Tensor<T>)),
    ) -> Result<()> {
        let mut bad: Option<String> = None;
        let mut sizes = Vec::new();
        visit(&mut |name, p| {
            sizes.push(p.len());
            if bad.is_none() && p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(name);
            }
        });
        if let Some(name) = bad {
            return Err(TensorError::NonFiniteGradient { name });
        }
        if self.moments.is_empty() {
            self.moments = sizes
                .iter()
                .map(|&n| Moments {
                    first: vec![0.0; n],
                    second: vec![0.0; n],
                })
                .collect();
        }
        if self.moments.len() != sizes.len() || self.moments.iter().zip(&sizes).any(|(m, &n)| m.first.len() != n) {
            return Err(TensorError::InvalidArgument {
                op: "adamw",
                detail: "parameter set changed between steps".into(),
            });
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;
        let mut idx = 0;
        let moments = &mut self.moments;
        visit(&mut |_, p| {
            let mom = &mut moments[idx];
            idx += 1;
            let (values, grad) = p.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i].as_f64());
                let m = c.beta1 * mom.first[i] + (1.0 - c.beta1) * g;
                let v = c.beta2 * mom.second[i] + (1.0 - c.beta2) * g * g;
                mom.first[i] = m;
                mom.second[i] = v;
                let update = c.lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
                values[i] = T::lit(values[i].as_f64() * decay - update);
            }
        });
        Ok(())
    }
}

/// Learning rate after `epoch` epochs of multiplicative 0.99 decay.
pub fn exp_lr(lr0: f64, epoch: u32) -> f64 {
    lr0 * 0.99f64.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn pure_decay_step() {
        let mut w = one(1.0);
        w.accumulate_grad(&[0.0]);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.step([("w".to_string(), &mut w)]).unwrap();
        assert!((w.values()[0] - 0.999).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_grad_scales_by_exact_factor() {
        let mut w = Tensor::<f64>::new(&[3], vec![2.0, -0.5, 7.25]).unwrap();
        w.accumulate_grad(&[0.0; 3]);
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(cfg);
        opt.step([("w".to_string(), &mut w)]).unwrap();
        let f = 1.0 - cfg.lr * cfg.weight_decay;
        assert_eq!(w.values(), &[2.0 * f, -0.5 * f, 7.25 * f]);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        for g in [3.0, -0.2] {
            let mut w = one(0.5);
            w.accumulate_grad(&[g]);
            let mut opt = AdamW::new(AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            });
            opt.step([("w".to_string(), &mut w)]).unwrap();
            let delta = w.values()[0] - 0.5;
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15);
            assert!(delta.signum() == -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut w = one(1.0);
        w.accumulate_grad(&[f64::NAN]);
        let before = w.clone();
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step([("head.weight".to_string(), &mut w)]).unwrap_err();
        assert_eq!(
            err,
            TensorError::NonFiniteGradient {
                name: "head.weight".into()
            }
        );
        assert_eq!(w.values(), before.values());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        // f(w) = (w - 3)^2 run for 200 steps as an independent scalar oracle.
        let mut w = one(0.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..200 {
            w.zero_grad();
            let g = 2.0 * (w.values()[0] - 3.0);
            w.accumulate_grad(&[g]);
            opt.step([("w".to_string(), &mut w)]).unwrap();
        }
        assert!((w.values()[0] - 3.0).abs() < 0.05, "w = {}", w.values()[0]);
    }

    #[test]
    fn exponential_schedule() {
        assert_eq!(exp_lr(1e-3, 0), 1e-3);
        assert!((exp_lr(1e-3, 2) - 9.801e-4).abs() < 1e-15);
        assert!((exp_lr(1e-3, 100) - 3.660e-4).abs() < 5e-8);
    }
}
