use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{arg_err, Result};

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecayMode {
    /// Added to the step after the adaptive scaling (AdamW).
    #[default]
    Decoupled,
    /// Added to the gradient before the moment updates.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_mode: WeightDecayMode::Decoupled,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(arg_err!(
                "adam betas must lie in [0,1), got ({}, {})",
                self.beta1,
                self.beta2
            ));
        }
        if !(self.eps > 0.0) {
            return Err(arg_err!("adam eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(arg_err!("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            config,
        })
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    grad.expect_shape(param.shape(), "adam_step gradient")?;
    state
        .first_moment
        .expect_shape(param.shape(), "adam_step first moment")?;
    if !(lr >= 0.0) {
        return Err(arg_err!("learning rate must be non-negative, got {lr}"));
    }
    let cfg = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
    let (lr_t, eps, wd) = (T::of(lr), T::of(cfg.eps), T::of(cfg.weight_decay));
    let coupled = cfg.decay_mode == WeightDecayMode::Coupled;

    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g0), mi), vi) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        let g = if coupled { g0 + wd * *p } else { g0 };
        *mi = b1 * *mi + one_b1 * g;
        *vi = b2 * *vi + one_b2 * g * g;
        let mhat = *mi * inv_bc1;
        let vhat = *vi * inv_bc2;
        let mut step = mhat / (vhat.sqrt() + eps);
        if !coupled {
            step = step + wd * *p;
        }
        *p = *p - lr_t * step;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> AdamConfig {
        AdamConfig {
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        let g = Tensor::<f64>::full(&[1], 1.0);
        let mut s = AdamState::new(&[1], cfg(0.0)).unwrap();
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-6);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_the_parameter() {
        let mut p = Tensor::<f64>::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&[2], cfg(0.0)).unwrap();
        adam_step(&mut p, &Tensor::zeros(&[2]), &mut s, 0.1).unwrap();
        assert_eq!(p, before);

        // Existing moments decay geometrically under a zero gradient.
        let mut s = AdamState::new(&[2], cfg(0.0)).unwrap();
        adam_step(&mut p, &Tensor::full(&[2], 1.0), &mut s, 0.0).unwrap();
        let (m1, v1) = (s.first_moment.data()[0], s.second_moment.data()[0]);
        adam_step(&mut p, &Tensor::zeros(&[2]), &mut s, 0.1).unwrap();
        assert!((s.first_moment.data()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((s.second_moment.data()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn two_steps_follow_the_recurrence() {
        let (g, lr, b1, b2, eps) = (0.5f64, 0.01, 0.9f64, 0.999f64, 1e-8);
        let mut p = Tensor::<f64>::full(&[1], 1.0);
        let grad = Tensor::<f64>::full(&[1], g);
        let mut s = AdamState::new(&[1], cfg(0.0)).unwrap();
        adam_step(&mut p, &grad, &mut s, lr).unwrap();
        adam_step(&mut p, &grad, &mut s, lr).unwrap();

        let mut theta = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.data()[0] - theta).abs() < 1e-15);
    }

    #[test]
    fn coupled_and_decoupled_decay_differ() {
        let g = Tensor::<f64>::full(&[1], 0.0);
        let mut a = Tensor::<f64>::full(&[1], 1.0);
        let mut b = a.clone();
        let mut sa = AdamState::new(&[1], cfg(0.1)).unwrap();
        let mut sb = AdamState::new(
            &[1],
            AdamConfig {
                decay_mode: WeightDecayMode::Coupled,
                ..cfg(0.1)
            },
        )
        .unwrap();
        adam_step(&mut a, &g, &mut sa, 0.01).unwrap();
        adam_step(&mut b, &g, &mut sb, 0.01).unwrap();
        // AdamW: 1 - lr*wd; coupled: the decay gradient is normalized away to a unit step.
        assert!((a.data()[0] - 0.999).abs() < 1e-12);
        assert!((b.data()[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_betas() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut s = AdamState::new(&[2], cfg(0.0)).unwrap();
        assert!(adam_step(&mut p, &Tensor::zeros(&[3]), &mut s, 0.1).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..cfg(0.0)
        };
        assert!(AdamState::<f64>::new(&[1], bad).is_err());
    }
}
