use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{BgnnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decoupled (AdamW-style) decay instead of L2 folded into the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decoupled: false,
        }
    }
}

/// Moment accumulators for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using each parameter's gradient slot.
    /// A missing gradient counts as zero. Gradient slots are left untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(BgnnError::shape(
                "adam_step",
                format!("{} parameters for {} moment slots", params.len(), self.first.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() {
                return Err(BgnnError::shape(
                    "adam_step",
                    format!("parameter {i} has {} values, moments {}", p.len(), self.first[i].len()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().map(<[f64]>::to_vec);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let values = p.data_mut();
            for k in 0..values.len() {
                let mut g = grad.as_ref().map_or(0.0, |g| g[k]);
                if !c.decoupled {
                    g += c.weight_decay * values[k];
                }
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                if c.decoupled {
                    values[k] -= c.lr * c.weight_decay * values[k];
                }
                values[k] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: Option<f64>) -> Tensor {
        let mut t = Tensor::scalar(v).with_requires_grad(true);
        if let Some(g) = g {
            t.accumulate_grad(&[g]).unwrap();
        }
        t
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(1.0, Some(1.0));
        let mut opt = AdamState::new(cfg, &[&p]);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_only_applies_decay() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(2.0, Some(0.0));
        let mut opt = AdamState::new(cfg, &[&p]);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data()[0], 2.0);

        let decoupled = AdamConfig {
            lr: 0.1,
            weight_decay: 0.01,
            decoupled: true,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(2.0, None);
        let mut opt = AdamState::new(decoupled, &[&p]);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);

        // coupled decay on a zero gradient shrinks toward zero
        let coupled = AdamConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(2.0, None);
        let mut opt = AdamState::new(coupled, &[&p]);
        opt.step(&mut [&mut p]).unwrap();
        assert!(p.data()[0] < 2.0);
    }

    #[test]
    fn identical_state_gives_identical_results() {
        let cfg = AdamConfig::default();
        let mut a = scalar_param(0.3, Some(-0.7));
        let mut b = a.clone();
        let mut sa = AdamState::new(cfg, &[&a]);
        let mut sb = sa.clone();
        sa.step(&mut [&mut a]).unwrap();
        sb.step(&mut [&mut b]).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = scalar_param(1.0, None);
        let mut opt = AdamState::new(AdamConfig::default(), &[&p]);
        let mut wrong = Tensor::zeros(2, 2);
        assert!(opt.step(&mut [&mut wrong]).is_err());
        assert!(opt.step(&mut []).is_err());
    }
}
