use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Parameter};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with global-norm clipping.
///
/// Sparse parameters are updated lazily: only rows that received
/// gradient in the current step move, and their moments decay only then.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Matrix, Matrix)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Adam {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips, updates and zeroes the gradients of `params`. The parameter
    /// list must be the same (in order and shape) on every call.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<(), NnError> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let (r, c) = p.value.shape();
                    (Matrix::zeros(r, c), Matrix::zeros(r, c))
                })
                .collect();
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|(m, p)| m.0.shape() != p.value.shape())
        {
            return Err(NnError::Usage("optimizer called with a different parameter set".into()));
        }
        for p in params.iter() {
            let bad = if p.is_sparse() {
                p.touched_rows().iter().any(|&r| p.grad.row(r).iter().any(|x| !x.is_finite()))
            } else {
                !p.grad.is_finite()
            };
            if bad {
                return Err(NnError::NonFinite {
                    param: p.name.clone(),
                    what: "gradient",
                });
            }
        }
        let norm = params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.grad_sq_norm())
            .sum::<f64>()
            .sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        let update = |value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..value.len() {
                let g = grad[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                value[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + eps);
            }
        };
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.frozen {
                p.zero_grad();
                continue;
            }
            if p.is_sparse() {
                let rows: Vec<usize> = p.touched_rows().to_vec();
                for r in rows {
                    let Parameter { value, grad, .. } = &mut **p;
                    update(value.row_mut(r), grad.row(r), m.row_mut(r), v.row_mut(r));
                    if value.row(r).iter().any(|x| !x.is_finite()) {
                        return Err(NnError::NonFinite {
                            param: p.name.clone(),
                            what: "value",
                        });
                    }
                }
            } else {
                let Parameter { value, grad, .. } = &mut **p;
                update(value.data_mut(), grad.data(), m.data_mut(), v.data_mut());
                if !value.is_finite() {
                    return Err(NnError::NonFinite {
                        param: p.name.clone(),
                        what: "value",
                    });
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Parameter {
        Parameter::new("x", Matrix::from_vec(1, 1, vec![v]))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Parameter::new("w", Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let before = p.value.clone();
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0);
        p.grad.set(0, 0, 1.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        opt.step(&mut [&mut p]).unwrap();
        let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.value.get(0, 0) - want).abs() < 1e-12);
        assert_eq!(p.grad.get(0, 0), 0.0);
    }

    #[test]
    fn clipping_halves_norm_ten_gradient() {
        // With clipping to 5, a gradient of norm 10 behaves like half of
        // it. Adam's first step is scale-free, so compare the second
        // moment directly via a two-step run against an unclipped twin.
        let run = |g: f64, clip: Option<f64>| {
            let mut p = Parameter::new("w", Matrix::zeros(1, 2));
            let mut opt = Adam::new(AdamConfig {
                lr: 0.1,
                clip_norm: clip,
                ..AdamConfig::default()
            });
            p.grad.data_mut().copy_from_slice(&[0.6 * g, 0.8 * g]);
            opt.step(&mut [&mut p]).unwrap();
            p.grad.data_mut().copy_from_slice(&[0.6, 0.8]);
            opt.step(&mut [&mut p]).unwrap();
            p.value
        };
        assert_eq!(run(10.0, Some(5.0)), run(5.0, None));
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = scalar(0.0);
        p.name = "lstm.fwd.u".into();
        p.grad.set(0, 0, f64::NAN);
        let err = Adam::new(AdamConfig::default()).step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("lstm.fwd.u"), "{err}");
    }

    #[test]
    fn sparse_rows_update_lazily() {
        let mut p = Parameter::sparse("emb", Matrix::zeros(3, 2));
        p.accumulate_row(1, &[1.0, -1.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.row(0), &[0.0, 0.0]);
        assert!(p.value.get(1, 0) < 0.0 && p.value.get(1, 1) > 0.0);
        assert!(p.touched_rows().is_empty());
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = scalar(2.0);
        p.frozen = true;
        p.grad.set(0, 0, 1.0);
        Adam::new(AdamConfig::default()).step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.get(0, 0), 2.0);
    }
}
