use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f32,
    pub betas: (f32, f32),
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

/// One parameter's slot in an optimizer step.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f32],
    pub grad: &'a [f32],
    /// Whether decoupled weight decay applies (false for biases and norm gains).
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            state: AdamWState::default(),
        }
    }

    /// Applies one bias-corrected AdamW update to every slot. Gradients are
    /// validated up front so a non-finite value leaves all parameters intact.
    pub fn step(&mut self, slots: Vec<ParamSlot<'_>>) -> Result<(), TensorError> {
        for s in &slots {
            if s.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFiniteGradient(s.name.to_string()));
            }
            if s.grad.len() != s.value.len() {
                return Err(TensorError::Shape {
                    op: "adamw",
                    left: vec![s.value.len()],
                    right: vec![s.grad.len()],
                });
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let AdamWConfig {
            lr,
            betas: (b1, b2),
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for s in slots {
            let (m, v) = self
                .state
                .moments
                .entry(s.name.to_string())
                .or_insert_with(|| (vec![0.0; s.value.len()], vec![0.0; s.value.len()]));
            for i in 0..s.value.len() {
                let g = s.grad[i];
                if s.decay && weight_decay != 0.0 {
                    s.value[i] -= lr * weight_decay * s.value[i];
                }
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                s.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: AdamWConfig, x0: f32, grad: impl Fn(f32) -> f32, steps: usize) -> Vec<f32> {
        let mut opt = AdamW::new(cfg);
        let mut x = [x0];
        let mut trace = Vec::new();
        for _ in 0..steps {
            let g = [grad(x[0])];
            opt.step(vec![ParamSlot {
                name: "x",
                value: &mut x,
                grad: &g,
                decay: true,
            }])
            .unwrap();
            trace.push(x[0]);
        }
        trace
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let trace = run(cfg, 1.5, |_| 0.0, 5);
        assert!(trace.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let cfg = AdamWConfig {
            lr: 0.01,
            ..Default::default()
        };
        let trace = run(cfg, 0.3, |_| 0.7, 50);
        assert!(trace.windows(2).all(|w| w[1] < w[0]));
        assert!(trace[0] < 0.3);
    }

    #[test]
    fn quadratic_trace_matches_scripted_reference() {
        // f(x) = (x - 3)^2, reference written out longhand in f64
        let cfg = AdamWConfig {
            lr: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        };
        let trace = run(cfg, 0.5, |x| 2.0 * (x - 3.0), 10);

        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (k, &got) in trace.iter().enumerate() {
            let t = (k + 1) as f64;
            let g = 2.0 * (x - 3.0);
            x -= 0.01 * 0.01 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powf(t));
            let vh = v / (1.0 - 0.999f64.powf(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((got as f64 - x).abs() < 1e-6, "step {k}: {got} vs {x}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_leaves_values() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut a = [1.0f32];
        let mut b = [2.0f32];
        let err = opt
            .step(vec![
                ParamSlot {
                    name: "ok",
                    value: &mut a,
                    grad: &[0.5],
                    decay: true,
                },
                ParamSlot {
                    name: "decoder.bad",
                    value: &mut b,
                    grad: &[f32::NAN],
                    decay: true,
                },
            ])
            .unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("decoder.bad".into()));
        assert_eq!((a[0], b[0]), (1.0, 2.0));
        assert_eq!(opt.state.step, 0);
    }
}
