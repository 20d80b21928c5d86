use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// Exponential learning-rate decay, optionally in whole steps of `step_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub step_size: u64,
    pub staircase: bool,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay: 1.0,
            step_size: 1,
            staircase: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial >= 0.0 && self.initial.is_finite()) {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("learning rate decay must lie in (0, 1]"));
        }
        if self.step_size == 0 {
            return Err(Error::config("learning rate step size must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let exponent = if self.staircase {
            (step / self.step_size) as f64
        } else {
            step as f64 / self.step_size as f64
        };
        self.initial * self.decay.powf(exponent)
    }
}

/// Adam with bias correction. Moments are shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one descent step along `grads` and increments the step counter.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if grads.weights.len() != net.layers().len() {
            return Err(Error::Dimension {
                expected: net.layers().len(),
                got: grads.weights.len(),
            });
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            if grads.weights[i].dim() != layer.weights.dim() {
                return Err(Error::Dimension {
                    expected: layer.weights.len(),
                    got: grads.weights[i].len(),
                });
            }
            ndarray::Zip::from(&mut layer.weights)
                .and(&grads.weights[i])
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&grads.biases[i])
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn staircase_anchors() {
        let s = LrSchedule {
            initial: 1e-4,
            decay: 0.8,
            step_size: 1000,
            staircase: true,
        };
        assert_eq!(s.lr_at(0), 1e-4);
        assert_eq!(s.lr_at(999), 1e-4);
        assert!((s.lr_at(1000) - 8e-5).abs() < 1e-18);
        assert!((s.lr_at(2500) - 1e-4 * 0.64).abs() < 1e-18);
    }

    #[test]
    fn smooth_decay_interpolates() {
        let s = LrSchedule {
            initial: 1.0,
            decay: 0.25,
            step_size: 10,
            staircase: false,
        };
        assert!((s.lr_at(5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unit_decay_is_constant() {
        let s = LrSchedule {
            initial: 3e-3,
            decay: 1.0,
            step_size: 7,
            staircase: true,
        };
        for step in [0, 6, 7, 1_000_000] {
            assert_eq!(s.lr_at(step), 3e-3);
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut s = LrSchedule::constant(1e-3);
        s.decay = 0.0;
        assert!(s.validate().is_err());
        s.decay = 1.5;
        assert!(s.validate().is_err());
        s.decay = 0.5;
        s.step_size = 0;
        assert!(s.validate().is_err());
    }

    fn scalar_net(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            weights: array![[w]],
            bias: array![0.0],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn descends_on_square() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(&net);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0][[0, 0]] = 2.0; // d(w²)/dw at w = 1
        adam.step(&mut net, &g, 0.01).unwrap();
        let w = net.layers()[0].weights[[0, 0]];
        assert!(w * w < 1.0);
        // First Adam step moves by lr·sign(g) up to eps.
        assert!((w - 0.99).abs() < 1e-9);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_or_zero_lr_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = DenseNet::new(3, &[5], 2, 0.1, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net);
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero, 0.1).unwrap();
        assert_eq!(net, before);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0].fill(1.0);
        adam.step(&mut net, &g, 0.0).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(&net);
        let mut g = Gradients::zeros_like(&net);
        g.biases[0][0] = f64::NAN;
        assert!(matches!(
            adam.step(&mut net, &g, 0.1),
            Err(Error::NonFinite(_))
        ));
    }
}
