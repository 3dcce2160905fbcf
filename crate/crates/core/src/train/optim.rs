//! AdamW with decoupled weight decay, and the warmup learning-rate schedule.

use crate::nn::{Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new<P: Params<T>>(params: &P, weight_decay: f64) -> Self {
        let views = params.params();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            names: views.iter().map(|p| p.name.clone()).collect(),
            m: views.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: views.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn update<P: Params<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2_sqrt = (1.0 - self.beta2.powi(t)).sqrt();
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let step_size = T::lit(lr / bc1);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let inv_bc2 = T::lit(1.0 / bc2_sqrt);
        let eps = T::lit(self.eps);
        let grads = grads.params();
        for (i, p) in params.params_mut().into_iter().enumerate() {
            debug_assert_eq!(p.name, self.names[i]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p.data.iter_mut().zip(grads[i].data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let denom = v.sqrt() * inv_bc2 + eps;
                *w -= step_size * *m / denom;
            }
        }
    }
}

/// Number of warmup steps, `⌈warmup_frac · total_steps⌉`.
pub fn warmup_steps(total_steps: u64, warmup_frac: f64) -> u64 {
    (warmup_frac * total_steps as f64 - 1e-9).ceil().max(0.0) as u64
}

/// Linear ramp to `base_lr` over the warmup steps, constant afterwards.
/// Step `s` of the ramp (0-based) gets `base_lr · (s+1)/W`.
pub fn warmup_schedule(step: u64, total_steps: u64, base_lr: f64, warmup_frac: f64) -> f64 {
    let w = warmup_steps(total_steps, warmup_frac);
    if w == 0 || step + 1 >= w {
        base_lr
    } else {
        base_lr * (step + 1) as f64 / w as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn schedule_examples() {
        // 100 steps, 5% warmup => W = 5
        assert_eq!(warmup_steps(100, 0.05), 5);
        assert!((warmup_schedule(0, 100, 1e-3, 0.05) - 2e-4).abs() < 1e-15);
        assert_eq!(warmup_schedule(4, 100, 1e-3, 0.05), 1e-3);
        assert_eq!(warmup_schedule(50, 100, 1e-3, 0.05), 1e-3);
        for s in 0..10 {
            assert_eq!(warmup_schedule(s, 10, 0.1, 0.0), 0.1);
        }
        let ramp: Vec<f64> = (0..6).map(|s| warmup_schedule(s, 100, 1.0, 0.05)).collect();
        assert!(ramp.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first update is ±lr per coordinate.
        let mut p = Linear {
            weight: array![[1.0f64, -1.0]],
            bias: array![0.0],
        };
        let g = Linear {
            weight: array![[0.3, -2.0]],
            bias: array![0.0],
        };
        let mut opt = AdamW::new(&p, 0.0);
        opt.update(&mut p, &g, 0.01);
        assert!((p.weight[[0, 0]] - 0.99).abs() < 1e-6);
        assert!((p.weight[[0, 1]] + 0.99).abs() < 1e-6);
        assert_eq!(p.bias[0], 0.0);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = Linear {
            weight: array![[2.0f64]],
            bias: array![0.0],
        };
        let g = Linear {
            weight: array![[0.0]],
            bias: array![0.0],
        };
        let mut opt = AdamW::new(&p, 0.5);
        opt.update(&mut p, &g, 0.1);
        assert!((p.weight[[0, 0]] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }
}
