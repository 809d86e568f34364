use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, t: u64, lr: f64, cfg: &AdamConfig) {
    assert!(t >= 1, "Adam steps count from 1");
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.3, -1.0];
        let mut m = Moments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, 1, 0.01, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g in [0.5, -3.0, 1e-3] {
            let mut p = vec![1.0];
            let mut m = Moments::zeros(1);
            adam_step(&mut p, &[g], &mut m, 1, 0.01, &cfg);
            let expect = 0.01 * g.abs() / (g.abs() + cfg.epsilon);
            assert_relative_eq!((1.0 - p[0]).abs(), expect, max_relative = 1e-12);
            assert_eq!((1.0 - p[0]).signum(), g.signum());
        }
    }

    #[test]
    fn elementwise_independence() {
        let mut p = vec![0.0, 0.0];
        let mut m = Moments::zeros(2);
        for t in 1..5 {
            adam_step(&mut p, &[0.7, 0.7], &mut m, t, 0.01, &AdamConfig::default());
        }
        assert_eq!(p[0], p[1]);
    }
}
