use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &MlpParams) -> Self {
        let n = params.num_params();
        Self {
            config,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) {
        assert_eq!(params.sizes, grads.sizes, "gradient shape does not match parameters");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut k = 0;
        for (p, g) in params.arrays_mut().zip(grads.arrays()) {
            for (x, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = MlpParams::zeros(&[2, 1]);
        let mut g = p.zeros_like();
        g.layers[0].w[[0, 0]] = 5.0;
        g.layers[0].w[[1, 0]] = -0.01;
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g);
        assert!((p.layers[0].w[[0, 0]] + 3e-4).abs() < 1e-10);
        assert!((p.layers[0].w[[1, 0]] - 3e-4).abs() < 1e-9);
        assert_eq!(p.layers[0].b[0], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = MlpParams::zeros(&[1, 1]);
        p.layers[0].w[[0, 0]] = 2.0;
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.layers[0].w[[0, 0]] = 2.0 * (p.layers[0].w[[0, 0]] - 0.5);
            opt.step(&mut p, &g);
        }
        assert!((p.layers[0].w[[0, 0]] - 0.5).abs() < 1e-3);
    }
}
