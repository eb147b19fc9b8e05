// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

/// Multiplicative proportional controller steering the sparsity coefficient
/// toward a target L0: `λ ← λ·exp(gain·(L0/target − 1))`, clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaController {
    pub gain: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for LambdaController {
    fn default() -> Self {
        LambdaController {
            gain: 0.003,
            min: 1e-8,
            max: 1e2,
        }
    }
}

impl LambdaController {
    pub fn update(&self, current_l0: f64, target_l0: usize, lambda: f64) -> f64 {
        let ratio = current_l0 / target_l0.max(1) as f64;
        (lambda * (self.gain * (ratio - 1.0)).exp()).clamp(self.min, self.max)
    }
}

/// [`LambdaController::update`] with the default gain and clamp.
pub fn lambda_controller(current_l0: f64, target_l0: usize, lambda: f64) -> f64 {
    LambdaController::default().update(current_l0, target_l0, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_of_update() {
        assert_eq!(lambda_controller(20.0, 20, 0.5), 0.5);
        assert!(lambda_controller(30.0, 20, 0.5) > 0.5);
        assert!(lambda_controller(10.0, 20, 0.5) < 0.5);
        assert_eq!(lambda_controller(1e9, 20, 50.0), 1e2);
        assert_eq!(lambda_controller(0.0, 20, 0.0), 1e-8);
    }

    #[test]
    fn closed_loop_settles() {
        // stationary toy plant: L0 = 400 * exp(-4 λ) plus deterministic jitter
        let target = 20;
        let ctl = LambdaController::default();
        let mut lambda: f64 = 1e-3;
        let steps = 20_000;
        let mut tail = Vec::new();
        for s in 0..steps {
            let jitter = 1.0 + 0.05 * ((s as f64) * 0.7).sin();
            let l0 = 400.0 * (-4.0 * lambda).exp() * jitter;
            lambda = ctl.update(l0, target, lambda);
            if s >= steps * 9 / 10 {
                tail.push(l0);
            }
        }
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            (mean - target as f64).abs() / (target as f64) <= 0.10,
            "mean L0 {mean}"
        );
    }
}
