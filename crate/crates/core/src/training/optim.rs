use ndarray::ArrayD;

use crate::params::{BlockMut, BlockRef};

/// Linear decay from `initial` to zero over `total_steps` updates.
///
/// Update `t` (0-based) uses `initial · (1 − t / total_steps)`; the rate
/// reaches 0 at `t = total_steps`, the point after the final update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub initial: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(initial: f64, total_steps: usize) -> Self {
        LinearSchedule { initial, total_steps }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.initial * (1.0 - frac)
    }
}

/// Adam without weight decay. State is kept only for trainable blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(ArrayD<f64>, ArrayD<f64>)>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every block whose `trainable` flag is set.
    /// `params` and `grads` must list the same blocks in the same order.
    pub fn step(&mut self, params: Vec<BlockMut<'_>>, grads: Vec<BlockRef<'_>>, trainable: &[bool], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient structures differ");
        assert_eq!(params.len(), trainable.len(), "mask length differs from parameter count");
        if self.moments.len() != params.len() {
            self.moments = vec![None; params.len()];
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (mut p, g)) in params.into_iter().zip(grads).enumerate() {
            if !trainable[i] {
                continue;
            }
            debug_assert_eq!(p.name, g.name);
            let (m, v) = self.moments[i].get_or_insert_with(|| {
                (ArrayD::zeros(g.data.raw_dim()), ArrayD::zeros(g.data.raw_dim()))
            });
            ndarray::Zip::from(&mut p.data)
                .and(m)
                .and(v)
                .and(&g.data)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}
