//! Adam optimizer state and update rule.

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction, in place over flat slices.
/// `t` is the 1-based step count after this update.
pub fn adam_step(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    assert!(t >= 1, "adam step count starts at 1");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// First and second moment buffers for every parameter of a store, in slot
/// order, plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m = (0..store.len())
            .map(|i| Tensor::zeros(store.get(i).value.shape().to_vec()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter using the gradients
    /// accumulated in the store.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        for slot in 0..store.len() {
            if !store.get(slot).trainable {
                continue;
            }
            let param = store.get_mut(slot);
            let grad = param.grad.data().to_vec();
            adam_step(
                param.value.data_mut(),
                &grad,
                self.m[slot].data_mut(),
                self.v[slot].data_mut(),
                self.t,
                &self.cfg,
            );
        }
    }

    /// Moment buffers in slot order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn moments_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.m, &mut self.v)
    }

    pub fn set_step_count(&mut self, t: u64) {
        self.t = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut value = vec![0.7, -0.3];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adam_step(
            &mut value,
            &[0.0, 0.0],
            &mut m,
            &mut v,
            1,
            &AdamConfig::with_lr(0.001),
        );
        assert_eq!(value, vec![0.7, -0.3]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // from m = v = 0 with g = 1: m_hat = v_hat = 1, so the update is
        // -lr / (1 + eps)
        let cfg = AdamConfig::with_lr(0.001);
        let mut value = vec![0.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_step(&mut value, &[1.0], &mut m, &mut v, 1, &cfg);
        let expected = -cfg.lr / (1.0 + cfg.epsilon);
        assert!((value[0] - expected).abs() < 1e-15, "got {}", value[0]);
        assert!((value[0] + 0.000999).abs() < 1e-6);
    }

    #[test]
    fn constant_gradient_descends() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut value = vec![1.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        for t in 1..=200 {
            adam_step(&mut value, &[2.5], &mut m, &mut v, t, &cfg);
        }
        assert!(value[0] < 1.0 - 0.01, "parameter should move opposite +g");

        let mut value2 = vec![1.0];
        let mut m2 = vec![0.0];
        let mut v2 = vec![0.0];
        for t in 1..=200 {
            adam_step(&mut value2, &[-2.5], &mut m2, &mut v2, t, &cfg);
        }
        assert!(value2[0] > 1.0 + 0.01, "parameter should move opposite -g");
    }

    #[test]
    fn state_skips_frozen_parameters() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::new([1], vec![1.0]), true);
        store.register("frozen", Tensor::new([1], vec![1.0]), false);
        store.by_name_mut("w").unwrap().grad.data_mut()[0] = 1.0;
        store.by_name_mut("frozen").unwrap().grad.data_mut()[0] = 1.0;
        let mut opt = AdamState::new(&store, AdamConfig::with_lr(0.1));
        opt.step(&mut store);
        assert!(store.by_name("w").unwrap().value.data()[0] < 1.0);
        assert_eq!(store.by_name("frozen").unwrap().value.data()[0], 1.0);
    }
}
