use serde::{Deserialize, Serialize};

use super::{FrozenMask, Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Frozen groups are skipped entirely,
/// so their values stay bit-identical.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, frozen: &FrozenMask, lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if frozen.contains(&p.group) {
                continue;
            }
            let g = &grads.tensors()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.data.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.data[k] -= lr * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Fusion, vec![2], vec![1.0, 1.0]);
        let b = store.add("b", ParamGroup::HeadPose, vec![1], vec![3.0]);
        let mut g = store.zero_grads();
        g.get_mut(a).copy_from_slice(&[0.5, -2.0]);
        g.get_mut(b)[0] = 1.0;
        let mut opt = Adam::new(AdamConfig::default(), &store);
        let frozen: FrozenMask = [ParamGroup::HeadPose].into_iter().collect();
        opt.step(&mut store, &g, &frozen, 0.1);
        assert!((store.get(a)[0] - 0.9).abs() < 1e-6);
        assert!((store.get(a)[1] - 1.1).abs() < 1e-6);
        assert_eq!(store.get(b)[0], 3.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Fusion, vec![1], vec![5.0]);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        for _ in 0..2000 {
            let mut g = store.zero_grads();
            g.get_mut(x)[0] = 2.0 * (store.get(x)[0] - 1.5);
            opt.step(&mut store, &g, &FrozenMask::new(), 0.05);
        }
        assert!((store.get(x)[0] - 1.5).abs() < 1e-3);
    }
}
