//! Adam optimizer with moments kept in single precision, so that state saved
//! to disk and reloaded continues bit-identically.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One update with learning rate `lr`. Parameters without a gradient are
    /// left alone; so are non-trainable ones.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(String, Vec<f64>)], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            if !p.trainable {
                continue;
            }
            let m = self.m.get_mut(name).expect("moment for every parameter");
            let v = self.v.get_mut(name).expect("moment for every parameter");
            for i in 0..g.len() {
                let mi = beta1 * m.data[i] as f64 + (1.0 - beta1) * g[i];
                let vi = beta2 * v.data[i] as f64 + (1.0 - beta2) * g[i] * g[i];
                m.data[i] = mi as f32;
                v.data[i] = vi as f32;
                let (mh, vh) = (mi / bc1, vi / bc2);
                p.data[i] = (p.data[i] as f64 - lr * mh / (vh.sqrt() + eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Param;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert(
            "x",
            Param {
                shape: vec![2],
                data: vec![1.0, -1.0],
                trainable: true,
            },
        );
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[("x".into(), vec![3.0, -0.5])], 0.01);
        let d = &p.get("x").unwrap().data;
        assert!((d[0] - 0.99).abs() < 1e-6 && (d[1] + 0.99).abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = ParamStore::new();
        p.insert(
            "x",
            Param {
                shape: vec![1],
                data: vec![0.3],
                trainable: true,
            },
        );
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[("x".into(), vec![5.0])], 0.0);
        assert_eq!(p, before);
    }
}
