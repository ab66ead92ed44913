//! Adaptive-moment optimizer with a stepped exponential learning-rate decay.

use std::collections::HashMap;

use crate::error::Result;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` steps.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 2000,
            decay_factor: 0.9,
        }
    }
}

/// Optimizer over a fixed subset of parameter names. Moment buffers are
/// keyed by name; entries outside the subset are never touched.
pub struct Adam {
    cfg: AdamConfig,
    names: Vec<String>,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    step: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, names: Vec<String>) -> Self {
        Adam {
            cfg,
            names,
            m: HashMap::new(),
            v: HashMap::new(),
            step: 0,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let decays = (self.step / self.cfg.decay_every) as i32;
        self.cfg.lr * self.cfg.decay_factor.powi(decays)
    }

    /// One update of every named entry from the matching gradient entries.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for name in &self.names {
            let g = grads.get(name)?.value.data().to_vec();
            let p = params.get_mut(name)?;
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let data = p.value.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent step, used by small worked examples and tests.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    for p in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = grads.get(&p.name)?.value.data().to_vec();
        for (x, gi) in p.value.data_mut().iter_mut().zip(g) {
            *x -= lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.25), true).unwrap();
        let g = p.zeros_like();
        let mut adam = Adam::new(AdamConfig::default(), vec!["w".into()]);
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().value.data(), &[1.25]);
    }

    #[test]
    fn sgd_hand_step() {
        // L = w^2, dL/dw = 2w; w=1, lr=0.1 -> w = 0.8
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0), true).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().value.data_mut()[0] = 2.0;
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.get("w").unwrap().value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn lr_decays_stepwise() {
        let cfg = AdamConfig {
            decay_every: 10,
            decay_factor: 0.5,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, vec![]);
        assert_eq!(adam.current_lr(), 1e-3);
        let mut p = ParamSet::new();
        let g = ParamSet::new();
        for _ in 0..10 {
            adam.step(&mut p, &g).unwrap();
        }
        assert!((adam.current_lr() - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn subset_only_touches_named_entries() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::scalar(1.0), true).unwrap();
        p.insert("b", Tensor::scalar(1.0), true).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("a").unwrap().value.data_mut()[0] = 1.0;
        g.get_mut("b").unwrap().value.data_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default(), vec!["a".into()]);
        adam.step(&mut p, &g).unwrap();
        assert_ne!(p.get("a").unwrap().value.data()[0], 1.0);
        assert_eq!(p.get("b").unwrap().value.data()[0], 1.0);
    }
}
