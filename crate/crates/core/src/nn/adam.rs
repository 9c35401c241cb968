use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0, warmup_steps: 100 }
    }
}

impl AdamConfig {
    /// Linear warmup to `lr`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = store.zero_grads().0;
        Self { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, store: &mut ParamStore, grads: &mut Grads) -> f64 {
        if self.cfg.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > self.cfg.clip_norm {
                grads.scale(self.cfg.clip_norm / norm);
            }
        }
        let lr = self.cfg.lr_at(self.step);
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads.0[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + self.cfg.eps);
            });
        }
        lr
    }

    pub(crate) fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, step: usize, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Array2::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, warmup_steps: 0, clip_norm: 0.0, ..Default::default() }, &store);
        for _ in 0..500 {
            let mut g = store.zero_grads();
            *g.get_mut(id) = store.get(id).mapv(|x| 2.0 * (x - 1.0));
            opt.update(&mut store, &mut g);
        }
        assert!(store.get(id).iter().all(|x| (x - 1.0).abs() < 1e-2));
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = AdamConfig { lr: 1.0, warmup_steps: 4, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 0.25);
        assert_eq!(cfg.lr_at(3), 1.0);
        assert_eq!(cfg.lr_at(10), 1.0);
    }
}
