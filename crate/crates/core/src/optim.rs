//! Adam with bias correction and no weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Apply one update. Parameters without a gradient keep their value and
    /// their moments.
    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::State(alloc::format!(
                "optimizer tracks {} arrays, store has {}, got {} gradients",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let one = F::one();
        let step_size = F::from_f64_lossy(c.lr / (1.0 - libm::pow(c.beta1, t as f64)));
        let inv_bc2 = F::from_f64_lossy(1.0 / (1.0 - libm::pow(c.beta2, t as f64)));
        let eps = F::from_f64_lossy(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = crate::params::ParamId(i);
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::Shape(alloc::format!("gradient shape {:?} vs {:?}", g.shape(), p.shape())));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv = *pv - step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
