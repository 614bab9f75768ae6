//! Adam optimizer with bias correction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParameterSet};
use crate::tensor::{Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: IndexMap<String, Tensor4<T>>,
    second: IndexMap<String, Tensor4<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment tensors in insertion order: `(name, m, v)`.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor4<T>, &Tensor4<T>)> {
        self.first
            .iter()
            .map(|(k, m)| (k.as_str(), m, &self.second[k]))
    }

    /// Rebuilds state from saved moments.
    pub fn restore(
        config: AdamConfig,
        step: u64,
        moments: Vec<(String, Tensor4<T>, Tensor4<T>)>,
    ) -> Self {
        let mut a = Adam::new(config);
        a.step = step;
        for (k, m, v) in moments {
            a.first.insert(k.clone(), m);
            a.second.insert(k, v);
        }
        a
    }

    /// One update of every trainable parameter.
    pub fn step(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &Gradients<T>,
        lr: f64,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.trainable {
                continue;
            }
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient for `{name}` is {}, parameter is {}",
                        g.shape(),
                        p.value.shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(name).expect("checked above");
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor4::zeros(g.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor4::zeros(g.shape()));
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.value.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i].f64();
                let mi = beta1 * md[i].f64() + (1.0 - beta1) * gi;
                let vi = beta2 * vd[i].f64() + (1.0 - beta2) * gi * gi;
                md[i] = T::of(mi);
                vd[i] = T::of(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = T::of(pd[i].f64() - update);
            }
        }
        Ok(())
    }
}
