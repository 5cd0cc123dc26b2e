use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::params::{GradMap, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per named parameter.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Tensor<F>, Tensor<F>)>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<F>, &Tensor<F>)> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v))
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn restore(
        config: AdamConfig,
        step: u64,
        moments: impl IntoIterator<Item = (String, Tensor<F>, Tensor<F>)>,
    ) -> Self {
        Self {
            config,
            step,
            moments: moments.into_iter().map(|(k, m, v)| (k, (m, v))).collect(),
        }
    }

    /// Applies one update. Every gradient is validated before any parameter
    /// is touched, so a non-finite gradient leaves the model unchanged.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &GradMap<F>) -> Result<()> {
        let next = self.step + 1;
        for (name, g) in grads.iter() {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some((index, value)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    name: name.to_string(),
                    index,
                    value: value.to_f64_lossy(),
                    step: next,
                });
            }
        }
        self.step = next;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powi(next as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(next as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        for (name, g) in grads.iter() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = params.get_mut(name)?;
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
