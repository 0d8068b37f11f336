//! Named parameter sets and the Adam optimizer.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors. Iteration order is
/// insertion order, which fixes the optimizer and checkpoint layouts.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::data(format!("duplicate parameter '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Mutable access by insertion index (used by the optimizer and by
    /// finite-difference probes). Values must stay finite.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    /// Total scalar count across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Adam state: step count plus first/second moment buffers aligned with a
/// [`ParamSet`]'s insertion order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let moments = params
            .iter()
            .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .collect();
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments,
        }
    }

    /// One bias-corrected Adam update. `grads` must align with the param
    /// set (same order, same shapes); a non-finite gradient aborts with
    /// the offending parameter's name.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(format!(
                "adam: {} grads for {} params",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..grads.len() {
            let g = &grads[i];
            if g.shape() != params.entries[i].1.shape() {
                return Err(Error::dim(format!(
                    "adam: grad shape {:?} for parameter '{}' of shape {:?}",
                    g.shape(),
                    params.name(i),
                    params.entries[i].1.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::training(format!(
                    "non-finite gradient for parameter '{}'",
                    params.name(i)
                )));
            }
            let (m, v) = &mut self.moments[i];
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub(crate) fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    pub(crate) fn restore(
        step: u64,
        lr: f64,
        moments: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Self {
        AdamState {
            step,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments,
        }
    }
}
