use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable tensors with their gradients and Adam moments.
///
/// Insertion order is preserved; it fixes the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    moment1: Vec<Tensor>,
    moment2: Vec<Tensor>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.values.len());
        let dims = value.dims().to_vec();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(&dims));
        self.moment1.push(Tensor::zeros(&dims));
        self.moment2.push(Tensor::zeros(&dims));
        Ok(id)
    }

    /// Adds a parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        scale: f32,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.add(name, Tensor::from_vec(dims, data)?)
    }

    /// Adds a tensor of independent `N(0, std²)` draws.
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        std: f32,
        rng: &mut R,
    ) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(format!("normal init: {e}")))?;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::from_vec(dims, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.moment1[id.0], &self.moment2[id.0])
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, m1: Tensor, m2: Tensor) {
        self.moment1[id.0] = m1;
        self.moment2[id.0] = m2;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn grads_are_zero(&self) -> bool {
        self.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0))
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f32) -> f64 {
        let norm = self.grad_norm();
        if max_norm > 0.0 && norm > max_norm as f64 {
            let scale = (max_norm as f64 / norm) as f32;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }

    /// One bias-corrected Adam update over every parameter, then zeroes the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i].data();
            let m = self.moment1[i].data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let v = self.moment2[i].data_mut();
            for (v, &g) in v.iter_mut().zip(g) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let m = self.moment1[i].data();
            let v = self.moment2[i].data();
            let p = self.values[i].data_mut();
            for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
                let mhat = m / c1;
                let vhat = v / c2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        self.zero_grads();
    }

    /// Copies every parameter of `other` (with its optimizer state) into a
    /// new store, after the entries of `self`.
    pub fn merged(&self, other: &ParamStore) -> Result<ParamStore> {
        let mut out = self.clone();
        for id in other.ids() {
            let new = out.add(other.name(id), other.value(id).clone())?;
            let (m1, m2) = other.moments(id);
            out.set_moments(new, m1.clone(), m2.clone());
        }
        out.step = self.step.max(other.step);
        Ok(out)
    }

    /// Extracts the parameters whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for id in self.ids().filter(|&id| self.name(id).starts_with(prefix)) {
            let new = out
                .add(self.name(id), self.value(id).clone())
                .expect("names are unique in the source store");
            let (m1, m2) = self.moments(id);
            out.set_moments(new, m1.clone(), m2.clone());
        }
        out.step = self.step;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f32) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(&[1], vec![value]).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(0.7);
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value(id).data(), &[0.7]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id).data_mut()[0] = 0.37;
        let cfg = AdamConfig::default();
        s.adam_step(&cfg);
        let delta = 1.0 - s.value(id).item();
        assert!((delta - cfg.lr).abs() < 1e-6, "delta {delta}");
        assert!(s.grads_are_zero());
    }

    #[test]
    fn three_steps_match_hand_iteration() {
        // Recurrence iterated in f64 with gradients 0.5, -0.2, 0.1.
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let grads = [0.5f64, -0.2, 0.1];
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let (mut s, id) = scalar_store(1.0);
        for g in grads {
            s.grad_mut(id).data_mut()[0] = g as f32;
            s.adam_step(&cfg);
        }
        assert!((s.value(id).item() as f64 - p).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_convex_quadratic() {
        // f(w) = Σ (w_i - t_i)², gradient 2(w - t).
        let target = [3.0f32, -2.0, 0.5, 1.5];
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[4])).unwrap();
        let obj = |s: &ParamStore| -> f32 {
            s.value(id)
                .data()
                .iter()
                .zip(&target)
                .map(|(w, t)| (w - t) * (w - t))
                .sum()
        };
        let initial = obj(&s);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..200 {
            let w = s.value(id).data().to_vec();
            for (i, g) in s.grad_mut(id).data_mut().iter_mut().enumerate() {
                *g = 2.0 * (w[i] - target[i]);
            }
            s.adam_step(&cfg);
        }
        assert!(obj(&s) <= 0.01 * initial, "{} vs {}", obj(&s), initial);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(&[2])).unwrap();
        let b = s.add("b", Tensor::zeros(&[1])).unwrap();
        s.grad_mut(a).data_mut().copy_from_slice(&[3.0, 0.0]);
        s.grad_mut(b).data_mut()[0] = 4.0;
        assert!((s.clip_grad_norm(1.0) - 5.0).abs() < 1e-9);
        assert!((s.grad_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = scalar_store(0.0);
        assert!(s.add("w", Tensor::zeros(&[1])).is_err());
    }
}
