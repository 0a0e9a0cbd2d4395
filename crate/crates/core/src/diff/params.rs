use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{Gradients, Tape, Tensor};
use crate::error::{CodanoError, Result};
use crate::hash::Fnv1a;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub frozen: bool,
    pub grad: Option<Vec<f64>>,
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(CodanoError::TrainingState(format!("parameter `{name}` already exists")));
        }
        self.entries.insert(
            name,
            ParamEntry {
                tensor,
                frozen: false,
                grad: None,
            },
        );
        Ok(())
    }

    /// Insert a tensor with i.i.d. `N(0, std²)` entries.
    pub fn insert_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std.max(0.0)).map_err(|e| CodanoError::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> Result<()> {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![value; n])?)
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry> {
        self.entries.remove(name)
    }

    /// Remove every entry whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|k, _| !k.starts_with(prefix));
        before - self.entries.len()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CodanoError::TrainingState(format!("no parameter named `{name}`")))?;
        e.frozen = frozen;
        Ok(())
    }

    /// Freeze (or unfreeze) every entry for which `pred` holds; returns the count.
    pub fn set_frozen_where(&mut self, frozen: bool, pred: impl Fn(&str) -> bool) -> usize {
        let mut n = 0;
        for (k, e) in self.entries.iter_mut() {
            if pred(k) {
                e.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn unfreeze_all(&mut self) {
        self.entries.values_mut().for_each(|e| e.frozen = false);
    }

    pub fn clear_grads(&mut self) {
        self.entries.values_mut().for_each(|e| e.grad = None);
    }

    /// Store gradients from a reverse sweep.
    ///
    /// Every trainable entry ends up with a gradient; entries the loss did not
    /// reach get zeros. Frozen entries get none.
    pub fn absorb_grads(&mut self, tape: &Tape, grads: &mut Gradients) {
        let bound: BTreeMap<String, _> = tape.bound_params().into_iter().collect();
        for (name, e) in self.entries.iter_mut() {
            if e.frozen {
                e.grad = None;
                continue;
            }
            let g = bound
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| vec![0.0; e.tensor.len()]);
            e.grad = Some(g);
        }
    }

    /// Global L2 norm of the stored gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.entries.values_mut().filter_map(|e| e.grad.as_mut()) {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// Content hash of one entry (shape and exact bits).
    pub fn hash_of(&self, name: &str) -> Option<u64> {
        self.entries.get(name).map(|e| tensor_hash(&e.tensor))
    }

    pub fn hashes(&self) -> BTreeMap<String, u64> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), tensor_hash(&e.tensor)))
            .collect()
    }

    /// Combined hash of all entries whose name satisfies `pred`.
    pub fn hash_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut h = Fnv1a::new();
        for (k, e) in self.entries.iter().filter(|(k, _)| pred(k)) {
            h.update(k.as_bytes());
            h.update(&tensor_hash(&e.tensor).to_le_bytes());
        }
        h.finish()
    }
}

fn tensor_hash(t: &Tensor) -> u64 {
    let mut h = Fnv1a::new();
    for &s in t.shape() {
        h.update(&(s as u64).to_le_bytes());
    }
    h.update_f64s(t.data());
    h.finish()
}
