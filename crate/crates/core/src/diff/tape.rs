//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one forward pass. Each recorded op stores a closure that
//! maps the gradient of its output to gradients of its inputs. Calling
//! [`Tape::backward`] walks the tape once in reverse. Tapes are meant to live
//! for a single training step and are dropped afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::diff::{ParamStore, Tensor};
use crate::error::{CodanoError, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn = Box<dyn Fn(&[f64], &mut Grads)>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    op: &'static str,
    backward: Option<BackFn>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, Var)>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward closures (evaluation mode).
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.push_leaf(t, false, "constant")
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push_leaf(t, self.grad_enabled, "leaf")
    }

    /// Bind a named parameter; frozen entries are recorded as constants.
    /// Binding the same name twice returns the same handle.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.borrow().iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let entry = store
            .entry(name)
            .ok_or_else(|| CodanoError::TrainingState(format!("no parameter named `{name}`")))?;
        let var = self.push_leaf(entry.tensor.clone(), self.grad_enabled && !entry.frozen, "param");
        self.params.borrow_mut().push((name.to_string(), var));
        Ok(var)
    }

    /// Parameters bound so far, in binding order.
    pub fn bound_params(&self) -> Vec<(String, Var)> {
        self.params.borrow().clone()
    }

    fn push_leaf(&self, t: Tensor, requires_grad: bool, op: &'static str) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            requires_grad,
            op,
            backward: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Record an op. `back` is dropped when no input needs a gradient.
    pub(crate) fn push<F>(&self, value: Tensor, op: &'static str, inputs: &[Var], back: F) -> Var
    where
        F: Fn(&[f64], &mut Grads) + 'static,
    {
        let requires_grad = self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
            backward: if requires_grad { Some(Box::new(back)) } else { None },
        });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Each backward closure's output is checked for non-finite values; the
    /// first offender is reported with its op name.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(CodanoError::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads = Grads {
            slots: (0..=loss.0).map(|_| None).collect(),
            wants: nodes[..=loss.0].iter().map(|n| n.requires_grad).collect(),
            lens: nodes[..=loss.0].iter().map(|n| n.value.len()).collect(),
            bad: None,
        };
        let mut leaves = HashMap::new();
        if !root.requires_grad {
            return Ok(Gradients { leaves });
        }
        grads.slots[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.backward {
                Some(back) => {
                    back(&g, &mut grads);
                    if let Some(parent) = grads.bad.take() {
                        return Err(CodanoError::numeric(
                            node.op,
                            format!("non-finite gradient flowing into node {parent}"),
                        ));
                    }
                }
                None => {
                    leaves.insert(id, g);
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradient accumulator handed to backward closures.
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
    wants: Vec<bool>,
    lens: Vec<usize>,
    bad: Option<usize>,
}

impl Grads {
    /// Whether `v` takes part in differentiation.
    pub fn wants(&self, v: Var) -> bool {
        self.wants.get(v.0).copied().unwrap_or(false)
    }

    /// Mutable gradient buffer of `v`, zero-initialised on first use.
    pub fn slot(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.wants(v) {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub fn add(&mut self, v: Var, g: &[f64]) {
        if !g.iter().all(|x| x.is_finite()) {
            self.bad.get_or_insert(v.0);
        }
        if let Some(s) = self.slot(v) {
            for (a, b) in s.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Add an owned buffer, avoiding a copy when the slot is still empty.
    pub fn add_owned(&mut self, v: Var, g: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        if !g.iter().all(|x| x.is_finite()) {
            self.bad.get_or_insert(v.0);
        }
        match &mut self.slots[v.0] {
            Some(s) => s.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of leaves after a reverse sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v.0).map(|g| g.as_slice())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.leaves.remove(&v.0)
    }
}
