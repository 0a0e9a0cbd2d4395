use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{CodanoError, Result};
use crate::field::{GridFunction, Mesh};
use crate::spectral::Operator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, tape: &Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// A per-point MLP `R^{widths[0]} → R^{widths[last]}`.
///
/// Parameters live under `{prefix}.l{i}.weight` (`[in, out]`) and `{prefix}.l{i}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseOp {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl PointwiseOp {
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            widths,
            hidden,
            output,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, l: usize) -> String {
        format!("{}.l{l}.weight", self.prefix)
    }

    pub fn bias_name(&self, l: usize) -> String {
        format!("{}.l{l}.bias", self.prefix)
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for l in 0..self.layers() {
            let (a, b) = (self.widths[l], self.widths[l + 1]);
            let std = (2.0 / (a + b) as f64).sqrt();
            store.insert_normal(self.weight_name(l), vec![a, b], std, rng)?;
            store.insert_const(self.bias_name(l), vec![b], 0.0)?;
        }
        Ok(())
    }

    /// Apply to a tensor whose last axis has width `widths[0]`.
    pub fn forward_tensor(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cin = *tape.shape(x).last().unwrap_or(&1);
        if cin != self.widths[0] {
            return Err(CodanoError::shape(format!(
                "{}: input width {cin}, expected {}",
                self.prefix, self.widths[0]
            )));
        }
        let mut h = x;
        for l in 0..self.layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            h = tape.linear(h, w, Some(b))?;
            let act = if l + 1 == self.layers() {
                self.output
            } else {
                self.hidden
            };
            h = act.apply(tape, h)?;
        }
        Ok(h)
    }
}

impl Operator for PointwiseOp {
    fn in_dim(&self) -> usize {
        self.widths[0]
    }

    fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn forward(&self, tape: &Tape, store: &ParamStore, x: Var, _mesh: &Mesh) -> Result<Var> {
        self.forward_tensor(tape, store, x)
    }
}

/// Evaluate a pointwise operator on a function.
pub fn pointwise_apply(op: &PointwiseOp, store: &ParamStore, f: &GridFunction) -> Result<GridFunction> {
    apply_operator(op, store, f)
}

pub(crate) fn apply_operator(op: &dyn Operator, store: &ParamStore, f: &GridFunction) -> Result<GridFunction> {
    if f.codomain_dim() != op.in_dim() {
        return Err(CodanoError::shape(format!(
            "operator expects codomain {}, function has {}",
            op.in_dim(),
            f.codomain_dim()
        )));
    }
    let tape = Tape::no_grad();
    let x = tape.constant(Tensor::new(vec![1, f.len(), f.codomain_dim()], f.values().to_vec())?);
    let y = op.forward(&tape, store, x, f.mesh())?;
    let v = tape.value(y);
    GridFunction::new(Arc::clone(f.mesh()), v.data().to_vec(), op.out_dim())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mesh() -> Arc<Mesh> {
        Arc::new(Mesh::periodic_box(vec![8, 6]).unwrap())
    }

    fn field(c: usize) -> GridFunction {
        GridFunction::from_fn(mesh(), c, |x| {
            (0..c).map(|k| (x[0] * (k + 1) as f64).sin() + x[1]).collect()
        })
        .unwrap()
    }

    #[test]
    fn identity_weights_pass_through() {
        let op = PointwiseOp::new("p", vec![3, 3], Activation::Identity, Activation::Identity);
        let mut s = ParamStore::new();
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        s.insert(op.weight_name(0), Tensor::new(vec![3, 3], eye).unwrap())
            .unwrap();
        s.insert_const(op.bias_name(0), vec![3], 0.0).unwrap();
        let f = field(3);
        assert_eq!(pointwise_apply(&op, &s, &f).unwrap().values(), f.values());
    }

    #[test]
    fn zero_weights_give_the_bias() {
        let op = PointwiseOp::new("p", vec![2, 3], Activation::Gelu, Activation::Identity);
        let mut s = ParamStore::new();
        s.insert_const(op.weight_name(0), vec![2, 3], 0.0).unwrap();
        s.insert_const(op.bias_name(0), vec![3], 4.5).unwrap();
        let out = pointwise_apply(&op, &s, &field(2)).unwrap();
        assert!(out.values().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn perturbing_one_point_changes_only_that_point() {
        let op = PointwiseOp::new("p", vec![2, 7, 3], Activation::Gelu, Activation::Gelu);
        let mut s = ParamStore::new();
        op.init(&mut s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let f = field(2);
        let base = pointwise_apply(&op, &s, &f).unwrap();
        let mut v = f.values().to_vec();
        v[2 * 17] += 0.5;
        let g = GridFunction::new(mesh(), v, 2).unwrap();
        let out = pointwise_apply(&op, &s, &g).unwrap();
        for p in 0..f.len() {
            let same = (0..3).all(|c| base.at(p, c) == out.at(p, c));
            assert_eq!(same, p != 17, "point {p}");
        }
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let op = PointwiseOp::new("p", vec![2, 3], Activation::Gelu, Activation::Identity);
        let mut s = ParamStore::new();
        op.init(&mut s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(matches!(
            pointwise_apply(&op, &s, &field(3)),
            Err(CodanoError::Shape(_))
        ));
    }
}
