use std::sync::Arc;

use crate::diff::{ParamStore, Tape, Tensor};
use crate::error::{CodanoError, Result};
use crate::field::GridFunction;
use crate::spectral::Operator;

/// `[n, k·w]` point-major values to `[k, n, w]` group-major.
pub(crate) fn to_groups(values: &[f64], n: usize, k: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for p in 0..n {
        for g in 0..k {
            out[(g * n + p) * w..][..w].copy_from_slice(&values[(p * k + g) * w..][..w]);
        }
    }
    out
}

/// Inverse of [`to_groups`].
pub(crate) fn from_groups(values: &[f64], n: usize, k: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for p in 0..n {
        for g in 0..k {
            out[(p * k + g) * w..][..w].copy_from_slice(&values[(g * n + p) * w..][..w]);
        }
    }
    out
}

/// Apply one shared operator to each width-`group` slice of the codomain.
///
/// Permuting the input groups permutes the output groups, bit for bit.
pub fn set_apply(op: &dyn Operator, store: &ParamStore, f: &GridFunction, group: usize) -> Result<GridFunction> {
    let width = f.codomain_dim();
    if group == 0 || !width.is_multiple_of(group) {
        return Err(CodanoError::Partition { width, group });
    }
    if op.in_dim() != group {
        return Err(CodanoError::shape(format!(
            "operator expects width {}, groups have width {group}",
            op.in_dim()
        )));
    }
    let (n, k) = (f.len(), width / group);
    let tape = Tape::no_grad();
    let x = tape.constant(Tensor::new(vec![k, n, group], to_groups(f.values(), n, k, group))?);
    let y = op.forward(&tape, store, x, f.mesh())?;
    let dout = op.out_dim();
    let v = from_groups(tape.value(y).data(), n, k, dout);
    GridFunction::new(Arc::clone(f.mesh()), v, k * dout)
}
