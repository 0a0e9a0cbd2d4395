//! Pointwise and Fourier operator blocks and their shared set form.

mod fno;
mod pointwise;
mod set;

pub use fno::{fno_apply, forward_fused, FnoBlock};
pub use pointwise::{pointwise_apply, Activation, PointwiseOp};
pub use set::set_apply;
pub(crate) use set::{from_groups, to_groups};

use crate::diff::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::field::Mesh;

/// A learned operator acting on `[G, n, in_dim]` tensors over one mesh.
pub trait Operator {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn forward(&self, tape: &Tape, store: &ParamStore, x: Var, mesh: &Mesh) -> Result<Var>;
}
