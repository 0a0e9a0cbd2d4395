use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;

use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{CodanoError, Result};
use crate::field::{GridFunction, Mesh};
use crate::gno::NeighborIndex;
use crate::spectral::{from_groups, to_groups, Activation, PointwiseOp};

/// Measure of a `dim`-ball of radius `r`.
pub fn ball_measure(dim: usize, r: f64) -> f64 {
    use std::f64::consts::PI;
    match dim {
        1 => 2.0 * r,
        2 => PI * r * r,
        3 => 4.0 / 3.0 * PI * r * r * r,
        d => {
            // V_d = 2π/d · r² · V_{d-2}
            2.0 * PI / d as f64 * r * r * ball_measure(d - 2, r)
        }
    }
}

/// MLP `(x, y) ↦ k(x, y) ∈ R^{d_out × d_in}`, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelNet {
    pub mlp: PointwiseOp,
    pub dim: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl KernelNet {
    pub fn new(prefix: impl Into<String>, dim: usize, d_in: usize, d_out: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![2 * dim];
        widths.extend_from_slice(hidden);
        widths.push(d_in * d_out);
        Self {
            mlp: PointwiseOp::new(prefix, widths, Activation::Gelu, Activation::Identity),
            dim,
            d_in,
            d_out,
        }
    }

    /// Random hidden layers; the output layer starts near `I / |B_r|`, so the
    /// untrained operator is close to a local average over the ball.
    pub fn init(&self, store: &mut ParamStore, radius: f64, rng: &mut impl Rng) -> Result<()> {
        self.mlp.init(store, rng)?;
        let last = self.mlp.layers() - 1;
        let vol = ball_measure(self.dim, radius);
        let w = store.entry_mut(&self.mlp.weight_name(last)).expect("just inserted");
        let s = 0.1 / (vol * (self.d_in as f64).sqrt());
        w.tensor.data_mut().iter_mut().for_each(|v| *v *= s);
        let b = store.entry_mut(&self.mlp.bias_name(last)).expect("just inserted");
        for o in 0..self.d_out.min(self.d_in) {
            b.tensor.data_mut()[o * self.d_in + o] = 1.0 / vol;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, pairs: Var) -> Result<Var> {
        self.mlp.forward_tensor(tape, store, pairs)
    }
}

/// Kernel integral `v(x) = Σ_{y ∈ B_r(x)} k(x, y) f(y) q_y + b`.
///
/// Parameters: the kernel MLP under `{prefix}.kernel` and `{prefix}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnoLayer {
    pub prefix: String,
    pub kernel: KernelNet,
}

impl GnoLayer {
    pub fn new(prefix: impl Into<String>, dim: usize, d_in: usize, d_out: usize, hidden: &[usize]) -> Self {
        let prefix = prefix.into();
        Self {
            kernel: KernelNet::new(format!("{prefix}.kernel"), dim, d_in, d_out, hidden),
            prefix,
        }
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, radius: f64, rng: &mut impl Rng) -> Result<()> {
        self.kernel.init(store, radius, rng)?;
        store.insert_const(self.bias_name(), vec![self.kernel.d_out], 0.0)
    }

    /// `f` is `[G, n_source, d_in]`; `pairs` are the neighbour pair features.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, f: Var, nbrs: &NeighborIndex, pairs: Var) -> Result<Var> {
        let fs = tape.shape(f);
        if fs.len() != 3 || fs[1] != nbrs.source_len || fs[2] != self.kernel.d_in {
            return Err(CodanoError::shape(format!(
                "{}: input {fs:?}, expected [_, {}, {}]",
                self.prefix, nbrs.source_len, self.kernel.d_in
            )));
        }
        let k = self.kernel.forward(tape, store, pairs)?;
        let y = tape.gather_contract(k, f, Rc::clone(&nbrs.csr), self.kernel.d_out)?;
        tape.add_bias(y, tape.param(store, &self.bias_name())?)
    }
}

fn run(
    layer: &GnoLayer,
    store: &ParamStore,
    nbrs: &NeighborIndex,
    query: &Arc<Mesh>,
    f: &GridFunction,
    groups: usize,
) -> Result<Vec<f64>> {
    let (n, d) = (f.len(), layer.kernel.d_in);
    let tape = Tape::no_grad();
    let x = tape.constant(Tensor::new(vec![groups, n, d], to_groups(f.values(), n, groups, d))?);
    let pairs = tape.constant(nbrs.pair_features(query, f.mesh())?);
    let y = layer.forward(&tape, store, x, nbrs, pairs)?;
    Ok(from_groups(
        tape.value(y).data(),
        query.len(),
        groups,
        layer.kernel.d_out,
    ))
}

/// Evaluate a GNO layer from `f`'s mesh onto `query`.
pub fn gno_apply(
    layer: &GnoLayer,
    store: &ParamStore,
    nbrs: &NeighborIndex,
    query: &Arc<Mesh>,
    f: &GridFunction,
) -> Result<GridFunction> {
    if f.codomain_dim() != layer.kernel.d_in {
        return Err(CodanoError::shape(format!(
            "GNO expects codomain {}, function has {}",
            layer.kernel.d_in,
            f.codomain_dim()
        )));
    }
    let v = run(layer, store, nbrs, query, f, 1)?;
    GridFunction::new(Arc::clone(query), v, layer.kernel.d_out)
}

/// Shared GNO applied to each width-`d_in` variable group of `f`.
pub fn gno_set_apply(
    layer: &GnoLayer,
    store: &ParamStore,
    nbrs: &NeighborIndex,
    query: &Arc<Mesh>,
    f: &GridFunction,
) -> Result<GridFunction> {
    let (width, group) = (f.codomain_dim(), layer.kernel.d_in);
    if width % group != 0 {
        return Err(CodanoError::Partition { width, group });
    }
    let k = width / group;
    let v = run(layer, store, nbrs, query, f, k)?;
    GridFunction::new(Arc::clone(query), v, k * layer.kernel.d_out)
}
