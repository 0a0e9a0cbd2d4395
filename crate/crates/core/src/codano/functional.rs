use std::rc::Rc;
use std::sync::Arc;

use crate::codano::{Codano, CodanoLayer, Head, LatentContext, Vspe};
use crate::diff::{ParamStore, Tape, Tensor};
use crate::error::{CodanoError, Result};
use crate::field::{GridFunction, Mesh};
use crate::spectral::{from_groups, set_apply, to_groups};

/// Token functions of a common width on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub mesh: Arc<Mesh>,
    pub width: usize,
    /// Token values, each `[n, width]` point-major.
    pub tokens: Vec<Vec<f64>>,
    /// Index of the variable each token came from.
    pub variable_of: Vec<usize>,
}

impl TokenSet {
    pub fn new(mesh: Arc<Mesh>, width: usize, tokens: Vec<Vec<f64>>, variable_of: Vec<usize>) -> Result<Self> {
        if tokens.len() != variable_of.len() || tokens.iter().any(|t| t.len() != mesh.len() * width) {
            return Err(CodanoError::shape("tokens must all have width d' on the shared mesh"));
        }
        Ok(Self {
            mesh,
            width,
            tokens,
            variable_of,
        })
    }

    /// Partition a latent function of width `V·D` into tokens of width `token_width`.
    pub fn split(latent: &GridFunction, variables: usize, token_width: usize) -> Result<Self> {
        let c = latent.codomain_dim();
        if variables == 0 || !c.is_multiple_of(variables) {
            return Err(CodanoError::Partition {
                width: c,
                group: variables.max(1),
            });
        }
        let d = c / variables;
        if token_width == 0 || !d.is_multiple_of(token_width) {
            return Err(CodanoError::Partition {
                width: d,
                group: token_width.max(1),
            });
        }
        let (n, t) = (latent.len(), c / token_width);
        let flat = to_groups(latent.values(), n, t, token_width);
        Ok(Self {
            mesh: Arc::clone(latent.mesh()),
            width: token_width,
            tokens: flat.chunks(n * token_width).map(<[f64]>::to_vec).collect(),
            variable_of: (0..t).map(|j| j / (d / token_width)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenate the tokens back into one function.
    pub fn concat(&self) -> Result<GridFunction> {
        let n = self.mesh.len();
        let flat: Vec<f64> = self.tokens.concat();
        GridFunction::new(
            Arc::clone(&self.mesh),
            from_groups(&flat, n, self.len(), self.width),
            self.len() * self.width,
        )
    }

    pub fn token(&self, j: usize) -> Result<GridFunction> {
        GridFunction::new(Arc::clone(&self.mesh), self.tokens[j].clone(), self.width)
    }

    fn tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.mesh.len(), self.width], self.tokens.concat())
    }

    fn with_values(&self, t: &Tensor) -> Result<Self> {
        let w = t.last_dim();
        let chunk = self.mesh.len() * w;
        Self::new(
            Arc::clone(&self.mesh),
            w,
            t.data().chunks(chunk).map(<[f64]>::to_vec).collect(),
            self.variable_of.clone(),
        )
    }
}

fn context(layer: &CodanoLayer, tokens: &TokenSet, tau: Option<f64>) -> Result<LatentContext> {
    if tokens.width != layer.token_width {
        return Err(CodanoError::shape(format!(
            "layer expects token width {}, got {}",
            layer.token_width, tokens.width
        )));
    }
    let tau = tau.unwrap_or_else(|| LatentContext::default_tau(layer.d_k, &tokens.mesh));
    LatentContext::new(&tokens.mesh, tokens.len(), tau)
}

/// Append each variable's positional embedding to it: width `V → V·(d_en + 1)`.
pub fn vspe_concat(vspe: &Vspe, store: &ParamStore, a: &GridFunction) -> Result<GridFunction> {
    let names = a
        .variable_names()
        .ok_or_else(|| CodanoError::DatasetSchema("input variables are unnamed".into()))?;
    let basis = vspe.basis(a.mesh())?;
    let tape = Tape::no_grad();
    let (n, v, w) = (a.len(), names.len(), vspe.d_en + 1);
    let mut out = vec![0.0; n * v * w];
    for (i, name) in names.iter().enumerate() {
        let e = tape.value(vspe.embed(&tape, store, name, &basis)?);
        for p in 0..n {
            let o = (p * v + i) * w;
            out[o] = a.at(p, i);
            out[o + 1..o + w].copy_from_slice(&e.data()[p * vspe.d_en..(p + 1) * vspe.d_en]);
        }
    }
    GridFunction::new(Arc::clone(a.mesh()), out, v * w)
}

/// Shared pointwise lifting of every width-`(d_en + 1)` group.
pub fn lift(model: &Codano, store: &ParamStore, abar: &GridFunction) -> Result<GridFunction> {
    set_apply(&model.lift, store, abar, model.config.d_en + 1)
}

/// Multi-head codomain attention followed by the merge operator.
///
/// Returns the output tokens and one row-major `T×T` attention matrix per head.
pub fn attention(
    layer: &CodanoLayer,
    store: &ParamStore,
    tokens: &TokenSet,
    tau: Option<f64>,
) -> Result<(TokenSet, Vec<Vec<f64>>)> {
    let ctx = context(layer, tokens, tau)?;
    let tape = Tape::no_grad();
    let x = tape.constant(tokens.tensor()?);
    let (o, a) = layer.attention(&tape, store, x, &ctx)?;
    let mats = a.iter().map(|&m| tape.value(m).data().to_vec()).collect();
    Ok((tokens.with_values(&tape.value(o))?, mats))
}

/// Function-space normalization of one token with gain `g` and bias `b`.
pub fn normalize(token: &GridFunction, g: &[f64], b: &[f64], eps: f64) -> Result<GridFunction> {
    let c = token.codomain_dim();
    if g.len() != c || b.len() != c {
        return Err(CodanoError::shape("gain and bias need one entry per channel"));
    }
    let mesh = token.mesh();
    let measure = mesh.measure();
    let wn = Rc::new(mesh.weights().iter().map(|w| w / measure).collect());
    let tape = Tape::no_grad();
    let x = tape.constant(Tensor::new(vec![1, token.len(), c], token.values().to_vec())?);
    let gv = tape.constant(Tensor::new(vec![c], g.to_vec())?);
    let bv = tape.constant(Tensor::new(vec![c], b.to_vec())?);
    let y = tape.instance_norm(x, gv, bv, wn, eps)?;
    GridFunction::new(Arc::clone(mesh), tape.value(y).data().to_vec(), c)
}

/// One full layer: attention, normalization, residual, shared integral operator.
pub fn codano_layer_forward(
    layer: &CodanoLayer,
    store: &ParamStore,
    tokens: &TokenSet,
    tau: Option<f64>,
) -> Result<TokenSet> {
    let ctx = context(layer, tokens, tau)?;
    let tape = Tape::no_grad();
    let x = tape.constant(tokens.tensor()?);
    let y = layer.forward(&tape, store, x, &ctx)?;
    tokens.with_values(&tape.value(y))
}

/// The full model on one named input function, evaluated at `query`.
pub fn model_forward(
    model: &Codano,
    store: &ParamStore,
    a: &GridFunction,
    query: &Arc<Mesh>,
    head: Head,
) -> Result<GridFunction> {
    Ok(model.predict(store, &[a], query, head)?.remove(0))
}
