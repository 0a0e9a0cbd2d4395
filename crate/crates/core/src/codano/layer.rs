use std::rc::Rc;

use rand::Rng;

use crate::codano::ModelConfig;
use crate::diff::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::field::Mesh;
use crate::spectral::{forward_fused, Activation, FnoBlock};

/// One codomain attention block acting on token functions of width `d'`.
///
/// `w ← I(norm(M[attn(w)]) + w)`, with per-head key, query and value
/// operators shared across tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CodanoLayer {
    pub prefix: String,
    pub k: Vec<FnoBlock>,
    pub q: Vec<FnoBlock>,
    pub v: Vec<FnoBlock>,
    pub m: FnoBlock,
    pub i: FnoBlock,
    pub token_width: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub eps: f64,
}

/// Latent-grid constants shared by every layer of one forward pass.
#[derive(Debug, Clone)]
pub struct LatentContext {
    pub shape: Vec<usize>,
    /// Quadrature weights of the latent grid.
    pub weights: Rc<Vec<f64>>,
    /// The same weights divided by the domain measure.
    pub prob_weights: Rc<Vec<f64>>,
    pub tau: f64,
    pub tokens: usize,
}

impl LatentContext {
    /// Constants for `tokens` token functions on the uniform grid `mesh`.
    pub fn new(mesh: &Mesh, tokens: usize, tau: f64) -> Result<Self> {
        let grid = mesh.require_grid()?;
        let measure = mesh.measure();
        let w = mesh.weights().to_vec();
        Ok(Self {
            shape: grid.shape.clone(),
            prob_weights: Rc::new(w.iter().map(|x| x / measure).collect()),
            weights: Rc::new(w),
            tau,
            tokens,
        })
    }

    /// Default temperature `√d_k · |D|`.
    pub fn default_tau(d_k: usize, mesh: &Mesh) -> f64 {
        (d_k as f64).sqrt() * mesh.measure()
    }
}

impl CodanoLayer {
    pub fn new(prefix: impl Into<String>, c: &ModelConfig) -> Self {
        let prefix = prefix.into();
        let dp = c.token_width();
        let block = |name: String, din, dout, act| FnoBlock::new(name, din, dout, c.modes.clone(), c.bypass, act);
        let heads = |op: &str, dout: usize| {
            (0..c.heads)
                .map(|h| block(format!("{prefix}.head{h}.{op}"), dp, dout, Activation::Identity))
                .collect::<Vec<_>>()
        };
        Self {
            k: heads("K", c.d_k),
            q: heads("Q", c.d_k),
            v: heads("V", c.d_v),
            m: block(format!("{prefix}.M"), c.heads * c.d_v, c.d_v, Activation::Identity),
            i: block(format!("{prefix}.I"), dp, dp, c.activation),
            token_width: dp,
            d_k: c.d_k,
            d_v: c.d_v,
            eps: c.norm_eps,
            prefix,
        }
    }

    pub fn heads(&self) -> usize {
        self.k.len()
    }

    pub fn gain_name(&self) -> String {
        format!("{}.norm.gain", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.norm.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for b in self.k.iter().chain(&self.q).chain(&self.v) {
            b.init(store, rng)?;
        }
        self.m.init(store, rng)?;
        self.i.init(store, rng)?;
        store.insert_const(self.gain_name(), vec![self.token_width], 1.0)?;
        store.insert_const(self.bias_name(), vec![self.token_width], 0.0)
    }

    /// Multi-head attention followed by the merge operator; also returns the
    /// per-head attention matrices `[B, T, T]`.
    pub fn attention(&self, tape: &Tape, store: &ParamStore, x: Var, ctx: &LatentContext) -> Result<(Var, Vec<Var>)> {
        let blocks: Vec<&FnoBlock> = self.k.iter().chain(&self.q).chain(&self.v).collect();
        let kqv = forward_fused(&blocks, tape, store, x, &ctx.shape)?;
        let h = self.heads();
        let mut outs = Vec::with_capacity(h);
        let mut attn = Vec::with_capacity(h);
        for head in 0..h {
            let k = tape.slice_last(kqv, head * self.d_k, self.d_k)?;
            let q = tape.slice_last(kqv, (h + head) * self.d_k, self.d_k)?;
            let v = tape.slice_last(kqv, 2 * h * self.d_k + head * self.d_v, self.d_v)?;
            let logits = tape.token_logits(q, k, Rc::clone(&ctx.weights), ctx.tokens, 1.0 / ctx.tau)?;
            let a = tape.softmax_last(logits)?;
            outs.push(tape.token_mix(a, v)?);
            attn.push(a);
        }
        let cat = if h == 1 { outs[0] } else { tape.concat_last(&outs)? };
        Ok((self.m.forward_grid(tape, store, cat, &ctx.shape)?, attn))
    }

    /// Function-space normalization of every token.
    pub fn normalize(&self, tape: &Tape, store: &ParamStore, x: Var, ctx: &LatentContext) -> Result<Var> {
        let g = tape.param(store, &self.gain_name())?;
        let b = tape.param(store, &self.bias_name())?;
        tape.instance_norm(x, g, b, Rc::clone(&ctx.prob_weights), self.eps)
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var, ctx: &LatentContext) -> Result<Var> {
        let (o, _) = self.attention(tape, store, x, ctx)?;
        let o = self.normalize(tape, store, o, ctx)?;
        let o = tape.add(o, x)?;
        self.i.forward_grid(tape, store, o, &ctx.shape)
    }
}
