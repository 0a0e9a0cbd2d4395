use std::f64::consts::PI;

use rand::Rng;

use crate::codano::{ModelConfig, VspeKind};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{CodanoError, Result};
use crate::field::Mesh;
use crate::spectral::{Activation, PointwiseOp};

/// Variable-specific positional encoders `e^i: D → R^{d_en}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vspe {
    pub kind: VspeKind,
    pub d_en: usize,
    pub modes: usize,
    pub bands: usize,
    pub hidden: usize,
    pub dim: usize,
}

/// Mesh-dependent constants of an encoder evaluation.
#[derive(Debug, Clone)]
pub enum VspeBasis {
    /// `cos θ_s(x)` and `sin θ_s(x)` for every retained wavenumber, `[1, n, slots]`.
    Fourier {
        cos: Tensor,
        sin: Tensor,
    },
    /// Sinusoidal position features, `[1, n, 2·bands·dim]`.
    Features(Tensor),
    Empty {
        points: usize,
    },
}

impl Vspe {
    pub fn from_config(c: &ModelConfig) -> Self {
        Self {
            kind: c.vspe,
            d_en: c.d_en,
            modes: c.vspe_modes,
            bands: c.vspe_bands,
            hidden: c.vspe_hidden,
            dim: c.dim(),
        }
    }

    pub fn prefix(var: &str) -> String {
        format!("vspe.{var}")
    }

    pub fn slots(&self) -> usize {
        (2 * self.modes - 1).pow(self.dim as u32)
    }

    fn mlp(&self, var: &str) -> PointwiseOp {
        PointwiseOp::new(
            format!("{}.mlp", Self::prefix(var)),
            vec![2 * self.bands * self.dim, self.hidden, self.d_en],
            Activation::Gelu,
            Activation::Identity,
        )
    }

    pub fn init_variable(&self, store: &mut ParamStore, var: &str, rng: &mut impl Rng) -> Result<()> {
        if self.d_en == 0 {
            return Ok(());
        }
        match self.kind {
            VspeKind::Fourier => {
                let s = self.slots();
                let std = 0.5 * (2.0 / s as f64).sqrt();
                let p = Self::prefix(var);
                store.insert_normal(format!("{p}.kappa_re"), vec![s, self.d_en], std, rng)?;
                store.insert_normal(format!("{p}.kappa_im"), vec![s, self.d_en], std, rng)
            }
            VspeKind::CoordMlp => self.mlp(var).init(store, rng),
        }
    }

    pub fn basis(&self, mesh: &Mesh) -> Result<VspeBasis> {
        let n = mesh.len();
        if self.d_en == 0 {
            return Ok(VspeBasis::Empty { points: n });
        }
        if mesh.dim() != self.dim {
            return Err(CodanoError::shape(format!(
                "encoders are {}-d, mesh is {}-d",
                self.dim,
                mesh.dim()
            )));
        }
        let dom = mesh.domain();
        let phase = |p: &[f64], a: usize| 2.0 * PI * (p[a] - dom.lo[a]) / dom.extent[a];
        match self.kind {
            VspeKind::Fourier => {
                if mesh.grid().is_none() {
                    return Err(CodanoError::UnsupportedMesh(
                        "Fourier positional encoders need a uniform grid".into(),
                    ));
                }
                let s = self.slots();
                let w = 2 * self.modes - 1;
                let mut cos = Vec::with_capacity(n * s);
                let mut sin = Vec::with_capacity(n * s);
                for i in 0..n {
                    let p = mesh.point(i);
                    for slot in 0..s {
                        let mut rem = slot;
                        let mut th = 0.0;
                        for a in (0..self.dim).rev() {
                            let k = (rem % w) as f64 - (self.modes as f64 - 1.0);
                            rem /= w;
                            th += k * phase(p, a);
                        }
                        cos.push(th.cos());
                        sin.push(th.sin());
                    }
                }
                Ok(VspeBasis::Fourier {
                    cos: Tensor::new(vec![1, n, s], cos)?,
                    sin: Tensor::new(vec![1, n, s], sin)?,
                })
            }
            VspeKind::CoordMlp => {
                let f = 2 * self.bands * self.dim;
                let mut out = Vec::with_capacity(n * f);
                for i in 0..n {
                    let p = mesh.point(i);
                    for a in 0..self.dim {
                        for b in 0..self.bands {
                            let t = (1u64 << b) as f64 * phase(p, a);
                            out.push(t.sin());
                            out.push(t.cos());
                        }
                    }
                }
                Ok(VspeBasis::Features(Tensor::new(vec![1, n, f], out)?))
            }
        }
    }

    /// Embedding of `var` at the basis points, `[1, n, d_en]`.
    pub fn embed(&self, tape: &Tape, store: &ParamStore, var: &str, basis: &VspeBasis) -> Result<Var> {
        let known = match self.kind {
            VspeKind::Fourier => format!("{}.kappa_re", Self::prefix(var)),
            VspeKind::CoordMlp => self.mlp(var).weight_name(0),
        };
        if self.d_en > 0 && !store.contains(&known) {
            return Err(CodanoError::UnknownVariable(var.to_string()));
        }
        match basis {
            VspeBasis::Empty { points } => Ok(tape.constant(Tensor::zeros(vec![1, *points, 0]))),
            VspeBasis::Fourier { cos, sin } => {
                let p = Self::prefix(var);
                let re = tape.param(store, &format!("{p}.kappa_re"))?;
                let im = tape.param(store, &format!("{p}.kappa_im"))?;
                let a = tape.linear(tape.constant(cos.clone()), re, None)?;
                let b = tape.linear(tape.constant(sin.clone()), im, None)?;
                tape.sub(a, b)
            }
            VspeBasis::Features(f) => self.mlp(var).forward_tensor(tape, store, tape.constant(f.clone())),
        }
    }
}
