use rand::Rng;

use crate::diff::{ParamStore, Tape, Var};
use crate::error::{CodanoError, Result};
use crate::field::{GridFunction, Mesh, ModeBand};
use crate::spectral::pointwise::apply_operator;
use crate::spectral::{Activation, Operator};

/// Fourier integral operator `σ(F⁻¹(R · F(w)) + W·w + b)` on a uniform grid.
///
/// Parameters: `{prefix}.spectral_re` / `.spectral_im` of shape
/// `[slots, d_in, d_out]` and, with a bypass, `{prefix}.bypass.weight` and
/// `{prefix}.bypass.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoBlock {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
    pub modes: Vec<usize>,
    pub bypass: bool,
    pub activation: Activation,
}

impl FnoBlock {
    pub fn new(
        prefix: impl Into<String>,
        d_in: usize,
        d_out: usize,
        modes: Vec<usize>,
        bypass: bool,
        activation: Activation,
    ) -> Self {
        Self {
            prefix: prefix.into(),
            d_in,
            d_out,
            modes,
            bypass,
            activation,
        }
    }

    pub fn slots(&self) -> usize {
        ModeBand::slot_count(&self.modes)
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = vec![self.name("spectral_re"), self.name("spectral_im")];
        if self.bypass {
            v.push(self.name("bypass.weight"));
            v.push(self.name("bypass.bias"));
        }
        v
    }

    /// Complex Glorot-scaled spectral weights; Glorot-normal bypass.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let shape = vec![self.slots(), self.d_in, self.d_out];
        let std = 0.5 / ((self.d_in * self.d_out) as f64).sqrt();
        store.insert_normal(self.name("spectral_re"), shape.clone(), std, rng)?;
        store.insert_normal(self.name("spectral_im"), shape, std, rng)?;
        if self.bypass {
            let std = (2.0 / (self.d_in + self.d_out) as f64).sqrt();
            store.insert_normal(self.name("bypass.weight"), vec![self.d_in, self.d_out], std, rng)?;
            store.insert_const(self.name("bypass.bias"), vec![self.d_out], 0.0)?;
        }
        Ok(())
    }

    /// Apply to `[G, n, d_in]` on a grid of `shape`.
    pub fn forward_grid(&self, tape: &Tape, store: &ParamStore, x: Var, shape: &[usize]) -> Result<Var> {
        forward_fused(&[self], tape, store, x, shape)
    }
}

/// Several blocks with the same input, modes, bypass setting and activation,
/// evaluated as one wide block whose output channels are the blocks' outputs
/// side by side.
pub fn forward_fused(blocks: &[&FnoBlock], tape: &Tape, store: &ParamStore, x: Var, shape: &[usize]) -> Result<Var> {
    let first = blocks
        .first()
        .ok_or_else(|| CodanoError::shape("no FNO blocks to apply"))?;
    if blocks.iter().any(|b| {
        b.d_in != first.d_in || b.modes != first.modes || b.bypass != first.bypass || b.activation != first.activation
    }) {
        return Err(CodanoError::shape(
            "fused FNO blocks must agree on input, modes and bypass",
        ));
    }
    let xs = tape.shape(x);
    if xs.last() != Some(&first.d_in) {
        return Err(CodanoError::shape(format!(
            "{}: input {xs:?}, expected width {}",
            first.prefix, first.d_in
        )));
    }
    let cat = |part: &str| -> Result<Var> {
        let vars = blocks
            .iter()
            .map(|b| tape.param(store, &b.name(part)))
            .collect::<Result<Vec<_>>>()?;
        if vars.len() == 1 {
            Ok(vars[0])
        } else {
            tape.concat_last(&vars)
        }
    };
    let mut y = tape.spectral_conv(x, cat("spectral_re")?, cat("spectral_im")?, shape, &first.modes)?;
    if first.bypass {
        let lin = tape.linear(x, cat("bypass.weight")?, Some(cat("bypass.bias")?))?;
        y = tape.add(y, lin)?;
    }
    first.activation.apply(tape, y)
}

impl Operator for FnoBlock {
    fn in_dim(&self) -> usize {
        self.d_in
    }

    fn out_dim(&self) -> usize {
        self.d_out
    }

    fn forward(&self, tape: &Tape, store: &ParamStore, x: Var, mesh: &Mesh) -> Result<Var> {
        let grid = mesh.require_grid()?;
        self.forward_grid(tape, store, x, &grid.shape)
    }
}

/// Evaluate an FNO block on a function sampled on a uniform grid.
pub fn fno_apply(block: &FnoBlock, store: &ParamStore, f: &GridFunction) -> Result<GridFunction> {
    apply_operator(block, store, f)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diff::Tensor;
    use crate::field::resample;

    fn grid(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::periodic_box(vec![n, n]).unwrap())
    }

    fn four_mode(x: &[f64]) -> Vec<f64> {
        vec![
            (x[0]).sin() + 0.5 * (3.0 * x[1]).cos(),
            (2.0 * x[0] - x[1]).cos() + 0.3 * (3.0 * x[0] + 2.0 * x[1]).sin() + 0.2,
        ]
    }

    fn block(bypass: bool, act: Activation) -> FnoBlock {
        FnoBlock::new("b", 2, 2, vec![4, 4], bypass, act)
    }

    fn identity_store(b: &FnoBlock, spectral: f64, bypass: f64) -> ParamStore {
        let s_ = b.slots();
        let mut re = vec![0.0; s_ * 4];
        for s in 0..s_ {
            re[s * 4] = spectral;
            re[s * 4 + 3] = spectral;
        }
        let mut st = ParamStore::new();
        st.insert(b.name("spectral_re"), Tensor::new(vec![s_, 2, 2], re).unwrap())
            .unwrap();
        st.insert_const(b.name("spectral_im"), vec![s_, 2, 2], 0.0).unwrap();
        if b.bypass {
            st.insert(
                b.name("bypass.weight"),
                Tensor::new(vec![2, 2], vec![bypass, 0.0, 0.0, bypass]).unwrap(),
            )
            .unwrap();
            st.insert_const(b.name("bypass.bias"), vec![2], 0.0).unwrap();
        }
        st
    }

    #[test]
    fn identity_filter_reproduces_band_limited_input() {
        let b = block(false, Activation::Identity);
        let f = GridFunction::from_fn(grid(16), 2, four_mode).unwrap();
        let out = fno_apply(&b, &identity_store(&b, 1.0, 0.0), &f).unwrap();
        for (a, c) in out.values().iter().zip(f.values()) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_bypass_with_zero_filter() {
        let b = block(true, Activation::Identity);
        let f = GridFunction::from_fn(grid(12), 2, |x| vec![x[0].cos() * 7.0, (5.0 * x[1]).sin()]).unwrap();
        let out = fno_apply(&b, &identity_store(&b, 0.0, 1.0), &f).unwrap();
        assert_eq!(out.values(), f.values());
    }

    #[test]
    fn random_block_is_resolution_invariant() {
        let b = block(true, Activation::Gelu);
        let mut st = ParamStore::new();
        b.init(&mut st, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let coarse = GridFunction::from_fn(grid(32), 2, four_mode).unwrap();
        let fine = resample(&coarse, &[64, 64]).unwrap();
        let oc = fno_apply(&b, &st, &coarse).unwrap();
        let of = fno_apply(&b, &st, &fine).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                for c in 0..2 {
                    let a = oc.at(i * 32 + j, c);
                    let z = of.at(2 * i * 64 + 2 * j, c);
                    assert!((a - z).abs() < 1e-9, "{a} vs {z}");
                }
            }
        }
    }

    #[test]
    fn linear_block_is_linear() {
        let b = block(false, Activation::Identity);
        let mut st = ParamStore::new();
        b.init(&mut st, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let m = grid(16);
        let f = GridFunction::from_fn(m.clone(), 2, four_mode).unwrap();
        let g = GridFunction::from_fn(m.clone(), 2, |x| vec![(x[0] * x[1]).sin(), x[1].cos()]).unwrap();
        let (al, be) = (1.7, -0.4);
        let mix: Vec<f64> = f
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, c)| al * a + be * c)
            .collect();
        let h = GridFunction::new(m, mix, 2).unwrap();
        let (of, og, oh) = (
            fno_apply(&b, &st, &f).unwrap(),
            fno_apply(&b, &st, &g).unwrap(),
            fno_apply(&b, &st, &h).unwrap(),
        );
        for i in 0..oh.values().len() {
            let lin = al * of.values()[i] + be * og.values()[i];
            assert!((oh.values()[i] - lin).abs() < 1e-10);
        }
    }

    #[test]
    fn too_coarse_for_modes_is_a_mode_count_error() {
        let b = block(false, Activation::Identity);
        let mut st = ParamStore::new();
        b.init(&mut st, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let f = GridFunction::zeros(grid(6), 2).unwrap();
        assert!(matches!(fno_apply(&b, &st, &f), Err(CodanoError::ModeCount(_))));
    }

    #[test]
    fn irregular_mesh_is_unsupported() {
        let b = block(false, Activation::Identity);
        let mut st = ParamStore::new();
        b.init(&mut st, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let m = Mesh::irregular(crate::field::DomainBox::periodic_default(2), vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let f = GridFunction::zeros(Arc::new(m), 2).unwrap();
        assert!(matches!(fno_apply(&b, &st, &f), Err(CodanoError::UnsupportedMesh(_))));
    }
}
