use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codano::{CodanoLayer, IoMode, LatentContext, ModelConfig, Vspe, VspeBasis};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{CodanoError, Result};
use crate::field::{resample, GridFunction, Mesh};
use crate::gno::{build_neighbors, GnoLayer, NeighborIndex};
use crate::hash::fnv1a64;
use crate::spectral::{Activation, PointwiseOp};

/// Which decoding stack follows the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Reconstructor,
    Predictor,
}

impl Head {
    pub fn prefix(self) -> &'static str {
        match self {
            Head::Reconstructor => "reconstructor",
            Head::Predictor => "predictor",
        }
    }
}

/// Deterministic per-component generator, independent of initialization order.
pub fn component_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()))
}

/// Scalar variables of several snapshots on one mesh, as `[B·V, n, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub values: Tensor,
    pub variables: Vec<String>,
    pub samples: usize,
    pub mesh: Arc<Mesh>,
}

impl Batch {
    /// Every function must carry the same variable names on the same mesh.
    pub fn from_functions(fs: &[&GridFunction]) -> Result<Self> {
        let first = fs.first().ok_or_else(|| CodanoError::shape("empty batch"))?;
        let names = first
            .variable_names()
            .ok_or_else(|| CodanoError::DatasetSchema("input variables are unnamed".into()))?
            .to_vec();
        let (n, v) = (first.len(), names.len());
        let mut data = Vec::with_capacity(fs.len() * n * v);
        for f in fs {
            if !f.mesh().same_as(first.mesh()) || f.variable_names() != Some(names.as_slice()) {
                return Err(CodanoError::shape("batch members differ in mesh or variables"));
            }
            data.extend(crate::spectral::to_groups(f.values(), n, v, 1));
        }
        Ok(Self {
            values: Tensor::new(vec![fs.len() * v, n, 1], data)?,
            variables: names,
            samples: fs.len(),
            mesh: Arc::clone(first.mesh()),
        })
    }

    /// Split a `[B·V, n, 1]` output back into named functions on `mesh`.
    pub fn to_functions(
        values: &Tensor,
        variables: &[String],
        samples: usize,
        mesh: &Arc<Mesh>,
    ) -> Result<Vec<GridFunction>> {
        let (v, n) = (variables.len(), mesh.len());
        if values.len() != samples * v * n {
            return Err(CodanoError::shape("output size does not match batch"));
        }
        values
            .data()
            .chunks(v * n)
            .map(|c| {
                GridFunction::with_variables(
                    Arc::clone(mesh),
                    crate::spectral::from_groups(c, n, v, 1),
                    variables.to_vec(),
                )
            })
            .collect()
    }
}

struct Transfer {
    nbrs: NeighborIndex,
    pairs: Tensor,
}

/// Mesh-dependent precomputation for repeated forward passes.
pub struct ForwardPlan {
    pub input: Arc<Mesh>,
    pub latent: Arc<Mesh>,
    pub query: Arc<Mesh>,
    basis: VspeBasis,
    encoder: Option<Transfer>,
    decoder: Option<Transfer>,
}

impl ForwardPlan {
    pub fn encoder_neighbors(&self) -> Option<&NeighborIndex> {
        self.encoder.as_ref().map(|t| &t.nbrs)
    }

    pub fn decoder_neighbors(&self) -> Option<&NeighborIndex> {
        self.decoder.as_ref().map(|t| &t.nbrs)
    }
}

/// The CoDA-NO model: structure only; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Codano {
    pub config: ModelConfig,
    pub vspe: Vspe,
    pub lift: PointwiseOp,
    pub encoder_gno: Option<GnoLayer>,
    pub decoder_gno: Option<GnoLayer>,
    pub encoder: Vec<CodanoLayer>,
    pub reconstructor: Vec<CodanoLayer>,
    pub predictor: Vec<CodanoLayer>,
    pub projection: PointwiseOp,
}

impl Codano {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let act = config.activation;
        let stack = |name: &str, n: usize| {
            (0..n)
                .map(|i| CodanoLayer::new(format!("{name}.layer{i}"), &config))
                .collect::<Vec<_>>()
        };
        let gno = |name: &str| match config.io {
            IoMode::Gno => Some(GnoLayer::new(name, config.dim(), d, d, &config.gno_hidden)),
            IoMode::Grid => None,
        };
        Ok(Self {
            vspe: Vspe::from_config(&config),
            lift: PointwiseOp::new("lift", vec![config.d_en + 1, 2 * d, d], act, Activation::Identity),
            encoder_gno: gno("encoder_gno"),
            decoder_gno: gno("decoder_gno"),
            encoder: stack("encoder", config.encoder_layers),
            reconstructor: stack("reconstructor", config.reconstructor_layers),
            predictor: stack("predictor", config.predictor_layers),
            projection: PointwiseOp::new("projection", vec![d, 2 * d, 1], act, Activation::Identity),
            config,
        })
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        component_rng(self.config.seed, name)
    }

    /// Radius of the GNO neighbourhoods for a given latent grid.
    pub fn radius(&self, latent: &Mesh) -> f64 {
        self.config.gno_radius.unwrap_or_else(|| 2.5 * latent.mean_spacing())
    }

    /// Latent grid over the domain of `input`; for the grid I/O mode this is `input` itself.
    pub fn latent_mesh(&self, input: &Arc<Mesh>) -> Result<Arc<Mesh>> {
        match self.config.io {
            IoMode::Grid => {
                input.require_grid()?;
                Ok(Arc::clone(input))
            }
            IoMode::Gno => Ok(Arc::new(Mesh::uniform(
                input.domain().clone(),
                self.config.latent_grid.clone(),
            )?)),
        }
    }

    /// Fresh parameters for every component except the predictor.
    pub fn init_params(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for v in &self.config.variables {
            self.vspe.init_variable(&mut s, v, &mut self.rng(&Vspe::prefix(v)))?;
        }
        self.lift.init(&mut s, &mut self.rng("lift"))?;
        let r = self.config.gno_radius.unwrap_or_else(|| {
            let latent = Mesh::uniform(
                crate::field::DomainBox::periodic_default(self.config.dim()),
                self.config.latent_grid.clone(),
            );
            latent.map(|m| 2.5 * m.mean_spacing()).unwrap_or(1.0)
        });
        for g in self.encoder_gno.iter().chain(&self.decoder_gno) {
            g.init(&mut s, r, &mut self.rng(&g.prefix))?;
        }
        for l in self.encoder.iter().chain(&self.reconstructor) {
            l.init(&mut s, &mut self.rng(&l.prefix))?;
        }
        self.projection.init(&mut s, &mut self.rng("projection"))?;
        Ok(s)
    }

    /// Replace any predictor entries with freshly initialized ones.
    pub fn init_predictor(&self, store: &mut ParamStore) -> Result<()> {
        let previous = store.hash_where(|k| k.starts_with("predictor."));
        store.remove_prefix("predictor.");
        for l in &self.predictor {
            l.init(store, &mut self.rng(&format!("{}#{previous:016x}", l.prefix)))?;
        }
        Ok(())
    }

    pub fn has_head(&self, store: &ParamStore, head: Head) -> bool {
        let layers = match head {
            Head::Reconstructor => &self.reconstructor,
            Head::Predictor => &self.predictor,
        };
        layers.iter().all(|l| store.contains(&l.gain_name()))
    }

    pub fn plan(&self, input: &Arc<Mesh>, query: &Arc<Mesh>) -> Result<ForwardPlan> {
        for i in 0..query.len() {
            if !input.domain().contains(query.point(i)) {
                return Err(CodanoError::OutOfDomain { index: i });
            }
        }
        let latent = self.latent_mesh(input)?;
        let basis = self.vspe.basis(input)?;
        let transfer = |q: &Arc<Mesh>, s: &Arc<Mesh>| -> Result<Transfer> {
            let nbrs = build_neighbors(q, s, self.radius(&latent))?;
            let pairs = nbrs.pair_features(q, s)?;
            Ok(Transfer { nbrs, pairs })
        };
        let (encoder, decoder) = match self.config.io {
            IoMode::Gno => (Some(transfer(&latent, input)?), Some(transfer(query, &latent)?)),
            IoMode::Grid => (None, None),
        };
        Ok(ForwardPlan {
            input: Arc::clone(input),
            latent,
            query: Arc::clone(query),
            basis,
            encoder,
            decoder,
        })
    }

    fn context(&self, latent: &Mesh, tokens: usize) -> Result<LatentContext> {
        let tau = self
            .config
            .tau
            .unwrap_or_else(|| LatentContext::default_tau(self.config.d_k, latent));
        LatentContext::new(latent, tokens, tau)
    }

    fn check_variables(&self, vars: &[String]) -> Result<()> {
        for v in vars {
            if !self.config.variables.contains(v) {
                return Err(CodanoError::UnknownVariable(v.clone()));
            }
        }
        Ok(())
    }

    /// `[B·V, n, 1]` values to `[B·V, n, d_en + 1]` with each variable's embedding appended.
    pub fn vspe_concat(
        &self,
        tape: &Tape,
        store: &ParamStore,
        values: Var,
        variables: &[String],
        samples: usize,
        basis: &VspeBasis,
    ) -> Result<Var> {
        self.check_variables(variables)?;
        if self.config.d_en == 0 {
            return Ok(values);
        }
        let emb = variables
            .iter()
            .map(|v| self.vspe.embed(tape, store, v, basis))
            .collect::<Result<Vec<_>>>()?;
        let v = variables.len();
        let pattern: Vec<(usize, usize)> = (0..samples * v).map(|g| (g % v, 0)).collect();
        let e = tape.stack_groups(&emb, &pattern)?;
        tape.concat_last(&[values, e])
    }

    fn split_tokens(&self, tape: &Tape, z: Var, groups: usize) -> Result<Var> {
        let tpv = self.config.tokens_per_variable();
        if tpv == 1 {
            return Ok(z);
        }
        let dp = self.config.token_width();
        let parts = (0..tpv)
            .map(|t| tape.slice_last(z, t * dp, dp))
            .collect::<Result<Vec<_>>>()?;
        let pattern: Vec<(usize, usize)> = (0..groups * tpv).map(|i| (i % tpv, i / tpv)).collect();
        tape.stack_groups(&parts, &pattern)
    }

    fn merge_tokens(&self, tape: &Tape, z: Var, groups: usize) -> Result<Var> {
        let tpv = self.config.tokens_per_variable();
        if tpv == 1 {
            return Ok(z);
        }
        let parts = (0..tpv)
            .map(|t| {
                let pattern: Vec<(usize, usize)> = (0..groups).map(|g| (0, g * tpv + t)).collect();
                tape.stack_groups(&[z], &pattern)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat_last(&parts)
    }

    /// Run the encoder and `head` stacks on latent tokens `[B·T, n_latent, d']`.
    pub fn process_tokens(
        &self,
        tape: &Tape,
        store: &ParamStore,
        tokens: Var,
        ctx: &LatentContext,
        head: Head,
    ) -> Result<Var> {
        let layers = match head {
            Head::Reconstructor => &self.reconstructor,
            Head::Predictor => &self.predictor,
        };
        let mut z = tokens;
        for l in self.encoder.iter().chain(layers) {
            z = l.forward(tape, store, z, ctx)?;
        }
        Ok(z)
    }

    /// Full forward pass; returns `[B·V, n_query, 1]`.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        plan: &ForwardPlan,
        batch: &Batch,
        head: Head,
    ) -> Result<Var> {
        if !batch.mesh.same_as(&plan.input) {
            return Err(CodanoError::shape("batch is not on the planned input mesh"));
        }
        if self.config.io == IoMode::Grid && !plan.query.same_as(&plan.input) {
            return Err(CodanoError::UnsupportedMesh(
                "grid I/O evaluates on the input grid only; use predict to resample".into(),
            ));
        }
        let groups = batch.samples * batch.variables.len();
        let a = tape.constant(batch.values.clone());
        let x = self.vspe_concat(tape, store, a, &batch.variables, batch.samples, &plan.basis)?;
        let mut z = self.lift.forward_tensor(tape, store, x)?;
        if let (Some(g), Some(t)) = (&self.encoder_gno, &plan.encoder) {
            z = g.forward(tape, store, z, &t.nbrs, tape.constant(t.pairs.clone()))?;
        }
        let tpv = self.config.tokens_per_variable();
        let ctx = self.context(&plan.latent, batch.variables.len() * tpv)?;
        let tokens = self.split_tokens(tape, z, groups)?;
        let tokens = self.process_tokens(tape, store, tokens, &ctx, head)?;
        let mut y = self.merge_tokens(tape, tokens, groups)?;
        if let (Some(g), Some(t)) = (&self.decoder_gno, &plan.decoder) {
            y = g.forward(tape, store, y, &t.nbrs, tape.constant(t.pairs.clone()))?;
        }
        self.projection.forward_tensor(tape, store, y)
    }

    /// Evaluate on named inputs and return one named output function per input.
    ///
    /// In grid I/O mode a `query` grid different from the input is reached by
    /// resampling the output.
    pub fn predict(
        &self,
        store: &ParamStore,
        inputs: &[&GridFunction],
        query: &Arc<Mesh>,
        head: Head,
    ) -> Result<Vec<GridFunction>> {
        let batch = Batch::from_functions(inputs)?;
        let direct = self.config.io == IoMode::Gno || query.same_as(&batch.mesh);
        let target = if direct {
            Arc::clone(query)
        } else {
            Arc::clone(&batch.mesh)
        };
        let plan = self.plan(&batch.mesh, &target)?;
        let predictions = self.predict_planned(store, &plan, &batch, head)?;
        if direct {
            return Ok(predictions);
        }
        let qgrid = query.require_grid()?;
        if query.domain() != batch.mesh.domain() {
            return Err(CodanoError::UnsupportedMesh(
                "grid I/O resampling needs the same domain".into(),
            ));
        }
        predictions
            .iter()
            .map(|p| {
                let r = resample(p, &qgrid.shape)?;
                GridFunction::with_variables(Arc::clone(query), r.into_values(), batch.variables.clone())
            })
            .collect()
    }

    pub fn predict_planned(
        &self,
        store: &ParamStore,
        plan: &ForwardPlan,
        batch: &Batch,
        head: Head,
    ) -> Result<Vec<GridFunction>> {
        let tape = Tape::no_grad();
        let y = self.forward(&tape, store, plan, batch, head)?;
        Batch::to_functions(&tape.value(y), &batch.variables, batch.samples, &plan.query)
    }
}

/// Add new variables: fresh encoders for them and a fresh predictor; every
/// other entry is carried over unchanged.
pub fn extend_variables(
    params: &ParamStore,
    config: &ModelConfig,
    new_variables: &[String],
) -> Result<(ParamStore, ModelConfig)> {
    let mut cfg = config.clone();
    for v in new_variables {
        if cfg.variables.contains(v) {
            return Err(CodanoError::VariableExists(v.clone()));
        }
        cfg.variables.push(v.clone());
    }
    let model = Codano::new(cfg.clone())?;
    let mut out = params.clone();
    for v in new_variables {
        model
            .vspe
            .init_variable(&mut out, v, &mut model.rng(&Vspe::prefix(v)))?;
    }
    model.init_predictor(&mut out)?;
    Ok((out, cfg))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::diff::{grad_check, GradCheckOptions};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn tiny(vars: &[&str], io: IoMode) -> ModelConfig {
        ModelConfig {
            variables: names(vars),
            d_en: 2,
            vspe_modes: 2,
            width: 4,
            heads: 2,
            d_k: 4,
            d_v: 4,
            modes: vec![3, 3],
            encoder_layers: 1,
            reconstructor_layers: 1,
            predictor_layers: 1,
            latent_grid: vec![8, 8],
            gno_hidden: vec![8],
            io,
            seed: 5,
            ..ModelConfig::default()
        }
    }

    fn input(mesh: &Arc<Mesh>, vars: &[&str]) -> GridFunction {
        let v = vars.len();
        GridFunction::from_fn(Arc::clone(mesh), v, |x| {
            (0..v)
                .map(|i| (x[0] + i as f64).sin() * (0.5 + 0.3 * i as f64) + 0.2 * ((i + 1) as f64 * x[1]).cos())
                .collect()
        })
        .unwrap()
        .named(names(vars))
        .unwrap()
    }

    fn grid(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::periodic_box(vec![n, n]).unwrap())
    }

    #[test]
    fn same_grid_prediction_shape() {
        let m = Codano::new(tiny(&["u", "v"], IoMode::Gno)).unwrap();
        let p = m.init_params().unwrap();
        let mesh = grid(16);
        let out = m
            .predict(&p, &[&input(&mesh, &["u", "v"])], &mesh, Head::Reconstructor)
            .unwrap();
        assert_eq!((out[0].len(), out[0].codomain_dim()), (256, 2));
        assert_eq!(out[0].variable_names(), Some(&names(&["u", "v"])[..]));
    }

    #[test]
    fn super_resolution_query_shape() {
        for io in [IoMode::Gno, IoMode::Grid] {
            let m = Codano::new(tiny(&["u", "v"], io)).unwrap();
            let p = m.init_params().unwrap();
            let fine = grid(64);
            let out = m
                .predict(&p, &[&input(&grid(32), &["u", "v"])], &fine, Head::Reconstructor)
                .unwrap();
            assert_eq!((out[0].len(), out[0].codomain_dim()), (4096, 2));
        }
    }

    #[test]
    fn variable_permutation_permutes_outputs_exactly() {
        for io in [IoMode::Gno, IoMode::Grid] {
            let vars = ["a", "b", "c"];
            let m = Codano::new(tiny(&vars, io)).unwrap();
            let p = m.init_params().unwrap();
            let mesh = grid(16);
            let a = input(&mesh, &vars);
            let order = [2, 0, 1];
            let out = m.predict(&p, &[&a], &mesh, Head::Reconstructor).unwrap();
            let ap = a.select_channels(&order).unwrap();
            let outp = m.predict(&p, &[&ap], &mesh, Head::Reconstructor).unwrap();
            assert_eq!(outp[0], out[0].select_channels(&order).unwrap());
        }
    }

    #[test]
    fn unknown_variable_and_out_of_domain_query() {
        let m = Codano::new(tiny(&["u"], IoMode::Gno)).unwrap();
        let p = m.init_params().unwrap();
        let mesh = grid(16);
        let err = m.predict(&p, &[&input(&mesh, &["w"])], &mesh, Head::Reconstructor);
        assert!(matches!(err, Err(CodanoError::UnknownVariable(v)) if v == "w"));
        let far = Arc::new(
            Mesh::irregular(
                crate::field::DomainBox::new(vec![0.0, 0.0], vec![20.0, 20.0]).unwrap(),
                vec![1.0, 1.0, 15.0, 15.0],
            )
            .unwrap(),
        );
        let err = m.predict(&p, &[&input(&mesh, &["u"])], &far, Head::Reconstructor);
        assert!(matches!(err, Err(CodanoError::OutOfDomain { index: 1 })));
    }

    #[test]
    fn batched_forward_matches_single_samples() {
        let m = Codano::new(tiny(&["u", "v"], IoMode::Gno)).unwrap();
        let p = m.init_params().unwrap();
        let mesh = grid(16);
        let a = input(&mesh, &["u", "v"]);
        let b = GridFunction::new(Arc::clone(&mesh), a.values().iter().map(|x| 2.0 * x - 0.1).collect(), 2)
            .unwrap()
            .named(names(&["u", "v"]))
            .unwrap();
        let both = m.predict(&p, &[&a, &b], &mesh, Head::Reconstructor).unwrap();
        assert_eq!(both[1], m.predict(&p, &[&b], &mesh, Head::Reconstructor).unwrap()[0]);
    }

    fn diff(a: &ParamStore, b: &ParamStore) -> (BTreeSet<String>, BTreeSet<String>) {
        let (ha, hb) = (a.hashes(), b.hashes());
        let added = hb.keys().filter(|k| !ha.contains_key(*k)).cloned().collect();
        let changed = ha
            .iter()
            .filter(|(k, h)| hb.get(*k) != Some(h))
            .map(|(k, _)| k.clone())
            .collect();
        (added, changed)
    }

    #[test]
    fn extension_adds_only_new_encoders_and_predictor() {
        let cfg = tiny(&["u_x", "u_y"], IoMode::Gno);
        let p = Codano::new(cfg.clone()).unwrap().init_params().unwrap();
        let (p2, cfg2) = extend_variables(&p, &cfg, &names(&["d_x", "d_y"])).unwrap();
        assert_eq!(cfg2.variables, names(&["u_x", "u_y", "d_x", "d_y"]));
        let (added, changed) = diff(&p, &p2);
        assert!(changed.is_empty());
        assert!(added
            .iter()
            .all(|k| k.starts_with("vspe.d_x.") || k.starts_with("vspe.d_y.") || k.starts_with("predictor.")));
        assert!(added.iter().any(|k| k.starts_with("vspe.d_x.")));
        assert!(added.iter().any(|k| k.starts_with("vspe.d_y.")));
        assert!(added.iter().any(|k| k.starts_with("predictor.")));

        let (p3, _) = extend_variables(&p2, &cfg2, &[]).unwrap();
        let (added, changed) = diff(&p2, &p3);
        assert!(added.is_empty());
        assert!(!changed.is_empty() && changed.iter().all(|k| k.starts_with("predictor.")));

        assert!(matches!(
            extend_variables(&p, &cfg, &names(&["u_x"])),
            Err(CodanoError::VariableExists(v)) if v == "u_x"
        ));

        let m2 = Codano::new(cfg2).unwrap();
        let mesh = grid(16);
        let all = input(&mesh, &["u_x", "u_y", "d_x", "d_y"]);
        assert_eq!(
            m2.predict(&p2, &[&all], &mesh, Head::Predictor).unwrap()[0].codomain_dim(),
            4
        );
        let old = input(&mesh, &["u_x", "u_y"]);
        assert_eq!(
            m2.predict(&p2, &[&old], &mesh, Head::Predictor).unwrap()[0].codomain_dim(),
            2
        );
    }

    #[test]
    fn full_tiny_model_passes_gradient_check() {
        let cfg = ModelConfig {
            reconstructor_layers: 0,
            ..tiny(&["u", "v"], IoMode::Gno)
        };
        let m = Codano::new(cfg).unwrap();
        let p = m.init_params().unwrap();
        let mesh = grid(8);
        let batch = Batch::from_functions(&[&input(&mesh, &["u", "v"])]).unwrap();
        let plan = m.plan(&mesh, &mesh).unwrap();
        let target = std::rc::Rc::new(
            Tensor::new(
                batch.values.shape().to_vec(),
                batch.values.data().iter().map(|x| x.cos()).collect(),
            )
            .unwrap(),
        );
        let w = std::rc::Rc::new(mesh.weights().to_vec());
        let report = grad_check(
            |tape, store| {
                let y = m.forward(tape, store, &plan, &batch, Head::Reconstructor)?;
                tape.rel_l2_loss(y, std::rc::Rc::clone(&target), std::rc::Rc::clone(&w), 1)
            },
            &p,
            1e-5,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass, "failing: {:?}", report.failing().collect::<Vec<_>>());
    }

    #[test]
    fn grid_path_is_discretization_consistent() {
        let cfg = ModelConfig {
            modes: vec![4, 4],
            ..tiny(&["u", "v"], IoMode::Grid)
        };
        let m = Codano::new(cfg).unwrap();
        let p = m.init_params().unwrap();
        let band = |mesh: &Arc<Mesh>| {
            GridFunction::from_fn(Arc::clone(mesh), 2, |x| {
                vec![0.1 * (x[0] + 0.3).sin() * x[1].cos(), 0.1 * (x[0] - x[1]).cos()]
            })
            .unwrap()
            .named(names(&["u", "v"]))
            .unwrap()
        };
        let (c, f) = (grid(32), grid(64));
        let oc = m.predict(&p, &[&band(&c)], &c, Head::Reconstructor).unwrap().remove(0);
        let of = m.predict(&p, &[&band(&f)], &f, Head::Reconstructor).unwrap().remove(0);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..32 {
            for j in 0..32 {
                for ch in 0..2 {
                    let a = oc.at(i * 32 + j, ch);
                    let b = of.at(2 * i * 64 + 2 * j, ch);
                    err = err.max((a - b).abs());
                    scale = scale.max(b.abs());
                }
            }
        }
        assert!(err / scale < 1e-6, "relative discrepancy {}", err / scale);
    }
}
