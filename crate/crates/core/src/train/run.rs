use std::collections::BTreeMap;
use std::io::Write;
use std::rc::Rc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codano::{Batch, Codano, ForwardPlan, Head};
use crate::diff::{AdamConfig, OptimizerState, ParamStore, Tape};
use crate::error::{CodanoError, Result};
use crate::field::GridFunction;
use crate::train::{apply_mask, relative_l2, MaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    fn head(self) -> Head {
        match self {
            Phase::Pretrain => Head::Reconstructor,
            Phase::Finetune => Head::Predictor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
    /// Train only the predictor and the positional encoders.
    pub freeze_encoder: bool,
    /// Number of training pairs used for fine-tuning; `None` uses all.
    pub few_shot: Option<usize>,
    /// Trailing fraction of the data held out for evaluation.
    pub holdout_fraction: f64,
    pub mask: MaskSpec,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            clip_norm: 5.0,
            seed: 0,
            freeze_encoder: false,
            few_shot: None,
            holdout_fraction: 0.2,
            mask: MaskSpec::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CodanoError::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(CodanoError::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(CodanoError::Fraction(format!(
                "holdout_fraction = {} is outside [0, 1)",
                self.holdout_fraction
            )));
        }
        self.mask.validate()
    }
}

/// One line of the training log. Epoch 0 evaluates the starting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub eval_loss: Option<f64>,
    pub eval_per_variable: BTreeMap<String, f64>,
}

/// Write `record` as one JSON line.
pub fn write_record(w: &mut impl Write, record: &EpochRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Mean relative L² error over samples, overall and per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    pub per_variable: BTreeMap<String, f64>,
    pub samples: usize,
}

/// Restrict `f` to `names`, in that order; missing names are a schema error.
pub fn select_variables(f: &GridFunction, names: &[String]) -> Result<GridFunction> {
    let have = f
        .variable_names()
        .ok_or_else(|| CodanoError::DatasetSchema("snapshot variables are unnamed".into()))?;
    let order = names
        .iter()
        .map(|n| {
            have.iter()
                .position(|h| h == n)
                .ok_or_else(|| CodanoError::DatasetSchema(format!("variable `{n}` missing from data {have:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    f.select_channels(&order)
}

fn epoch_rng(seed: u64, phase: Phase, epoch: usize) -> ChaCha8Rng {
    crate::codano::component_rng(seed, &format!("{phase:?}.epoch{epoch}"))
}

fn check_schema(model: &Codano, data: &[GridFunction]) -> Result<()> {
    let first = data
        .first()
        .ok_or_else(|| CodanoError::DatasetSchema("no snapshots".into()))?;
    let names = first
        .variable_names()
        .ok_or_else(|| CodanoError::DatasetSchema("snapshot variables are unnamed".into()))?;
    for n in names {
        if !model.config.variables.contains(n) {
            return Err(CodanoError::DatasetSchema(format!(
                "data variable `{n}` is not a model variable {:?}",
                model.config.variables
            )));
        }
    }
    for f in data {
        if !f.mesh().same_as(first.mesh()) || f.variable_names() != Some(names) {
            return Err(CodanoError::DatasetSchema(
                "snapshots differ in mesh or variables".into(),
            ));
        }
    }
    Ok(())
}

struct Stepper<'a> {
    model: &'a Codano,
    plan: ForwardPlan,
    weights: Rc<Vec<f64>>,
    head: Head,
    clip: f64,
}

impl Stepper<'_> {
    fn step(
        &self,
        params: &mut ParamStore,
        opt: &mut OptimizerState,
        inputs: &[&GridFunction],
        targets: &[&GridFunction],
    ) -> Result<(f64, f64)> {
        let batch = Batch::from_functions(inputs)?;
        let target = Rc::new(Batch::from_functions(targets)?.values);
        let tape = Tape::new();
        let y = self.model.forward(&tape, params, &self.plan, &batch, self.head)?;
        let l = tape.rel_l2_loss(y, target, Rc::clone(&self.weights), batch.samples)?;
        let loss = tape.item(l)?;
        let mut grads = tape.backward(l)?;
        params.absorb_grads(&tape, &mut grads);
        let norm = params.clip_grad_norm(self.clip);
        opt.step(params)?;
        params.clear_grads();
        Ok((loss, norm))
    }
}

/// Batched evaluation of `head` on input/target pairs.
///
/// Predictions are made on the mesh of the targets, which may differ from the input mesh.
pub fn evaluate(
    model: &Codano,
    params: &ParamStore,
    inputs: &[GridFunction],
    targets: &[GridFunction],
    head: Head,
    batch_size: usize,
) -> Result<Evaluation> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(CodanoError::DatasetPairing(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mesh = inputs[0].mesh();
    let query = targets[0].mesh();
    let plan = if query.same_as(mesh) {
        Some(model.plan(mesh, query)?)
    } else {
        None
    };
    let names = inputs[0]
        .variable_names()
        .ok_or_else(|| CodanoError::DatasetSchema("snapshot variables are unnamed".into()))?
        .to_vec();
    let mut sum = 0.0;
    let mut per = vec![0.0; names.len()];
    for (xs, ts) in inputs.chunks(batch_size.max(1)).zip(targets.chunks(batch_size.max(1))) {
        let refs: Vec<&GridFunction> = xs.iter().collect();
        let predictions = match &plan {
            Some(plan) => model.predict_planned(params, plan, &Batch::from_functions(&refs)?, head)?,
            None => model.predict(params, &refs, query, head)?,
        };
        for (p, t) in predictions.iter().zip(ts) {
            let r = relative_l2(p, &select_variables(t, &names)?)?;
            sum += r.total;
            per.iter_mut().zip(&r.per_variable).for_each(|(a, b)| *a += b);
        }
    }
    let n = inputs.len() as f64;
    Ok(Evaluation {
        mean: sum / n,
        per_variable: names.into_iter().zip(per.into_iter().map(|s| s / n)).collect(),
        samples: inputs.len(),
    })
}

/// Fixed masked views of held-out snapshots, identical in every epoch.
pub fn masked_eval_inputs(data: &[GridFunction], spec: &MaskSpec, seed: u64) -> Result<Vec<GridFunction>> {
    data.iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = crate::codano::component_rng(seed, &format!("eval-mask{i}"));
            Ok(apply_mask(f, spec, &mut rng)?.0)
        })
        .collect()
}

/// Split indices `0..n` into a leading training part and a trailing held-out part.
pub fn holdout_split(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let held = if n >= 2 && fraction > 0.0 {
        ((fraction * n as f64).ceil() as usize).clamp(1, n - 1)
    } else {
        0
    };
    ((0..n - held).collect(), (n - held..n).collect())
}

fn record(phase: Phase, epoch: usize, train: Option<(f64, f64)>, eval: Option<&Evaluation>) -> EpochRecord {
    EpochRecord {
        phase,
        epoch,
        train_loss: train.map(|t| t.0),
        grad_norm: train.map(|t| t.1),
        eval_loss: eval.map(|e| e.mean),
        eval_per_variable: eval.map(|e| e.per_variable.clone()).unwrap_or_default(),
    }
}

/// Shared epoch loop: `items` are (input, target) index pairs into `inputs`/`targets`.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    phase: Phase,
    model: &Codano,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    plan: &TrainPlan,
    inputs: &[GridFunction],
    targets: &[GridFunction],
    eval: (&[GridFunction], &[GridFunction]),
    start_epoch: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore, &OptimizerState) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    plan.validate()?;
    opt.config = plan.optimizer;
    let mesh = inputs[0].mesh();
    let stepper = Stepper {
        model,
        plan: model.plan(mesh, mesh)?,
        weights: Rc::new(mesh.weights().to_vec()),
        head: phase.head(),
        clip: plan.clip_norm,
    };
    let has_eval = !eval.0.is_empty();
    let run_eval = |params: &ParamStore| -> Result<Option<Evaluation>> {
        if !has_eval {
            return Ok(None);
        }
        evaluate(model, params, eval.0, eval.1, phase.head(), plan.batch_size).map(Some)
    };
    let mut records = Vec::new();
    if start_epoch == 0 {
        let r = record(phase, 0, None, run_eval(params)?.as_ref());
        on_epoch(&r, params, opt)?;
        records.push(r);
    }
    for epoch in start_epoch + 1..=plan.epochs {
        let mut rng = epoch_rng(plan.seed, phase, epoch);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_max) = (0.0, 0.0f64);
        for chunk in order.chunks(plan.batch_size) {
            let masked: Vec<GridFunction> = match phase {
                Phase::Pretrain => chunk
                    .iter()
                    .map(|&i| Ok(apply_mask(&inputs[i], &plan.mask, &mut rng)?.0))
                    .collect::<Result<_>>()?,
                Phase::Finetune => Vec::new(),
            };
            let xs: Vec<&GridFunction> = match phase {
                Phase::Pretrain => masked.iter().collect(),
                Phase::Finetune => chunk.iter().map(|&i| &inputs[i]).collect(),
            };
            let ts: Vec<&GridFunction> = chunk.iter().map(|&i| &targets[i]).collect();
            let (loss, norm) = stepper.step(params, opt, &xs, &ts)?;
            loss_sum += loss * chunk.len() as f64;
            norm_max = norm_max.max(norm);
        }
        let train = (loss_sum / inputs.len() as f64, norm_max);
        let r = record(phase, epoch, Some(train), run_eval(params)?.as_ref());
        on_epoch(&r, params, opt)?;
        records.push(r);
    }
    Ok(records)
}

/// Masked-reconstruction pretraining with the reconstructor head.
///
/// Epochs `start_epoch + 1..=plan.epochs` are run; each draws its shuffling
/// and masks from a generator seeded by `(plan.seed, epoch)`, so a resumed
/// run continues exactly.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    model: &Codano,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    train: &[GridFunction],
    heldout: &[GridFunction],
    plan: &TrainPlan,
    start_epoch: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore, &OptimizerState) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    check_schema(model, train)?;
    if !heldout.is_empty() {
        check_schema(model, heldout)?;
    }
    params.unfreeze_all();
    params.set_frozen_where(true, |k| k.starts_with("predictor."));
    let eval_inputs = masked_eval_inputs(heldout, &plan.mask, plan.seed)?;
    run_epochs(
        Phase::Pretrain,
        model,
        params,
        opt,
        plan,
        train,
        train,
        (&eval_inputs, heldout),
        start_epoch,
        on_epoch,
    )
}

/// Freeze what fine-tuning must not touch; returns the number of frozen entries.
pub fn freeze_for_finetune(params: &mut ParamStore, freeze_encoder: bool) -> usize {
    params.unfreeze_all();
    if freeze_encoder {
        params.set_frozen_where(true, |k| !k.starts_with("predictor.") && !k.starts_with("vspe."))
    } else {
        params.set_frozen_where(true, |k| k.starts_with("reconstructor."))
    }
}

/// Consecutive-snapshot pairs `(t, t + δt)` split into training and held-out sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSplit {
    pub train: Vec<(usize, usize)>,
    pub heldout: Vec<(usize, usize)>,
}

/// Pair consecutive snapshots, hold out the trailing fraction, and optionally
/// keep a deterministic `few_shot` subset of the training pairs.
pub fn next_step_pairs(snapshots: usize, plan: &TrainPlan) -> Result<PairSplit> {
    if snapshots < 3 {
        return Err(CodanoError::DatasetPairing(format!(
            "{snapshots} snapshots cannot form training and held-out (t, t+dt) pairs"
        )));
    }
    let (tr, ho) = holdout_split(snapshots - 1, plan.holdout_fraction.max(f64::MIN_POSITIVE));
    let mut train: Vec<(usize, usize)> = tr.into_iter().map(|i| (i, i + 1)).collect();
    let heldout = ho.into_iter().map(|i| (i, i + 1)).collect();
    if let Some(k) = plan.few_shot {
        if k == 0 || k > train.len() {
            return Err(CodanoError::DatasetPairing(format!(
                "few-shot count {k} not in 1..={} available training pairs",
                train.len()
            )));
        }
        let mut rng = crate::codano::component_rng(plan.seed, "few-shot");
        let mut idx = sample(&mut rng, train.len(), k).into_vec();
        idx.sort_unstable();
        train = idx.into_iter().map(|i| train[i]).collect();
    }
    Ok(PairSplit { train, heldout })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub records: Vec<EpochRecord>,
    pub train_pairs: usize,
    pub heldout: Option<Evaluation>,
}

/// Supervised next-step fine-tuning of the predictor head on `snapshots`.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    model: &Codano,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    snapshots: &[GridFunction],
    plan: &TrainPlan,
    start_epoch: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore, &OptimizerState) -> Result<()>,
) -> Result<FinetuneReport> {
    let split = next_step_pairs(snapshots.len(), plan)?;
    let pick = |pairs: &[(usize, usize)], second: bool| -> Vec<GridFunction> {
        pairs
            .iter()
            .map(|&(a, b)| snapshots[if second { b } else { a }].clone())
            .collect()
    };
    finetune_on_pairs(
        model,
        params,
        opt,
        (&pick(&split.train, false), &pick(&split.train, true)),
        (&pick(&split.heldout, false), &pick(&split.heldout, true)),
        plan,
        start_epoch,
        on_epoch,
    )
}

/// Fine-tune the predictor head on explicit (input, target) pairs.
#[allow(clippy::too_many_arguments)]
pub fn finetune_on_pairs(
    model: &Codano,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    train: (&[GridFunction], &[GridFunction]),
    heldout: (&[GridFunction], &[GridFunction]),
    plan: &TrainPlan,
    start_epoch: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore, &OptimizerState) -> Result<()>,
) -> Result<FinetuneReport> {
    if train.0.len() != train.1.len() || heldout.0.len() != heldout.1.len() || train.0.is_empty() {
        return Err(CodanoError::DatasetPairing("unpaired or empty training data".into()));
    }
    check_schema(model, train.0)?;
    check_schema(model, train.1)?;
    if !model.has_head(params, Head::Predictor) {
        return Err(CodanoError::TrainingState("parameters have no predictor head".into()));
    }
    freeze_for_finetune(params, plan.freeze_encoder);
    let records = run_epochs(
        Phase::Finetune,
        model,
        params,
        opt,
        plan,
        train.0,
        train.1,
        heldout,
        start_epoch,
        on_epoch,
    )?;
    let heldout = if heldout.0.is_empty() {
        None
    } else {
        Some(evaluate(
            model,
            params,
            heldout.0,
            heldout.1,
            Head::Predictor,
            plan.batch_size,
        )?)
    };
    Ok(FinetuneReport {
        records,
        train_pairs: train.0.len(),
        heldout,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::codano::{extend_variables, IoMode, ModelConfig};
    use crate::field::Mesh;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn config(vars: &[&str]) -> ModelConfig {
        ModelConfig {
            variables: names(vars),
            d_en: 2,
            vspe_modes: 2,
            width: 8,
            heads: 1,
            d_k: 4,
            d_v: 8,
            modes: vec![4, 4],
            encoder_layers: 1,
            reconstructor_layers: 1,
            predictor_layers: 1,
            io: IoMode::Grid,
            seed: 1,
            ..ModelConfig::default()
        }
    }

    fn snapshots(vars: &[&str], count: usize) -> Vec<GridFunction> {
        let mesh = Arc::new(Mesh::periodic_box(vec![16, 16]).unwrap());
        (0..count)
            .map(|t| {
                let ph = 0.3 * t as f64;
                GridFunction::from_fn(Arc::clone(&mesh), vars.len(), |x| {
                    (0..vars.len())
                        .map(|v| (x[0] + ph + v as f64).sin() + 0.5 * (x[1] - 0.7 * ph).cos())
                        .collect()
                })
                .unwrap()
                .named(names(vars))
                .unwrap()
            })
            .collect()
    }

    fn nop() -> impl FnMut(&EpochRecord, &ParamStore, &OptimizerState) -> Result<()> {
        |_, _, _| Ok(())
    }

    fn plan(epochs: usize) -> TrainPlan {
        TrainPlan {
            epochs,
            optimizer: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainPlan::default()
        }
    }

    fn setup(vars: &[&str]) -> (Codano, ParamStore, OptimizerState) {
        let m = Codano::new(config(vars)).unwrap();
        let p = m.init_params().unwrap();
        (m, p, OptimizerState::new(AdamConfig::default()))
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let (m, mut p, mut o) = setup(&["u", "v"]);
        let before = p.hashes();
        let data = snapshots(&["u", "v"], 4);
        let recs = pretrain(&m, &mut p, &mut o, &data[..3], &data[3..], &plan(0), 0, &mut nop()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].eval_loss.is_some() && recs[0].train_loss.is_none());
        assert_eq!(p.hashes(), before);
    }

    #[test]
    fn same_seed_gives_identical_parameters_and_resume_continues_exactly() {
        let data = snapshots(&["u", "v"], 6);
        let run = |epochs: usize| {
            let (m, mut p, mut o) = setup(&["u", "v"]);
            let r = pretrain(&m, &mut p, &mut o, &data[..5], &data[5..], &plan(epochs), 0, &mut nop()).unwrap();
            (p, o, r)
        };
        let (p1, _, r1) = run(3);
        let (p2, _, r2) = run(3);
        assert_eq!(p1.hashes(), p2.hashes());
        assert_eq!(r1, r2);

        let (mut p, mut o, _) = run(2);
        let m = Codano::new(config(&["u", "v"])).unwrap();
        let r3 = pretrain(&m, &mut p, &mut o, &data[..5], &data[5..], &plan(3), 2, &mut nop()).unwrap();
        assert_eq!(r3, vec![r1[3].clone()]);
        assert_eq!(p.hashes(), p1.hashes());
    }

    #[test]
    fn overfits_a_single_snapshot() {
        let (m, mut p, mut o) = setup(&["u", "v"]);
        let data = snapshots(&["u", "v"], 1);
        let recs = pretrain(&m, &mut p, &mut o, &data, &[], &plan(200), 0, &mut nop()).unwrap();
        let last = recs.last().unwrap().train_loss.unwrap();
        assert!(last < 0.05, "final training loss {last}");
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let (m, mut p, mut o) = setup(&["u", "v"]);
        let data = snapshots(&["u", "w"], 3);
        let err = pretrain(&m, &mut p, &mut o, &data, &[], &plan(1), 0, &mut nop());
        assert!(matches!(err, Err(CodanoError::DatasetSchema(_))));
    }

    fn extended() -> (Codano, ParamStore) {
        let cfg = config(&["u", "v"]);
        let p = Codano::new(cfg.clone()).unwrap().init_params().unwrap();
        let (p, cfg) = extend_variables(&p, &cfg, &names(&["T"])).unwrap();
        (Codano::new(cfg).unwrap(), p)
    }

    #[test]
    fn frozen_encoder_is_bit_identical_after_training() {
        let (m, mut p) = extended();
        let frozen = |k: &str| !k.starts_with("predictor.") && !k.starts_with("vspe.");
        let before = p.hash_where(frozen);
        let trainable_before = p.hash_where(|k| !frozen(k));
        let data = snapshots(&["u", "v", "T"], 12);
        let plan = TrainPlan {
            freeze_encoder: true,
            ..plan(5)
        };
        let rep = finetune(
            &m,
            &mut p,
            &mut OptimizerState::new(plan.optimizer),
            &data,
            &plan,
            0,
            &mut nop(),
        )
        .unwrap();
        assert_eq!(rep.train_pairs, 8);
        assert_eq!(p.hash_where(frozen), before);
        assert_ne!(p.hash_where(|k| !frozen(k)), trainable_before);
    }

    #[test]
    fn five_shot_uses_exactly_five_pairs() {
        let (m, mut p) = extended();
        let data = snapshots(&["u", "v", "T"], 20);
        let plan = TrainPlan {
            few_shot: Some(5),
            ..plan(2)
        };
        let split = next_step_pairs(data.len(), &plan).unwrap();
        assert_eq!(split.train.len(), 5);
        assert!(split.train.iter().all(|&(a, b)| b == a + 1));
        let rep = finetune(
            &m,
            &mut p,
            &mut OptimizerState::new(plan.optimizer),
            &data,
            &plan,
            0,
            &mut nop(),
        )
        .unwrap();
        assert_eq!(rep.train_pairs, 5);
        let h = rep.heldout.unwrap();
        assert!(h.mean.is_finite() && h.per_variable.contains_key("T"));
    }

    #[test]
    fn learns_the_identity_task() {
        let (m, mut p) = extended();
        let data = snapshots(&["u", "v", "T"], 20);
        let plan = plan(100);
        let rep = finetune_on_pairs(
            &m,
            &mut p,
            &mut OptimizerState::new(plan.optimizer),
            (&data[..16], &data[..16]),
            (&data[16..], &data[16..]),
            &plan,
            0,
            &mut nop(),
        )
        .unwrap();
        let err = rep.heldout.unwrap().mean;
        assert!(err < 0.05, "held-out error {err}");
    }

    #[test]
    fn pairing_errors() {
        assert!(matches!(
            next_step_pairs(2, &TrainPlan::default()),
            Err(CodanoError::DatasetPairing(_))
        ));
        let plan = TrainPlan {
            few_shot: Some(50),
            ..TrainPlan::default()
        };
        assert!(matches!(
            next_step_pairs(10, &plan),
            Err(CodanoError::DatasetPairing(_))
        ));
    }

    #[test]
    fn records_serialize_as_json_lines() {
        let r = EpochRecord {
            phase: Phase::Finetune,
            epoch: 3,
            train_loss: Some(0.5),
            grad_norm: Some(1.0),
            eval_loss: None,
            eval_per_variable: BTreeMap::new(),
        };
        let mut buf = Vec::new();
        write_record(&mut buf, &r).unwrap();
        write_record(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(serde_json::from_str::<EpochRecord>(lines[1]).unwrap(), r);
    }

    #[test]
    fn holdout_split_keeps_both_sides_nonempty() {
        assert_eq!(holdout_split(10, 0.2), ((0..8).collect(), vec![8, 9]));
        assert_eq!(holdout_split(2, 0.9), (vec![0], vec![1]));
        assert_eq!(holdout_split(5, 0.0).1, Vec::<usize>::new());
    }
}
