use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;
use std::sync::Arc;

use anyhow::anyhow;
use codano_core::checkpoint::Checkpoint;
use codano_core::codano::{extend_variables, Batch, Codano, Head};
use codano_core::diagnostics::{energy_spectrum, spectral_divergence};
use codano_core::diff::{grad_check, GradCheckOptions, OptimizerState, ParamStore, Tensor};
use codano_core::field::{resample, AxisKind, GridFunction, Mesh};
use codano_core::simdata::{self, irregularize, DatasetContainer, System};
use codano_core::train::{
    evaluate, finetune, holdout_split, masked_eval_inputs, next_step_pairs, pretrain, write_record, EpochRecord,
    Evaluation, Phase,
};
use codano_core::CodanoError;
use serde_json::json;

use crate::config::{usage, RunConfig};

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Simulate,
    Pretrain,
    Finetune,
    Eval,
    Spectrum,
    Gradcheck,
}

pub fn dispatch(kind: Kind, cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    match kind {
        Kind::Simulate => simulate(cfg, out),
        Kind::Pretrain => pretrain_cmd(cfg, out),
        Kind::Finetune => finetune_cmd(cfg, out),
        Kind::Eval => eval_cmd(cfg, out),
        Kind::Spectrum => spectrum_cmd(cfg, out),
        Kind::Gradcheck => gradcheck_cmd(cfg, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> anyhow::Error + '_ {
    move |e| anyhow!(CodanoError::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

struct Metrics {
    path: std::path::PathBuf,
    file: BufWriter<File>,
}

impl Metrics {
    fn create(out: &Path) -> anyhow::Result<Self> {
        let path = out.join("metrics.jsonl");
        let file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        Ok(Self { path, file })
    }

    fn record(&mut self, r: &EpochRecord) -> codano_core::Result<()> {
        write_record(&mut self.file, r)
            .and_then(|_| self.file.flush())
            .map_err(|e| CodanoError::io(&self.path, e))
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

fn print_curve(records: &[EpochRecord]) {
    println!("{:>6}  {:>14}  {:>14}", "epoch", "train_loss", "eval_loss");
    for r in records {
        println!(
            "{:>6}  {:>14}  {:>14}",
            r.epoch,
            fmt_opt(r.train_loss),
            fmt_opt(r.eval_loss)
        );
    }
}

fn print_eval(title: &str, e: &Evaluation) {
    println!("{title} ({} samples)", e.samples);
    println!("{:>10}  {:>14}", "variable", "relative_l2");
    for (k, v) in &e.per_variable {
        println!("{k:>10}  {v:>14.6e}");
    }
    println!("{:>10}  {:>14.6e}", "mean", e.mean);
}

fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = simdata::simulate(&cfg.sim)?;
    let mut diag = serde_json::Map::new();
    let speed = (0..ds.len())
        .flat_map(|i| ds.raw(i).chunks(ds.variables().len()).map(|p| p[0].hypot(p[1])))
        .fold(0.0, f64::max);
    diag.insert("max_speed".into(), json!(speed));
    match cfg.sim.system {
        System::Kolmogorov => {
            let div = ds
                .snapshots()?
                .iter()
                .map(spectral_divergence)
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .fold(0.0, f64::max);
            diag.insert("max_spectral_divergence".into(), json!(div));
        }
        System::RayleighBenard => {
            let ny1 = ds.mesh().require_grid()?.shape[1];
            let (mut wall, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..ds.len() {
                for (p, v) in ds.raw(i).chunks(3).enumerate() {
                    let j = p % ny1;
                    if j == 0 {
                        wall = wall.max((v[2] - 1.0).abs());
                    } else if j == ny1 - 1 {
                        wall = wall.max(v[2].abs());
                    }
                    lo = lo.min(v[2]);
                    hi = hi.max(v[2]);
                }
            }
            diag.insert("max_wall_temperature_error".into(), json!(wall));
            diag.insert("temperature_range".into(), json!([lo, hi]));
        }
    }
    let ds = match cfg.io.irregular_keep {
        Some(k) => irregularize(&ds, k, cfg.sim.seed)?,
        None => ds,
    };
    let path = out.join("dataset.cdno");
    ds.write(&path)?;
    let summary = json!({
        "variables": ds.variables(),
        "snapshots": ds.len(),
        "points": ds.mesh().len(),
        "dt": ds.dt(),
        "diagnostics": diag,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {}", path.display());
    println!("variables: {}", ds.variables().join(", "));
    println!("snapshots: {}  points: {}  dt: {}", ds.len(), ds.mesh().len(), ds.dt());
    for (k, v) in &diag {
        println!("{k}: {v}");
    }
    Ok(())
}

fn save_checkpoint(
    out: &Path,
    model: &Codano,
    params: &ParamStore,
    opt: &OptimizerState,
    phase: Phase,
    epoch: usize,
    name: &str,
) -> codano_core::Result<()> {
    let ck = Checkpoint {
        optimizer: Some(opt.clone()),
        phase: Some(phase),
        epoch,
        meta: json!({ "phase": phase }),
        ..Checkpoint::new(model.config.clone(), params.clone())
    };
    ck.write(&out.join(name))
}

fn pretrain_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = DatasetContainer::read(cfg.dataset()?)?;
    let (model_cfg, mut params, mut opt, start) = match &cfg.io.checkpoint {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            if ck.phase != Some(Phase::Pretrain) {
                return Err(anyhow!(CodanoError::TrainingState(
                    "only pretraining checkpoints can be resumed".into()
                )));
            }
            let opt = ck.optimizer.unwrap_or_else(|| OptimizerState::new(cfg.train.optimizer));
            (ck.model, ck.params, opt, ck.epoch)
        }
        None => {
            let mut m = cfg.model.clone();
            if m.variables.is_empty() {
                m.variables = ds.variables().to_vec();
            }
            let params = Codano::new(m.clone())?.init_params()?;
            (m, params, OptimizerState::new(cfg.train.optimizer), 0)
        }
    };
    let model = Codano::new(model_cfg.clone())?;
    let data = ds.select(&model_cfg.variables)?.snapshots()?;
    let (tr, ho) = holdout_split(data.len(), cfg.train.holdout_fraction);
    let train: Vec<GridFunction> = tr.iter().map(|&i| data[i].clone()).collect();
    let held: Vec<GridFunction> = ho.iter().map(|&i| data[i].clone()).collect();
    let mut metrics = Metrics::create(out)?;
    let every = cfg.io.checkpoint_every.max(1);
    let last = cfg.train.epochs;
    let mut on_epoch = |r: &EpochRecord, p: &ParamStore, o: &OptimizerState| {
        metrics.record(r)?;
        eprintln!("pretrain epoch {} eval {}", r.epoch, fmt_opt(r.eval_loss));
        if r.epoch > 0 && (r.epoch.is_multiple_of(every) || r.epoch == last) {
            save_checkpoint(
                out,
                &model,
                p,
                o,
                Phase::Pretrain,
                r.epoch,
                &format!("checkpoint-epoch{:04}.cdno", r.epoch),
            )?;
        }
        Ok(())
    };
    let records = pretrain(
        &model,
        &mut params,
        &mut opt,
        &train,
        &held,
        &cfg.train,
        start,
        &mut on_epoch,
    )?;
    let epoch = start.max(last);
    save_checkpoint(out, &model, &params, &opt, Phase::Pretrain, epoch, "checkpoint.cdno")?;
    println!("variables: {}", model_cfg.variables.join(", "));
    println!("train snapshots: {}  held-out snapshots: {}", train.len(), held.len());
    print_curve(&records);
    Ok(())
}

fn variable_diff(have: &[String], data: &[String]) -> String {
    let h: BTreeSet<&String> = have.iter().collect();
    let d: BTreeSet<&String> = data.iter().collect();
    format!(
        "checkpoint variables {have:?}, dataset variables {data:?}; only in dataset: {:?}; only in checkpoint: {:?}",
        d.difference(&h).collect::<Vec<_>>(),
        h.difference(&d).collect::<Vec<_>>()
    )
}

fn finetune_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::read(cfg.checkpoint()?)?;
    let ds = DatasetContainer::read(cfg.dataset()?)?;
    let have = &ck.model.variables;
    let shared: Vec<String> = ds.variables().iter().filter(|v| have.contains(v)).cloned().collect();
    if shared.is_empty() {
        return Err(anyhow!(CodanoError::DatasetSchema(format!(
            "incompatible checkpoint: no shared variables; {}",
            variable_diff(have, ds.variables())
        ))));
    }
    let new: Vec<String> = ds.variables().iter().filter(|v| !have.contains(v)).cloned().collect();
    let old_model = Codano::new(ck.model.clone())?;
    let (mut params, model_cfg) = if !new.is_empty() || !old_model.has_head(&ck.params, Head::Predictor) {
        extend_variables(&ck.params, &ck.model, &new)?
    } else {
        (ck.params.clone(), ck.model.clone())
    };
    let (before, after) = (ck.params.hashes(), params.hashes());
    let added: Vec<&String> = after.keys().filter(|k| !before.contains_key(*k)).collect();
    let changed: Vec<&String> = after
        .iter()
        .filter(|(k, h)| before.get(*k).is_some_and(|b| b != *h))
        .map(|(k, _)| k)
        .collect();
    let removed: Vec<&String> = before.keys().filter(|k| !after.contains_key(*k)).collect();
    let diff = json!({
        "new_variables": new,
        "variables": variable_diff(have, ds.variables()),
        "added": added,
        "changed": changed,
        "removed": removed,
    });
    write_json(&out.join("param_diff.json"), &diff)?;
    println!("new variables: {new:?}");
    println!(
        "parameter diff: {} added, {} changed, {} removed",
        added.len(),
        changed.len(),
        removed.len()
    );
    for k in &added {
        println!("  + {k}");
    }
    let model = Codano::new(model_cfg.clone())?;
    let vars: Vec<String> = model_cfg
        .variables
        .iter()
        .filter(|v| ds.variables().contains(v))
        .cloned()
        .collect();
    let data = ds.select(&vars)?.snapshots()?;
    let mut opt = OptimizerState::new(cfg.train.optimizer);
    let mut metrics = Metrics::create(out)?;
    let mut on_epoch = |r: &EpochRecord, _: &ParamStore, _: &OptimizerState| {
        metrics.record(r)?;
        eprintln!("finetune epoch {} eval {}", r.epoch, fmt_opt(r.eval_loss));
        Ok(())
    };
    let report = finetune(&model, &mut params, &mut opt, &data, &cfg.train, 0, &mut on_epoch)?;
    save_checkpoint(
        out,
        &model,
        &params,
        &opt,
        Phase::Finetune,
        cfg.train.epochs,
        "checkpoint.cdno",
    )?;
    write_json(
        &out.join("heldout.json"),
        &json!({ "train_pairs": report.train_pairs, "heldout": report.heldout }),
    )?;
    println!("train pairs: {}", report.train_pairs);
    print_curve(&report.records);
    if let Some(e) = &report.heldout {
        print_eval("held-out next-step error", e);
    }
    Ok(())
}

/// Shape with `r` points along the first axis and the other axes scaled to match.
fn scaled_shape(mesh: &Mesh, r: usize) -> anyhow::Result<Vec<usize>> {
    let g = mesh.require_grid()?;
    let n0 = g.shape[0] as f64;
    Ok(g.shape
        .iter()
        .zip(&g.axes)
        .map(|(&n, a)| match a {
            AxisKind::Periodic => ((n as f64) * r as f64 / n0).round() as usize,
            AxisKind::Closed => (((n - 1) as f64) * r as f64 / n0).round() as usize + 1,
        })
        .collect())
}

fn eval_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::read(cfg.checkpoint()?)?;
    let ds = DatasetContainer::read(cfg.dataset()?)?;
    let model = Codano::new(ck.model.clone())?;
    let head = match cfg.io.head.as_deref() {
        Some("predictor") => Head::Predictor,
        Some("reconstructor") => Head::Reconstructor,
        None if model.has_head(&ck.params, Head::Predictor) => Head::Predictor,
        None => Head::Reconstructor,
        Some(h) => return Err(usage(format!("unknown head `{h}`"))),
    };
    let vars: Vec<String> = ck
        .model
        .variables
        .iter()
        .filter(|v| ds.variables().contains(v))
        .cloned()
        .collect();
    if vars.is_empty() {
        return Err(anyhow!(CodanoError::DatasetSchema(format!(
            "no shared variables; {}",
            variable_diff(&ck.model.variables, ds.variables())
        ))));
    }
    let data = ds.select(&vars)?.snapshots()?;
    let (inputs, mut targets) = match head {
        Head::Predictor => {
            let mut plan = cfg.train.clone();
            plan.few_shot = None;
            let split = next_step_pairs(data.len(), &plan)?;
            let xs = split.heldout.iter().map(|&(a, _)| data[a].clone()).collect::<Vec<_>>();
            let ts = split.heldout.iter().map(|&(_, b)| data[b].clone()).collect::<Vec<_>>();
            (xs, ts)
        }
        Head::Reconstructor => {
            let (_, ho) = holdout_split(data.len(), cfg.train.holdout_fraction);
            let held: Vec<GridFunction> = ho.iter().map(|&i| data[i].clone()).collect();
            (masked_eval_inputs(&held, &cfg.train.mask, cfg.train.seed)?, held)
        }
    };
    if inputs.is_empty() {
        return Err(anyhow!(CodanoError::DatasetPairing("no held-out samples".into())));
    }
    if let Some(r) = cfg.io.query_resolution {
        let shape = scaled_shape(ds.mesh(), r)?;
        targets = targets.iter().map(|t| resample(t, &shape)).collect::<Result<_, _>>()?;
    }
    let e = evaluate(&model, &ck.params, &inputs, &targets, head, cfg.train.batch_size)?;
    if cfg.io.save_predictions {
        let query = Arc::clone(targets[0].mesh());
        let mut snaps = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(cfg.train.batch_size.max(1)) {
            let refs: Vec<&GridFunction> = chunk.iter().collect();
            for p in model.predict(&ck.params, &refs, &query, head)? {
                snaps.push(p.into_values());
            }
        }
        let pred = DatasetContainer::new(query, vars.clone(), snaps, ds.dt(), json!({ "head": head }))?;
        pred.write(&out.join("predictions.cdno"))?;
    }
    write_json(
        &out.join("eval.json"),
        &json!({ "head": head, "query_resolution": cfg.io.query_resolution, "evaluation": e }),
    )?;
    print_eval(&format!("{} held-out error", head.prefix()), &e);
    Ok(())
}

fn spectrum_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = DatasetContainer::read(cfg.dataset()?)?;
    let which: Vec<usize> = match cfg.io.snapshot {
        Some(i) => vec![i],
        None => (0..ds.len()).collect(),
    };
    if which.is_empty() {
        return Err(anyhow!(CodanoError::DatasetSchema("dataset has no snapshots".into())));
    }
    let mut energy: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for &i in &which {
        let s = energy_spectrum(&ds.snapshot(i)?)?;
        if s.energy.len() > energy.len() {
            energy.resize(s.energy.len(), 0.0);
        }
        energy.iter_mut().zip(&s.energy).for_each(|(a, b)| *a += b);
        total += s.total;
    }
    let n = which.len() as f64;
    energy.iter_mut().for_each(|e| *e /= n);
    total /= n;
    let spectral: f64 = energy.iter().sum();
    let parseval = if total > 0.0 {
        (spectral - total).abs() / total
    } else {
        0.0
    };
    let path = out.join("spectrum.tsv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "# k\tE(k)").map_err(io_err(&path))?;
    for (k, e) in energy.iter().enumerate() {
        writeln!(w, "{k}\t{e:.17e}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let peak = energy
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (k, &e)| if e > b.1 { (k, e) } else { b })
        .0;
    write_json(
        &out.join("spectrum.json"),
        &json!({
            "snapshots": which.len(),
            "total_energy": total,
            "spectral_energy": spectral,
            "parseval_relative_error": parseval,
            "peak": peak,
        }),
    )?;
    println!("{:>4}  {:>14}", "k", "E(k)");
    for (k, e) in energy.iter().enumerate() {
        println!("{k:>4}  {e:>14.6e}");
    }
    println!("total energy {total:.6e}, Parseval relative error {parseval:.2e}, peak k = {peak}");
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let model = Codano::new(cfg.model.clone())?;
    let params = model.init_params()?;
    let n = cfg.io.gradcheck_grid;
    let mesh = Arc::new(Mesh::periodic_box(vec![n; model.config.dim()])?);
    let vars = model.config.variables.clone();
    let v = vars.len();
    let f = GridFunction::from_fn(Arc::clone(&mesh), v, |x| {
        (0..v)
            .map(|i| (x[0] + i as f64).sin() * (0.5 + 0.3 * i as f64) + 0.2 * ((i + 1) as f64 * x[x.len() - 1]).cos())
            .collect()
    })?
    .named(vars)?;
    let batch = Batch::from_functions(&[&f])?;
    let plan = model.plan(&mesh, &mesh)?;
    let target = Rc::new(Tensor::new(
        batch.values.shape().to_vec(),
        batch.values.data().iter().map(|x| x.cos()).collect(),
    )?);
    let w = Rc::new(mesh.weights().to_vec());
    let opts = GradCheckOptions {
        seed: cfg.train.seed,
        corrupt: cfg.io.corrupt.clone(),
        ..GradCheckOptions::default()
    };
    let report = grad_check(
        |tape, store| {
            let y = model.forward(tape, store, &plan, &batch, Head::Reconstructor)?;
            tape.rel_l2_loss(y, Rc::clone(&target), Rc::clone(&w), 1)
        },
        &params,
        cfg.io.tol,
        &opts,
    )?;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!("{:<40}  {:>7}  {:>12}  result", "group", "checked", "max_rel_err");
    for g in &report.groups {
        let result = if g.skipped {
            "skip"
        } else if g.pass {
            "pass"
        } else {
            "FAIL"
        };
        println!("{:<40}  {:>7}  {:>12.3e}  {result}", g.name, g.checked, g.max_rel_err);
    }
    println!("max relative error {:.3e} (tol {:e})", report.max_rel_err(), report.tol);
    if report.pass {
        println!("gradcheck: pass");
        Ok(())
    } else {
        let names: Vec<&str> = report.failing().map(|g| g.name.as_str()).collect();
        Err(anyhow!(CodanoError::numeric(
            "grad_check",
            format!("failing parameter groups: {}", names.join(", "))
        )))
    }
}
