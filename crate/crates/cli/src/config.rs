//! Run configuration: a TOML file, command flags and `--section.key value`
//! overrides, resolved into one strict structure and echoed next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use codano_core::codano::{IoMode, ModelConfig};
use codano_core::simdata::SimConfig;
use codano_core::train::TrainPlan;
use codano_core::CodanoError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

const SECTIONS: [&str; 4] = ["sim", "model", "train", "io"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub dataset: Option<PathBuf>,
    /// Input checkpoint: resume point for pretraining, starting point for fine-tuning and evaluation.
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Keep this fraction of grid points as an irregular cloud after simulating.
    pub irregular_keep: Option<f64>,
    pub query_resolution: Option<usize>,
    /// `predictor` or `reconstructor`; `None` picks the predictor when present.
    pub head: Option<String>,
    pub save_predictions: bool,
    pub snapshot: Option<usize>,
    pub tol: f64,
    /// Test hook: corrupt the analytic gradient of parameter groups with this prefix.
    pub corrupt: Option<String>,
    /// Grid resolution of the gradient-check input.
    pub gradcheck_grid: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoint: None,
            checkpoint_every: 5,
            irregular_keep: None,
            query_resolution: None,
            head: None,
            save_predictions: false,
            snapshot: None,
            tol: 1e-5,
            corrupt: None,
            gradcheck_grid: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides the seeds of every section.
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            deterministic: false,
            sim: SimConfig::default(),
            model: desk_model(),
            train: TrainPlan::default(),
            io: IoConfig::default(),
        }
    }
}

/// Model small enough to train on one CPU core.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        d_en: 4,
        vspe_modes: 4,
        width: 16,
        heads: 2,
        d_k: 8,
        d_v: 16,
        modes: vec![8, 8],
        encoder_layers: 2,
        reconstructor_layers: 1,
        predictor_layers: 1,
        latent_grid: vec![32, 32],
        gno_hidden: vec![16],
        ..ModelConfig::default()
    }
}

/// Two variables, an `8 × 8` latent grid, one layer and two heads.
pub fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        variables: vec!["u_x".into(), "u_y".into()],
        d_en: 2,
        vspe_modes: 2,
        width: 4,
        heads: 2,
        d_k: 4,
        d_v: 4,
        modes: vec![3, 3],
        encoder_layers: 1,
        reconstructor_layers: 0,
        predictor_layers: 1,
        latent_grid: vec![8, 8],
        gno_hidden: vec![8],
        io: IoMode::Gno,
        seed: 5,
        ..ModelConfig::default()
    }
}

pub type Overrides = Vec<(String, String)>;

/// Pull `--a.b value` and `--a.b=value` pairs out of `args`.
pub fn split_dotted(args: Vec<String>) -> anyhow::Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a
            .strip_prefix("--")
            .filter(|f| f.split('=').next().is_some_and(|k| k.contains('.')))
        else {
            rest.push(a);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| usage(format!("override --{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(CodanoError::Config(msg.into()))
}

/// Interpret an override value as TOML (numbers, booleans, arrays), falling back to a string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).unwrap_or(Value::Null),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn lookup<'a>(root: &'a mut Value, path: &[&str]) -> Option<&'a mut Value> {
    path.iter().try_fold(root, |node, k| node.as_object_mut()?.get_mut(*k))
}

/// Set `path` in the serialized config. Unknown paths are rejected; a path
/// without a section prefix is accepted when exactly one section has it.
fn set_path(root: &mut Value, path: &str, value: Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if lookup(root, &parts).is_some() {
        *lookup(root, &parts).expect("checked") = value;
        return Ok(());
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| {
            let mut full = vec![*s];
            full.extend(&parts);
            lookup(root, &full).is_some()
        })
        .collect();
    match hits.as_slice() {
        [s] => {
            let mut full = vec![*s];
            full.extend(&parts);
            *lookup(root, &full).expect("checked") = value;
            Ok(())
        }
        [] => Err(usage(format!("unknown configuration key `{path}`"))),
        many => Err(usage(format!("key `{path}` is ambiguous between sections {many:?}"))),
    }
}

impl RunConfig {
    /// Defaults, then the config file, then `overrides` in order, then `seed`.
    pub fn resolve(
        base: RunConfig,
        file: Option<&Path>,
        overrides: &[(String, String)],
        seed: Option<u64>,
    ) -> anyhow::Result<RunConfig> {
        let mut root = serde_json::to_value(&base)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| anyhow!(CodanoError::io(path, e)))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            merge(&mut root, serde_json::to_value(table)?, "")?;
        }
        for (k, v) in overrides {
            set_path(&mut root, k, parse_value(v))?;
        }
        if let Some(s) = seed {
            root["seed"] = Value::from(s);
        }
        let mut cfg: RunConfig =
            serde_json::from_value(root).map_err(|e| usage(format!("invalid configuration: {e}")))?;
        if let Some(s) = cfg.seed {
            cfg.sim.seed = s;
            cfg.model.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    /// Write the resolved configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| anyhow!(CodanoError::io(dir, e)))?;
        let path = dir.join("config.toml");
        let text = toml::to_string(self).context("serializing the resolved configuration")?;
        std::fs::write(&path, text).map_err(|e| anyhow!(CodanoError::io(&path, e)))
    }

    pub fn dataset(&self) -> anyhow::Result<&Path> {
        self.io
            .dataset
            .as_deref()
            .ok_or_else(|| usage("a dataset is required (--dataset or io.dataset)"))
    }

    pub fn checkpoint(&self) -> anyhow::Result<&Path> {
        self.io
            .checkpoint
            .as_deref()
            .ok_or_else(|| usage("a checkpoint is required (--checkpoint or io.checkpoint)"))
    }
}

/// Overlay file values onto defaults, rejecting keys the defaults do not have.
fn merge(dst: &mut Value, src: Value, at: &str) -> anyhow::Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = d
                    .get_mut(&k)
                    .ok_or_else(|| usage(format!("unknown configuration key `{path}`")))?;
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &path)?;
                } else {
                    *slot = v;
                }
            }
            Ok(())
        }
        _ => bail!("configuration root must be a table"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn dotted_flags_are_split_out() {
        let (rest, ov) = split_dotted(args(
            "codano pretrain --mask.variable_fraction 0.3 --out x --train.epochs=4",
        ))
        .unwrap();
        assert_eq!(rest, args("codano pretrain --out x"));
        assert_eq!(
            ov,
            vec![
                ("mask.variable_fraction".into(), "0.3".into()),
                ("train.epochs".into(), "4".into())
            ]
        );
    }

    #[test]
    fn shorthand_paths_resolve_to_their_section() {
        let ov = vec![
            ("mask.variable_fraction".to_string(), "0.25".to_string()),
            ("sim.system".to_string(), "rayleigh-benard".to_string()),
            ("model.latent_grid".to_string(), "[16, 16]".to_string()),
            ("few_shot".to_string(), "5".to_string()),
        ];
        let c = RunConfig::resolve(RunConfig::default(), None, &ov, Some(9)).unwrap();
        assert_eq!(c.train.mask.variable_fraction, 0.25);
        assert_eq!(c.sim.system, codano_core::simdata::System::RayleighBenard);
        assert_eq!(c.model.latent_grid, vec![16, 16]);
        assert_eq!(c.train.few_shot, Some(5));
        assert_eq!((c.sim.seed, c.model.seed, c.train.seed), (9, 9, 9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ov = vec![("train.epoch".to_string(), "3".to_string())];
        assert!(RunConfig::resolve(RunConfig::default(), None, &ov, None).is_err());
        let ov = vec![("seed".to_string(), "x".to_string())];
        assert!(RunConfig::resolve(RunConfig::default(), None, &ov, None).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let dir = std::env::temp_dir().join(format!("codano-cfg-{}", std::process::id()));
        let ov = vec![("sim.dt".to_string(), "0.25".to_string())];
        let c = RunConfig::resolve(RunConfig::default(), None, &ov, Some(3)).unwrap();
        c.echo(&dir).unwrap();
        let back = RunConfig::resolve(RunConfig::default(), Some(&dir.join("config.toml")), &[], None).unwrap();
        assert_eq!(back, c);
        std::fs::write(dir.join("bad.toml"), "[train]\nepochz = 1\n").unwrap();
        assert!(RunConfig::resolve(RunConfig::default(), Some(&dir.join("bad.toml")), &[], None).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
