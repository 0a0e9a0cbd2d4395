//! Model checkpoints stored in the dataset container format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codano::ModelConfig;
use crate::diff::{AdamConfig, OptimizerState, ParamStore, Tensor};
use crate::error::{CodanoError, Result};
use crate::simdata::container;
use crate::train::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerMeta {
    pub config: AdamConfig,
    pub step: u64,
    /// Parameters with stored moments; their `m` buffers follow the parameters, then the `v` buffers.
    pub moments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub params: Vec<ParamMeta>,
    pub optimizer: Option<OptimizerMeta>,
    pub phase: Option<Phase>,
    pub epoch: usize,
    pub meta: serde_json::Value,
}

/// Parameters, optimizer state and training position of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub phase: Option<Phase>,
    pub epoch: usize,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, params: ParamStore) -> Self {
        Self {
            model,
            params,
            optimizer: None,
            phase: None,
            epoch: 0,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params: Vec<ParamMeta> = self
            .params
            .iter()
            .map(|(name, e)| ParamMeta {
                name: name.to_string(),
                shape: e.tensor.shape().to_vec(),
                frozen: e.frozen,
            })
            .collect();
        let mut buffers: Vec<&[f64]> = self.params.iter().map(|(_, e)| e.tensor.data()).collect();
        let optimizer = self.optimizer.as_ref().map(|o| {
            let moments: Vec<String> = o.m.keys().cloned().collect();
            OptimizerMeta {
                config: o.config,
                step: o.step,
                moments,
            }
        });
        if let (Some(o), Some(meta)) = (&self.optimizer, &optimizer) {
            for name in &meta.moments {
                let v =
                    o.v.get(name)
                        .ok_or_else(|| CodanoError::TrainingState(format!("second moment of `{name}` missing")))?;
                if v.len() != o.m[name].len() {
                    return Err(CodanoError::TrainingState(format!(
                        "moments of `{name}` differ in length"
                    )));
                }
            }
            buffers.extend(meta.moments.iter().map(|n| o.m[n].as_slice()));
            buffers.extend(meta.moments.iter().map(|n| o.v[n].as_slice()));
        }
        let header = CheckpointHeader {
            version: container::VERSION,
            model: self.model.clone(),
            params,
            optimizer,
            phase: self.phase,
            epoch: self.epoch,
            meta: self.meta.clone(),
        };
        container::encode(&header, &buffers)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, buffers): (CheckpointHeader, Vec<Vec<f64>>) = container::decode(bytes)?;
        if h.version != container::VERSION {
            return Err(CodanoError::Version {
                found: h.version,
                expected: container::VERSION,
            });
        }
        let moments = h.optimizer.as_ref().map_or(0, |o| o.moments.len());
        if buffers.len() != h.params.len() + 2 * moments {
            return Err(CodanoError::Format(format!(
                "{} buffers for {} parameters and {moments} moment pairs",
                buffers.len(),
                h.params.len()
            )));
        }
        let mut it = buffers.into_iter();
        let mut params = ParamStore::new();
        for p in &h.params {
            let t = Tensor::new(p.shape.clone(), it.next().expect("count checked"))
                .map_err(|e| CodanoError::Format(format!("parameter `{}`: {e}", p.name)))?;
            params
                .insert(p.name.clone(), t)
                .map_err(|e| CodanoError::Format(e.to_string()))?;
            params.set_frozen(&p.name, p.frozen)?;
        }
        let optimizer = match h.optimizer {
            Some(o) => {
                let m: BTreeMap<_, _> = o.moments.iter().cloned().zip(it.by_ref().take(moments)).collect();
                let v: BTreeMap<_, _> = o.moments.iter().cloned().zip(it).collect();
                if m.len() != moments {
                    return Err(CodanoError::Format("duplicate moment names".into()));
                }
                Some(OptimizerState {
                    config: o.config,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Self {
            model: h.model,
            params,
            optimizer,
            phase: h.phase,
            epoch: h.epoch,
            meta: h.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codano::Codano;

    fn tiny() -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig {
            variables: vec!["a".into(), "b".into()],
            width: 4,
            heads: 1,
            d_k: 2,
            d_v: 4,
            modes: vec![2, 2],
            latent_grid: vec![8, 8],
            ..ModelConfig::default()
        };
        let model = Codano::new(cfg.clone()).unwrap();
        (cfg, model.init_params().unwrap())
    }

    #[test]
    fn round_trip_with_optimizer_state_is_bit_exact() {
        let (cfg, mut params) = tiny();
        params.set_frozen_where(true, |n| n.starts_with("vspe"));
        let mut opt = OptimizerState::new(AdamConfig::default());
        opt.step = 7;
        for (name, e) in params.iter() {
            opt.m
                .insert(name.to_string(), e.tensor.data().iter().map(|x| x * 0.1).collect());
            opt.v
                .insert(name.to_string(), e.tensor.data().iter().map(|x| x * x).collect());
        }
        let ck = Checkpoint {
            optimizer: Some(opt),
            phase: Some(Phase::Pretrain),
            epoch: 3,
            meta: serde_json::json!({"note": "x"}),
            ..Checkpoint::new(cfg, params)
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.hashes(), ck.params.hashes());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let (cfg, params) = tiny();
        let bytes = Checkpoint::new(cfg, params).to_bytes().unwrap();
        let mut bad = bytes.clone();
        let k = bad.len() - 30;
        bad[k] ^= 0x80;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CodanoError::Checksum(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() / 2]),
            Err(CodanoError::Truncated(_) | CodanoError::Checksum(_))
        ));
    }
}
