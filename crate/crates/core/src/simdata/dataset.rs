use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CodanoError, Result};
use crate::field::{AxisKind, DomainBox, GridFunction, Mesh, MeshKind};
use crate::simdata::container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum MeshSpec {
    Uniform {
        domain: DomainBox,
        shape: Vec<usize>,
        axes: Vec<AxisKind>,
    },
    /// Coordinates and weights follow as the first two buffers.
    Irregular { domain: DomainBox, points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub variables: Vec<String>,
    pub mesh: MeshSpec,
    pub snapshots: usize,
    pub dt: f64,
    pub provenance: serde_json::Value,
}

/// Snapshots of a multi-variable field on one mesh.
///
/// Each snapshot is stored point-major: `data[i][p * d + c]` is variable `c`
/// at point `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    variables: Vec<String>,
    mesh: Arc<Mesh>,
    data: Vec<Vec<f64>>,
    dt: f64,
    provenance: serde_json::Value,
}

impl DatasetContainer {
    pub fn new(
        mesh: Arc<Mesh>,
        variables: Vec<String>,
        data: Vec<Vec<f64>>,
        dt: f64,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        if variables.is_empty() {
            return Err(CodanoError::DatasetSchema("dataset has no variables".into()));
        }
        for (i, v) in variables.iter().enumerate() {
            if variables[..i].contains(v) {
                return Err(CodanoError::VariableExists(v.clone()));
            }
        }
        let per = mesh.len() * variables.len();
        if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.len() != per) {
            return Err(CodanoError::shape(format!(
                "snapshot {i} holds {} values, expected {per}",
                s.len()
            )));
        }
        Ok(Self {
            variables,
            mesh,
            data,
            dt,
            provenance,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn snapshot(&self, i: usize) -> Result<GridFunction> {
        let values = self
            .data
            .get(i)
            .ok_or_else(|| CodanoError::DatasetSchema(format!("snapshot {i} of {} requested", self.len())))?
            .clone();
        GridFunction::with_variables(self.mesh.clone(), values, self.variables.clone())
    }

    pub fn snapshots(&self) -> Result<Vec<GridFunction>> {
        (0..self.len()).map(|i| self.snapshot(i)).collect()
    }

    /// Column positions of `names`; a missing name is a schema error.
    pub fn indices_of(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.variables.iter().position(|v| v == n).ok_or_else(|| {
                    CodanoError::DatasetSchema(format!("dataset variables {:?} lack `{n}`", self.variables))
                })
            })
            .collect()
    }

    /// A copy holding only `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = self.indices_of(names)?;
        let d = self.variables.len();
        let data = self
            .data
            .iter()
            .map(|s| s.chunks(d).flat_map(|p| idx.iter().map(move |&c| p[c])).collect())
            .collect();
        Self::new(
            self.mesh.clone(),
            names.to_vec(),
            data,
            self.dt,
            self.provenance.clone(),
        )
    }

    pub fn header(&self) -> DatasetHeader {
        let mesh = match self.mesh.kind() {
            MeshKind::Uniform(g) => MeshSpec::Uniform {
                domain: self.mesh.domain().clone(),
                shape: g.shape.clone(),
                axes: g.axes.clone(),
            },
            MeshKind::Irregular => MeshSpec::Irregular {
                domain: self.mesh.domain().clone(),
                points: self.mesh.len(),
            },
        };
        DatasetHeader {
            version: container::VERSION,
            variables: self.variables.clone(),
            mesh,
            snapshots: self.len(),
            dt: self.dt,
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.mesh.len();
        let d = self.variables.len();
        let channels: Vec<Vec<f64>> = self
            .data
            .iter()
            .flat_map(|s| (0..d).map(move |c| (0..n).map(|p| s[p * d + c]).collect()))
            .collect();
        let mut buffers: Vec<&[f64]> = Vec::with_capacity(channels.len() + 2);
        if matches!(self.mesh.kind(), MeshKind::Irregular) {
            buffers.push(self.mesh.points());
            buffers.push(self.mesh.weights());
        }
        buffers.extend(channels.iter().map(Vec::as_slice));
        container::encode(&self.header(), &buffers)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut buffers): (DatasetHeader, _) = container::decode(bytes)?;
        if h.version != container::VERSION {
            return Err(CodanoError::Version {
                found: h.version,
                expected: container::VERSION,
            });
        }
        let mesh = match h.mesh {
            MeshSpec::Uniform { domain, shape, axes } => Mesh::uniform_with_axes(domain, shape, axes)?,
            MeshSpec::Irregular { domain, points } => {
                if buffers.len() < 2 {
                    return Err(CodanoError::Format("irregular mesh buffers missing".into()));
                }
                let mut rest = buffers.split_off(2);
                std::mem::swap(&mut rest, &mut buffers);
                let (coords, weights) = (rest.swap_remove(0), rest.swap_remove(0));
                if coords.len() != points * domain.dim() {
                    return Err(CodanoError::Format("point buffer does not match header".into()));
                }
                Mesh::from_parts(domain, MeshKind::Irregular, coords, weights)?
            }
        };
        let (n, d) = (mesh.len(), h.variables.len());
        if buffers.len() != h.snapshots * d {
            return Err(CodanoError::Format(format!(
                "{} field buffers for {} snapshots of {d} variables",
                buffers.len(),
                h.snapshots
            )));
        }
        if let Some(b) = buffers.iter().find(|b| b.len() != n) {
            return Err(CodanoError::Format(format!(
                "field buffer of {} values on a {n}-point mesh",
                b.len()
            )));
        }
        let data = buffers
            .chunks(d)
            .map(|chs| (0..n * d).map(|k| chs[k % d][k / d]).collect())
            .collect();
        Self::new(Arc::new(mesh), h.variables, data, h.dt, h.provenance)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

/// Restrict every snapshot to the same random subset of `round(keep · n)` points.
///
/// The result is an irregular mesh with Monte-Carlo weights `|D| / m`.
pub fn irregularize(ds: &DatasetContainer, keep_fraction: f64, seed: u64) -> Result<DatasetContainer> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CodanoError::Fraction(format!(
            "keep fraction {keep_fraction} is outside (0, 1]"
        )));
    }
    let n = ds.mesh.len();
    let m = (keep_fraction * n as f64).round() as usize;
    if m == 0 {
        return Err(CodanoError::Fraction(format!(
            "keeping {keep_fraction} of {n} points selects nothing"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let points = idx.iter().flat_map(|&p| ds.mesh.point(p).to_vec()).collect();
    let mesh = Mesh::irregular(ds.mesh.domain().clone(), points)?;
    let d = ds.variables.len();
    let data = ds
        .data
        .iter()
        .map(|s| idx.iter().flat_map(|&p| s[p * d..(p + 1) * d].to_vec()).collect())
        .collect();
    let provenance = serde_json::json!({
        "source": ds.provenance.clone(),
        "irregularize": {"keep_fraction": keep_fraction, "seed": seed},
    });
    DatasetContainer::new(Arc::new(mesh), ds.variables.clone(), data, ds.dt, provenance)
}
