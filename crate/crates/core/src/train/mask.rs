use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CodanoError, Result};
use crate::field::{dist, GridFunction};
use crate::gno::SpatialBins;

/// Masking scheme for self-supervised pretraining.
///
/// Each sample is point-masked with probability `point_probability`,
/// otherwise variable-masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    /// Fraction of mesh points zeroed in each affected variable.
    pub point_fraction: f64,
    /// Fraction of variables affected by point masking.
    pub point_variable_fraction: f64,
    /// Fraction of variables zeroed completely.
    pub variable_fraction: f64,
    pub point_probability: f64,
    /// Patch radius on irregular meshes; `None` means twice the mean spacing.
    pub patch_radius: Option<f64>,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            point_fraction: 0.5,
            point_variable_fraction: 0.6,
            variable_fraction: 0.3,
            point_probability: 0.5,
            patch_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Point,
    Variable,
}

/// Which entries were zeroed, point-major `[n, V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub mode: MaskMode,
    pub variables: usize,
    pub flags: Vec<bool>,
}

impl Mask {
    pub fn is_masked(&self, point: usize, var: usize) -> bool {
        self.flags[point * self.variables + var]
    }

    /// Number of masked points of each variable.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.variables];
        for row in self.flags.chunks(self.variables) {
            for (v, &f) in row.iter().enumerate() {
                c[v] += f as usize;
            }
        }
        c
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("point_fraction", self.point_fraction),
            ("point_variable_fraction", self.point_variable_fraction),
            ("variable_fraction", self.variable_fraction),
            ("point_probability", self.point_probability),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(CodanoError::Fraction(format!("{name} = {f} is outside [0, 1]")));
            }
        }
        if let Some(r) = self.patch_radius {
            if !(r > 0.0) {
                return Err(CodanoError::Fraction(format!("patch_radius must be positive, got {r}")));
            }
        }
        Ok(())
    }

    /// Variables zeroed by variable masking; one variable always stays visible.
    pub fn masked_variable_count(&self, d: usize) -> usize {
        ((self.variable_fraction * d as f64).round() as usize).min(d.saturating_sub(1))
    }

    /// Variables affected by point masking.
    pub fn point_variable_count(&self, d: usize) -> usize {
        ((self.point_variable_fraction * d as f64 - 1e-9).ceil().max(0.0) as usize).min(d)
    }

    /// Points zeroed per affected variable.
    pub fn point_count(&self, n: usize) -> usize {
        ((self.point_fraction * n as f64).round() as usize).min(n)
    }
}

/// Draw a mode, then mask `a` accordingly.
pub fn apply_mask(a: &GridFunction, spec: &MaskSpec, rng: &mut impl Rng) -> Result<(GridFunction, Mask)> {
    spec.validate()?;
    let mode = if rng.random::<f64>() < spec.point_probability {
        MaskMode::Point
    } else {
        MaskMode::Variable
    };
    apply_mask_mode(a, spec, mode, rng)
}

/// Mask `a` with a fixed mode; masked values are exactly zero.
pub fn apply_mask_mode(
    a: &GridFunction,
    spec: &MaskSpec,
    mode: MaskMode,
    rng: &mut impl Rng,
) -> Result<(GridFunction, Mask)> {
    spec.validate()?;
    let (n, d) = (a.len(), a.codomain_dim());
    let mut flags = vec![false; n * d];
    match mode {
        MaskMode::Variable => {
            for v in sample(rng, d, spec.masked_variable_count(d)) {
                (0..n).for_each(|p| flags[p * d + v] = true);
            }
        }
        MaskMode::Point => {
            let target = spec.point_count(n);
            let mut vars = sample(rng, d, spec.point_variable_count(d)).into_vec();
            vars.sort_unstable();
            for v in vars {
                let points = if a.mesh().grid().is_some() {
                    sample(rng, n, target).into_vec()
                } else {
                    let r = match spec.patch_radius {
                        Some(r) => r,
                        None => 2.0 * a.mesh().mean_spacing(),
                    };
                    grow_patches(a, target, r, rng)
                };
                points.into_iter().for_each(|p| flags[p * d + v] = true);
            }
        }
    }
    let values = a
        .values()
        .iter()
        .zip(&flags)
        .map(|(&x, &m)| if m { 0.0 } else { x })
        .collect();
    let masked = GridFunction::new(Arc::clone(a.mesh()), values, d)?;
    let masked = match a.variable_names() {
        Some(names) => masked.named(names.to_vec())?,
        None => masked,
    };
    Ok((
        masked,
        Mask {
            mode,
            variables: d,
            flags,
        },
    ))
}

/// Union of balls of radius `r` around random unmasked seeds, nearest points
/// first, until exactly `target` points are covered.
fn grow_patches(a: &GridFunction, target: usize, r: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mesh = a.mesh();
    let n = mesh.len();
    let bins = SpatialBins::new(mesh, r);
    let mut taken = vec![false; n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let seed = free[rng.random_range(0..free.len())];
        let c = mesh.point(seed);
        let mut ball: Vec<(f64, usize)> = bins
            .within(c, r)
            .filter(|&j| !taken[j])
            .map(|j| (dist(c, mesh.point(j)), j))
            .collect();
        ball.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (_, j) in ball {
            if out.len() == target {
                break;
            }
            taken[j] = true;
            out.push(j);
        }
        free.retain(|&j| !taken[j]);
    }
    out
}
