use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CodanoError, Result};

/// Axis-aligned box `[lo, lo + extent)` containing every mesh point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub extent: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, extent: Vec<f64>) -> Result<Self> {
        if lo.len() != extent.len() || lo.is_empty() {
            return Err(CodanoError::shape("domain box needs matching, nonempty lo/extent"));
        }
        if extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(CodanoError::shape("domain extents must be positive and finite"));
        }
        Ok(Self { lo, extent })
    }

    /// `[0, 2π]^dim`.
    pub fn periodic_default(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            extent: vec![2.0 * PI; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn measure(&self) -> f64 {
        self.extent.iter().product()
    }

    /// Inclusive containment test with a small relative slack.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().enumerate().all(|(a, &x)| {
            let slack = 1e-12 * self.extent[a];
            x >= self.lo[a] - slack && x <= self.lo[a] + self.extent[a] + slack
        })
    }
}

/// Sampling convention of one axis of a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// `n` points `lo + i·L/n`; the right endpoint is identified with the left one.
    Periodic,
    /// `n` points `lo + i·L/(n-1)` including both endpoints (wall-bounded axis).
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub shape: Vec<usize>,
    pub axes: Vec<AxisKind>,
}

impl UniformGrid {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.axes.iter().all(|a| *a == AxisKind::Periodic)
    }

    /// Row-major strides; the first axis varies slowest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for a in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.shape[a + 1];
        }
        strides
    }

    fn spacing(&self, axis: usize, extent: f64) -> f64 {
        match self.axes[axis] {
            AxisKind::Periodic => extent / self.shape[axis] as f64,
            AxisKind::Closed => extent / (self.shape[axis] - 1) as f64,
        }
    }

    fn axis_weights(&self, axis: usize, extent: f64) -> Vec<f64> {
        let n = self.shape[axis];
        let h = self.spacing(axis, extent);
        match self.axes[axis] {
            AxisKind::Periodic => vec![h; n],
            AxisKind::Closed => (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum MeshKind {
    Uniform(UniformGrid),
    Irregular,
}

/// A finite set of points in a domain box, with quadrature weights.
///
/// Points are stored flat, `points[i * dim + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    domain: DomainBox,
    kind: MeshKind,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Mesh {
    /// Periodic uniform grid on `domain`; every weight is the cell volume.
    pub fn uniform(domain: DomainBox, shape: Vec<usize>) -> Result<Self> {
        let axes = vec![AxisKind::Periodic; shape.len()];
        Self::uniform_with_axes(domain, shape, axes)
    }

    /// Periodic uniform grid on `[0, 2π]^dim`.
    pub fn periodic_box(shape: Vec<usize>) -> Result<Self> {
        Self::uniform(DomainBox::periodic_default(shape.len()), shape)
    }

    pub fn uniform_with_axes(domain: DomainBox, shape: Vec<usize>, axes: Vec<AxisKind>) -> Result<Self> {
        if shape.len() != domain.dim() || axes.len() != domain.dim() {
            return Err(CodanoError::shape(format!(
                "grid of rank {} on a {}-dimensional domain",
                shape.len(),
                domain.dim()
            )));
        }
        if let Some(&n) = shape.iter().find(|&&n| n < 2) {
            return Err(CodanoError::Resolution(format!(
                "uniform grid needs at least 2 points per axis, got {n}"
            )));
        }
        let grid = UniformGrid { shape, axes };
        let dim = domain.dim();
        let n = grid.len();
        let strides = grid.strides();
        let spacing: Vec<f64> = (0..dim).map(|a| grid.spacing(a, domain.extent[a])).collect();
        let axis_w: Vec<Vec<f64>> = (0..dim).map(|a| grid.axis_weights(a, domain.extent[a])).collect();
        let mut points = Vec::with_capacity(n * dim);
        let mut weights = Vec::with_capacity(n);
        for p in 0..n {
            let mut w = 1.0;
            for a in 0..dim {
                let i = (p / strides[a]) % grid.shape[a];
                points.push(domain.lo[a] + i as f64 * spacing[a]);
                w *= axis_w[a][i];
            }
            weights.push(w);
        }
        Ok(Self {
            domain,
            kind: MeshKind::Uniform(grid),
            points,
            weights,
        })
    }

    /// Point cloud with Monte-Carlo weights `|D| / n`.
    pub fn irregular(domain: DomainBox, points: Vec<f64>) -> Result<Self> {
        let dim = domain.dim();
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(CodanoError::shape(format!(
                "flat point buffer of length {} is not a nonempty multiple of dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        for (i, p) in points.chunks(dim).enumerate() {
            if !domain.contains(p) {
                return Err(CodanoError::OutOfDomain { index: i });
            }
        }
        let w = domain.measure() / n as f64;
        Ok(Self {
            domain,
            kind: MeshKind::Irregular,
            points,
            weights: vec![w; n],
        })
    }

    /// Reassemble a mesh from stored parts, checking the invariants.
    pub fn from_parts(domain: DomainBox, kind: MeshKind, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        match kind {
            MeshKind::Uniform(grid) => Self::uniform_with_axes(domain, grid.shape.clone(), grid.axes.clone()),
            MeshKind::Irregular => {
                let mesh = Self::irregular(domain, points)?;
                if weights.len() != mesh.len() || weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(CodanoError::shape("bad quadrature weights"));
                }
                Ok(Self { weights, ..mesh })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn kind(&self) -> &MeshKind {
        &self.kind
    }

    pub fn grid(&self) -> Option<&UniformGrid> {
        match &self.kind {
            MeshKind::Uniform(g) => Some(g),
            MeshKind::Irregular => None,
        }
    }

    pub fn require_grid(&self) -> Result<&UniformGrid> {
        self.grid()
            .ok_or_else(|| CodanoError::UnsupportedMesh("operation needs a uniform grid".into()))
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn measure(&self) -> f64 {
        self.domain.measure()
    }

    /// Mean distance from each point to its nearest neighbour (brute force over bins).
    pub fn mean_spacing(&self) -> f64 {
        if let Some(g) = self.grid() {
            let h: f64 = (0..self.dim()).map(|a| g.spacing(a, self.domain.extent[a])).product();
            return h.powf(1.0 / self.dim() as f64);
        }
        let n = self.len();
        if n < 2 {
            return self.domain.extent.iter().cloned().fold(0.0, f64::max);
        }
        // typical spacing for the bin size, then an exact nearest-neighbour search
        let guess = (self.measure() / n as f64).powf(1.0 / self.dim() as f64);
        let index = crate::gno::SpatialBins::new(self, 2.0 * guess);
        let mut total = 0.0;
        for i in 0..n {
            let mut r = 2.0 * guess;
            loop {
                let best = index
                    .within(self.point(i), r)
                    .filter(|&j| j != i)
                    .map(|j| dist(self.point(i), self.point(j)))
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    total += best;
                    break;
                }
                r *= 2.0;
            }
        }
        total / n as f64
    }

    /// Same points and weights (cheap pointer check first).
    pub fn same_as(&self, other: &Mesh) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_are_cell_volume() {
        let m = Mesh::uniform(DomainBox::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap(), vec![4, 6]).unwrap();
        assert!(m.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));
        assert!((m.weights().iter().sum::<f64>() - 6.0).abs() < 1e-10 * 6.0);
        assert_eq!(m.point(7), &[0.5, 0.5]);
    }

    #[test]
    fn closed_axis_uses_trapezoid() {
        let d = DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = Mesh::uniform_with_axes(d, vec![4, 5], vec![AxisKind::Periodic, AxisKind::Closed]).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.point(4), &[0.0, 1.0]);
    }

    #[test]
    fn irregular_weights_sum_to_measure() {
        let d = DomainBox::periodic_default(2);
        let pts = vec![0.1, 0.2, 3.0, 4.0, 6.0, 0.5];
        let m = Mesh::irregular(d.clone(), pts).unwrap();
        let s: f64 = m.weights().iter().sum();
        assert!((s - d.measure()).abs() < 1e-10 * d.measure());
        assert!(Mesh::irregular(d, vec![7.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(matches!(
            Mesh::periodic_box(vec![1, 4]),
            Err(CodanoError::Resolution(_))
        ));
    }
}
