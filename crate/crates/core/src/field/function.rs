use std::sync::Arc;

use crate::error::{CodanoError, Result};
use crate::field::Mesh;

/// A vector-valued function sampled on a mesh.
///
/// `values` is row-major `(n_points, codomain_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    codomain_dim: usize,
    variable_names: Option<Vec<String>>,
}

impl GridFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>, codomain_dim: usize) -> Result<Self> {
        if codomain_dim == 0 {
            return Err(CodanoError::shape("codomain_dim must be at least 1"));
        }
        if values.len() != mesh.len() * codomain_dim {
            return Err(CodanoError::shape(format!(
                "{} values for {} points x {} channels",
                values.len(),
                mesh.len(),
                codomain_dim
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CodanoError::numeric(
                "GridFunction::new",
                format!("non-finite value at flat index {i}"),
            ));
        }
        Ok(Self {
            mesh,
            values,
            codomain_dim,
            variable_names: None,
        })
    }

    /// One named scalar channel per variable.
    pub fn with_variables(mesh: Arc<Mesh>, values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let f = Self::new(mesh, values, names.len())?;
        f.named(names)
    }

    pub fn named(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.codomain_dim {
            return Err(CodanoError::shape(format!(
                "{} names for {} channels",
                names.len(),
                self.codomain_dim
            )));
        }
        self.variable_names = Some(names);
        Ok(self)
    }

    /// Evaluate a closure at every mesh point.
    pub fn from_fn(mesh: Arc<Mesh>, codomain_dim: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.len() * codomain_dim);
        for i in 0..mesh.len() {
            let v = f(mesh.point(i));
            if v.len() != codomain_dim {
                return Err(CodanoError::shape("closure returned wrong codomain width"));
            }
            values.extend(v);
        }
        Self::new(mesh, values, codomain_dim)
    }

    pub fn zeros(mesh: Arc<Mesh>, codomain_dim: usize) -> Result<Self> {
        let n = mesh.len();
        Self::new(mesh, vec![0.0; n * codomain_dim], codomain_dim)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }

    pub fn variable_names(&self) -> Option<&[String]> {
        self.variable_names.as_deref()
    }

    pub fn at(&self, point: usize, channel: usize) -> f64 {
        self.values[point * self.codomain_dim + channel]
    }

    /// Copy of one channel as a flat vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.codomain_dim).copied().collect()
    }

    /// Reorder (or subset) channels; names follow.
    pub fn select_channels(&self, order: &[usize]) -> Result<Self> {
        if let Some(&c) = order.iter().find(|&&c| c >= self.codomain_dim) {
            return Err(CodanoError::shape(format!("channel {c} out of range")));
        }
        let d = self.codomain_dim;
        let mut values = Vec::with_capacity(self.len() * order.len());
        for row in self.values.chunks(d) {
            values.extend(order.iter().map(|&c| row[c]));
        }
        let mut out = Self::new(self.mesh.clone(), values, order.len())?;
        if let Some(names) = &self.variable_names {
            out.variable_names = Some(order.iter().map(|&c| names[c].clone()).collect());
        }
        Ok(out)
    }
}

/// Quadrature approximation of `∫_D ⟨f(x), g(x)⟩ dx`.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    if !f.mesh().same_as(g.mesh()) || f.codomain_dim() != g.codomain_dim() {
        return Err(CodanoError::shape(
            "inner product needs functions on the same mesh with equal codomain",
        ));
    }
    let d = f.codomain_dim();
    let total: f64 = f
        .values()
        .chunks(d)
        .zip(g.values().chunks(d))
        .zip(f.mesh().weights())
        .map(|((a, b), w)| w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    if !total.is_finite() {
        return Err(CodanoError::numeric("inner_product", "non-finite result"));
    }
    Ok(total)
}

/// `sqrt(⟨f, f⟩)`.
pub fn l2_norm(f: &GridFunction) -> Result<f64> {
    inner_product(f, f).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::field::DomainBox;

    fn unit_line(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::uniform(DomainBox::new(vec![0.0], vec![1.0]).unwrap(), vec![n]).unwrap())
    }

    #[test]
    fn constants_on_unit_domain() {
        for n in [2, 7, 64] {
            let m = unit_line(n);
            let one = GridFunction::from_fn(m.clone(), 1, |_| vec![1.0]).unwrap();
            assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_squared_integrates_to_half() {
        let m = unit_line(256);
        let s = GridFunction::from_fn(m, 1, |x| vec![(2.0 * PI * x[0]).sin()]).unwrap();
        assert!((inner_product(&s, &s).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn sine_cosine_orthogonal() {
        let m = unit_line(128);
        let s = GridFunction::from_fn(m.clone(), 1, |x| vec![(2.0 * PI * x[0]).sin()]).unwrap();
        let c = GridFunction::from_fn(m, 1, |x| vec![(2.0 * PI * x[0]).cos()]).unwrap();
        assert!(inner_product(&s, &c).unwrap().abs() < 1e-10);
    }

    #[test]
    fn band_limited_inner_product_is_resolution_independent() {
        let f = |x: &[f64]| vec![(x[0]).sin() + 0.3 * (3.0 * x[1]).cos(), (2.0 * x[0] + x[1]).cos()];
        let g = |x: &[f64]| vec![(x[0]).sin() * (x[1]).cos() + 0.5, (2.0 * x[0] + x[1]).sin()];
        let ip = |n: usize| {
            let m = Arc::new(Mesh::periodic_box(vec![n, n]).unwrap());
            let a = GridFunction::from_fn(m.clone(), 2, f).unwrap();
            let b = GridFunction::from_fn(m, 2, g).unwrap();
            inner_product(&a, &b).unwrap()
        };
        assert!((ip(64) - ip(128)).abs() < 1e-10);
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let a = GridFunction::zeros(unit_line(8), 1).unwrap();
        let b = GridFunction::zeros(unit_line(16), 1).unwrap();
        assert!(matches!(inner_product(&a, &b), Err(CodanoError::Shape(_))));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(matches!(
            GridFunction::new(unit_line(2), vec![1.0, f64::NAN], 1),
            Err(CodanoError::Numeric { .. })
        ));
    }

    proptest! {
        #[test]
        fn symmetric_and_bilinear(
            a in prop::collection::vec(-10.0f64..10.0, 16),
            b in prop::collection::vec(-10.0f64..10.0, 16),
            c in prop::collection::vec(-10.0f64..10.0, 16),
            alpha in -3.0f64..3.0,
        ) {
            let m = unit_line(8);
            let fa = GridFunction::new(m.clone(), a.clone(), 2).unwrap();
            let fb = GridFunction::new(m.clone(), b.clone(), 2).unwrap();
            let fc = GridFunction::new(m.clone(), c.clone(), 2).unwrap();
            let ab = inner_product(&fa, &fb).unwrap();
            prop_assert_eq!(ab, inner_product(&fb, &fa).unwrap());
            let mix: Vec<f64> = a.iter().zip(&c).map(|(x, y)| alpha * x + y).collect();
            let fmix = GridFunction::new(m, mix, 2).unwrap();
            let lhs = inner_product(&fmix, &fb).unwrap();
            let rhs = alpha * ab + inner_product(&fc, &fb).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()) * 100.0);
        }
    }
}
