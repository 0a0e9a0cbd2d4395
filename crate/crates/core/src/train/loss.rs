use serde::Serialize;

use crate::error::{CodanoError, Result};
use crate::field::GridFunction;

/// Quadrature relative L² error with a per-variable breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeL2 {
    pub total: f64,
    pub per_variable: Vec<f64>,
    /// Set when the target norm is zero and the absolute error is reported instead.
    pub absolute: bool,
    pub absolute_per_variable: Vec<bool>,
}

/// `‖pred − target‖ / ‖target‖`, falling back to `‖pred − target‖` for a zero target.
pub fn relative_l2(pred: &GridFunction, target: &GridFunction) -> Result<RelativeL2> {
    if !pred.mesh().same_as(target.mesh()) || pred.codomain_dim() != target.codomain_dim() {
        return Err(CodanoError::shape("relative_l2 needs matching meshes and codomains"));
    }
    let d = pred.codomain_dim();
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for (p, &w) in pred.mesh().weights().iter().enumerate() {
        for c in 0..d {
            let (a, b) = (pred.at(p, c), target.at(p, c));
            num[c] += w * (a - b) * (a - b);
            den[c] += w * b * b;
        }
    }
    let ratio = |n: f64, t: f64| {
        if t > 0.0 {
            ((n / t).sqrt(), false)
        } else {
            (n.sqrt(), true)
        }
    };
    let (total, absolute) = ratio(num.iter().sum(), den.iter().sum());
    let (per_variable, absolute_per_variable) = num.iter().zip(&den).map(|(&n, &t)| ratio(n, t)).unzip();
    Ok(RelativeL2 {
        total,
        per_variable,
        absolute,
        absolute_per_variable,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::field::Mesh;

    fn target() -> GridFunction {
        let m = Arc::new(Mesh::periodic_box(vec![16, 16]).unwrap());
        GridFunction::from_fn(m, 2, |x| vec![x[0].sin(), 1.0 + x[1].cos()]).unwrap()
    }

    fn scaled(f: &GridFunction, s: f64) -> GridFunction {
        GridFunction::new(Arc::clone(f.mesh()), f.values().iter().map(|v| s * v).collect(), 2).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let t = target();
        let r = relative_l2(&t, &t).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.per_variable, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_prediction_is_one() {
        let t = target();
        let r = relative_l2(&scaled(&t, 0.0), &t).unwrap();
        assert!((r.total - 1.0).abs() < 1e-15);
        assert!(!r.absolute);
    }

    #[test]
    fn scaled_prediction_gives_scale_error() {
        let t = target();
        let r = relative_l2(&scaled(&t, 1.1), &t).unwrap();
        assert!((r.total - 0.1).abs() < 1e-12);
        assert!(r.per_variable.iter().all(|e| (e - 0.1).abs() < 1e-12));
    }

    #[test]
    fn zero_target_falls_back_to_absolute() {
        let t = target();
        let z = scaled(&t, 0.0);
        let r = relative_l2(&t, &z).unwrap();
        assert!(r.absolute && r.absolute_per_variable.iter().all(|&f| f));
        assert!(r.total > 0.0);
    }
}
