use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{CodanoError, Result};
use crate::field::fft::{fft_nd, index_of};
use crate::field::{AxisKind, GridFunction, Mesh};

/// Resample a uniform-grid function onto a grid of `new_shape` over the same domain.
///
/// Periodic axes use Fourier interpolation (exact for band-limited data below
/// both Nyquist limits); closed axes use linear interpolation.
pub fn resample(f: &GridFunction, new_shape: &[usize]) -> Result<GridFunction> {
    let grid = f.mesh().require_grid()?;
    if new_shape.len() != grid.shape.len() {
        return Err(CodanoError::shape("resample needs one resolution per axis"));
    }
    if let Some(&n) = new_shape.iter().find(|&&n| n < 2) {
        return Err(CodanoError::Resolution(format!("target resolution {n} is below 2")));
    }
    if new_shape == grid.shape.as_slice() {
        return Ok(f.clone());
    }
    let c = f.codomain_dim();
    let mut shape = grid.shape.clone();
    let mut data = f.values().to_vec();
    for a in 0..shape.len() {
        if shape[a] == new_shape[a] {
            continue;
        }
        data = match grid.axes[a] {
            AxisKind::Periodic => resize_axis_spectral(&data, &shape, c, a, new_shape[a]),
            AxisKind::Closed => resize_axis_linear(&data, &shape, c, a, new_shape[a]),
        };
        shape[a] = new_shape[a];
    }
    let mesh = Mesh::uniform_with_axes(f.mesh().domain().clone(), shape, grid.axes.clone())?;
    let out = GridFunction::new(Arc::new(mesh), data, c)?;
    match f.variable_names() {
        Some(names) => out.named(names.to_vec()),
        None => Ok(out),
    }
}

/// Iterate over lines along `axis`: yields `(base offset in points, stride in points)`.
fn lines(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize)> {
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    (0..outer).flat_map(move |o| (0..inner).map(move |i| (o * n * inner + i, inner)))
}

fn out_base(shape: &[usize], axis: usize, m: usize, base: usize) -> usize {
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let o = base / (n * inner);
    let i = base % inner;
    o * m * inner + i
}

fn resize_axis_spectral(data: &[f64], shape: &[usize], c: usize, axis: usize, m: usize) -> Vec<f64> {
    let n = shape[axis];
    let total_out = data.len() / n * m;
    let mut out = vec![0.0; total_out];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut res = vec![Complex64::new(0.0, 0.0); m];
    let scale = m as f64 / n as f64 / m as f64;
    for (base, stride) in lines(shape, axis) {
        let ob = out_base(shape, axis, m, base);
        for ch in 0..c {
            for (i, z) in buf.iter_mut().enumerate() {
                *z = Complex64::new(data[(base + i * stride) * c + ch], 0.0);
            }
            fft_nd(&mut buf, &[n], false);
            res.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            let lim = n.min(m);
            // strictly-below-Nyquist band copies over unchanged
            let kmax = ((lim - 1) / 2) as i64;
            for k in -kmax..=kmax {
                res[index_of(k, m)] = buf[index_of(k, n)];
            }
            if lim.is_multiple_of(2) {
                let k = (lim / 2) as i64;
                if n < m {
                    // split the old Nyquist coefficient between ±k
                    let z = buf[index_of(k, n)] * 0.5;
                    res[index_of(k, m)] += z;
                    res[index_of(-k, m)] += z;
                } else {
                    res[index_of(k, m)] = buf[index_of(k, n)] + buf[index_of(-k, n)];
                }
            }
            fft_nd(&mut res, &[m], true);
            for (j, z) in res.iter().enumerate() {
                out[(ob + j * stride) * c + ch] = z.re * scale;
            }
        }
    }
    out
}

fn resize_axis_linear(data: &[f64], shape: &[usize], c: usize, axis: usize, m: usize) -> Vec<f64> {
    let n = shape[axis];
    let mut out = vec![0.0; data.len() / n * m];
    for (base, stride) in lines(shape, axis) {
        let ob = out_base(shape, axis, m, base);
        for j in 0..m {
            let t = j as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i0 = (t.floor() as usize).min(n - 2);
            let frac = t - i0 as f64;
            for ch in 0..c {
                let a = data[(base + i0 * stride) * c + ch];
                let b = data[(base + (i0 + 1) * stride) * c + ch];
                out[(ob + j * stride) * c + ch] = a + frac * (b - a);
            }
        }
    }
    out
}
