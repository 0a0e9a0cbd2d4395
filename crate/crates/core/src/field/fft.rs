//! Discrete Fourier transforms on uniform grids.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/N` factor, so a constant `c` on `N` points has zero mode `c·N`.
//! Spectra keep the full (Hermitian-redundant) index set.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CodanoError, Result};
use crate::field::{GridFunction, Mesh};

type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>);

thread_local! {
    static PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(f) = p.1.get(&(n, inverse)) {
            return f.clone();
        }
        let f = if inverse {
            p.0.plan_fft_inverse(n)
        } else {
            p.0.plan_fft_forward(n)
        };
        p.1.insert((n, inverse), f.clone());
        f
    })
}

/// Signed wavenumber of spectrum index `i` on an axis of length `n`.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Spectrum index of signed wavenumber `k` on an axis of length `n`.
pub fn index_of(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Unnormalized in-place transform of one N-d array along `axes` (all axes if `None`).
pub fn fft_axes(data: &mut [Complex64], shape: &[usize], inverse: bool, axes: Option<&[usize]>) {
    let total: usize = shape.iter().product();
    debug_assert_eq!(data.len(), total);
    let st = strides(shape);
    let all: Vec<usize> = (0..shape.len()).collect();
    let axes = axes.unwrap_or(&all);
    let mut line = Vec::new();
    for &a in axes {
        let n = shape[a];
        if n < 2 {
            continue;
        }
        let f = plan(n, inverse);
        let stride = st[a];
        if stride == 1 {
            f.process(data);
            continue;
        }
        line.resize(n, Complex64::new(0.0, 0.0));
        let block = stride * n;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (i, z) in line.iter_mut().enumerate() {
                    *z = data[base + i * stride];
                }
                f.process(&mut line);
                for (i, z) in line.iter().enumerate() {
                    data[base + i * stride] = *z;
                }
            }
        }
    }
}

/// Unnormalized transform on all axes.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    fft_axes(data, shape, inverse, None)
}

/// Per-channel spectrum of a field on a uniform grid, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub shape: Vec<usize>,
    pub channels: usize,
    /// `data[c * N + k]`.
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// `Σ_k |X_k|²` over all channels.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

pub fn fft_forward(f: &GridFunction) -> Result<Spectrum> {
    let grid = f
        .mesh()
        .grid()
        .ok_or_else(|| CodanoError::UnsupportedMesh("FFT needs a uniform grid".into()))?;
    let n = grid.len();
    let c = f.codomain_dim();
    let mut data = vec![Complex64::new(0.0, 0.0); n * c];
    for (p, row) in f.values().chunks(c).enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            data[ch * n + p] = Complex64::new(v, 0.0);
        }
    }
    for ch in 0..c {
        fft_nd(&mut data[ch * n..(ch + 1) * n], &grid.shape, false);
    }
    Ok(Spectrum {
        shape: grid.shape.clone(),
        channels: c,
        data,
    })
}

/// Inverse transform, keeping the real part.
pub fn fft_inverse(spec: &Spectrum, mesh: Arc<Mesh>) -> Result<GridFunction> {
    let grid = mesh.require_grid()?;
    if grid.shape != spec.shape {
        return Err(CodanoError::shape(format!(
            "spectrum shape {:?} does not match grid {:?}",
            spec.shape, grid.shape
        )));
    }
    let n = spec.len();
    let c = spec.channels;
    let mut values = vec![0.0; n * c];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for ch in 0..c {
        buf.copy_from_slice(spec.channel(ch));
        fft_nd(&mut buf, &spec.shape, true);
        for (p, z) in buf.iter().enumerate() {
            values[p * c + ch] = z.re * scale;
        }
    }
    GridFunction::new(mesh, values, c)
}

/// Zero every coefficient with `|k_a| ≥ modes[a]` on some axis.
///
/// `modes[a]` may be at most `n_a/2 + 1`; that value keeps everything.
pub fn restrict_truncate(spec: &Spectrum, modes: &[usize]) -> Result<Spectrum> {
    if modes.len() != spec.shape.len() {
        return Err(CodanoError::shape("one mode count per axis required"));
    }
    for (&m, &n) in modes.iter().zip(&spec.shape) {
        if m > n / 2 + 1 {
            return Err(CodanoError::ModeCount(format!(
                "{m} modes requested on an axis of {n} points (max {})",
                n / 2 + 1
            )));
        }
    }
    let st = strides(&spec.shape);
    let n = spec.len();
    let keep: Vec<bool> = (0..n)
        .map(|p| {
            spec.shape.iter().enumerate().all(|(a, &na)| {
                let i = (p / st[a]) % na;
                (wavenumber(i, na).unsigned_abs() as usize) < modes[a]
            })
        })
        .collect();
    let mut out = spec.clone();
    for ch in 0..spec.channels {
        for (p, k) in keep.iter().enumerate() {
            if !k {
                out.data[ch * n + p] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}

/// Retained band `|k_a| < modes[a]` on a grid.
///
/// Weight slot `s` enumerates wavenumber tuples lexicographically with each
/// `k_a` running over `-(m_a-1)..=m_a-1`, so the slot of a given wavenumber
/// does not depend on the grid resolution.
#[derive(Debug, Clone)]
pub struct ModeBand {
    pub modes: Vec<usize>,
    /// `(weight slot, flat spectrum index)` pairs.
    pub entries: Vec<(usize, usize)>,
    pub slots: usize,
}

impl ModeBand {
    pub fn slot_count(modes: &[usize]) -> usize {
        modes.iter().map(|&m| 2 * m - 1).product()
    }

    /// Band for `modes` on `shape`; requires `n_a ≥ 2·m_a`.
    pub fn new(shape: &[usize], modes: &[usize]) -> Result<Self> {
        if shape.len() != modes.len() {
            return Err(CodanoError::shape(format!(
                "{} mode counts for a {}-d grid",
                modes.len(),
                shape.len()
            )));
        }
        for (&n, &m) in shape.iter().zip(modes) {
            if m == 0 || n < 2 * m {
                return Err(CodanoError::ModeCount(format!(
                    "{m} modes need at least {} points per axis, grid has {n}",
                    2 * m.max(1)
                )));
            }
        }
        Ok(Self::new_unchecked(shape, modes))
    }

    /// Band for VSPE synthesis, which only needs `2m - 1 ≤ n`.
    pub(crate) fn new_unchecked(shape: &[usize], modes: &[usize]) -> Self {
        let st = strides(shape);
        let slots = Self::slot_count(modes);
        let mut entries = Vec::with_capacity(slots);
        let mut k = vec![0usize; modes.len()];
        for s in 0..slots {
            let mut rem = s;
            for a in (0..modes.len()).rev() {
                let w = 2 * modes[a] - 1;
                k[a] = rem % w;
                rem /= w;
            }
            let flat: usize = (0..modes.len())
                .map(|a| index_of(k[a] as i64 - (modes[a] as i64 - 1), shape[a]) * st[a])
                .sum();
            entries.push((s, flat));
        }
        Self {
            modes: modes.to_vec(),
            entries,
            slots,
        }
    }

    /// Spectrum slot of the negated wavenumber.
    pub fn conjugate_slot(&self, s: usize) -> usize {
        self.slots - 1 - s
    }
}
