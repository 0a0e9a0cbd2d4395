//! Spectral diagnostics of 2D velocity fields.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{CodanoError, Result};
use crate::field::fft::{fft_nd, wavenumber};
use crate::field::GridFunction;

/// Radially binned kinetic energy, one bin per integer wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySpectrum {
    /// `energy[k]` is the energy of modes with `round(|k|) = k`.
    pub energy: Vec<f64>,
    /// Number of Fourier modes in each bin.
    pub counts: Vec<usize>,
    /// `½ · mean(u_x² + u_y²)` computed in physical space.
    pub total: f64,
}

impl EnergySpectrum {
    /// Energy per mode in each bin (zero for empty bins).
    pub fn shell_mean(&self) -> Vec<f64> {
        self.energy
            .iter()
            .zip(&self.counts)
            .map(|(e, &c)| if c > 0 { e / c as f64 } else { 0.0 })
            .collect()
    }

    pub fn spectral_total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// Fraction of the spectral energy in bin `k`.
    pub fn fraction_at(&self, k: usize) -> f64 {
        let t = self.spectral_total();
        if t > 0.0 {
            self.energy.get(k).copied().unwrap_or(0.0) / t
        } else {
            0.0
        }
    }

    pub fn peak(&self) -> usize {
        self.energy
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (k, &e)| if e > b.1 { (k, e) } else { b })
            .0
    }
}

struct Velocity {
    shape: [usize; 2],
    scale: [f64; 2],
    u: Vec<Complex64>,
    v: Vec<Complex64>,
    physical: (Vec<f64>, Vec<f64>),
}

fn velocity(f: &GridFunction) -> Result<Velocity> {
    let names = f
        .variable_names()
        .ok_or_else(|| CodanoError::DatasetSchema("velocity variables need names".into()))?;
    let find = |n: &str| {
        names
            .iter()
            .position(|v| v == n)
            .ok_or_else(|| CodanoError::DatasetSchema(format!("no `{n}` among {names:?}")))
    };
    let (iu, iv) = (find("u_x")?, find("u_y")?);
    let grid = f.mesh().require_grid()?;
    if grid.shape.len() != 2 || !grid.is_periodic() {
        return Err(CodanoError::UnsupportedMesh(
            "spectral diagnostics need a periodic 2D grid".into(),
        ));
    }
    let shape = [grid.shape[0], grid.shape[1]];
    let ext = &f.mesh().domain().extent;
    let scale = [2.0 * std::f64::consts::PI / ext[0], 2.0 * std::f64::consts::PI / ext[1]];
    let (pu, pv) = (f.channel(iu), f.channel(iv));
    let spec = |x: &[f64]| {
        let mut z: Vec<Complex64> = x.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        fft_nd(&mut z, &shape, false);
        z
    };
    Ok(Velocity {
        shape,
        scale,
        u: spec(&pu),
        v: spec(&pv),
        physical: (pu, pv),
    })
}

/// Radially binned energy spectrum of the `u_x`, `u_y` channels of `f`.
///
/// Wavenumbers are physical (`2π/L` times the mode index), so the bins sum to
/// `½ · mean |u|²` by Parseval's identity.
pub fn energy_spectrum(f: &GridFunction) -> Result<EnergySpectrum> {
    let vel = velocity(f)?;
    let [n0, n1] = vel.shape;
    let norm = ((n0 * n1) as f64).powi(2);
    let mut energy = Vec::new();
    let mut counts = Vec::new();
    for p in 0..n0 * n1 {
        let kx = wavenumber(p / n1, n0) as f64 * vel.scale[0];
        let ky = wavenumber(p % n1, n1) as f64 * vel.scale[1];
        let bin = (kx * kx + ky * ky).sqrt().round() as usize;
        if bin >= energy.len() {
            energy.resize(bin + 1, 0.0);
            counts.resize(bin + 1, 0);
        }
        energy[bin] += 0.5 * (vel.u[p].norm_sqr() + vel.v[p].norm_sqr()) / norm;
        counts[bin] += 1;
    }
    let (pu, pv) = &vel.physical;
    let total = 0.5 * pu.iter().zip(pv).map(|(a, b)| a * a + b * b).sum::<f64>() / pu.len() as f64;
    Ok(EnergySpectrum { energy, counts, total })
}

/// Largest pointwise `|∂_x u_x + ∂_y u_y|`, with derivatives taken spectrally.
pub fn spectral_divergence(f: &GridFunction) -> Result<f64> {
    let vel = velocity(f)?;
    let [n0, n1] = vel.shape;
    let i = Complex64::i();
    let mut div: Vec<Complex64> = (0..n0 * n1)
        .map(|p| {
            let kx = wavenumber(p / n1, n0) as f64 * vel.scale[0];
            let ky = wavenumber(p % n1, n1) as f64 * vel.scale[1];
            // Nyquist derivatives are not real-valued; drop them
            let kx = if n0 % 2 == 0 && p / n1 == n0 / 2 { 0.0 } else { kx };
            let ky = if n1 % 2 == 0 && p % n1 == n1 / 2 { 0.0 } else { ky };
            i * (vel.u[p] * kx + vel.v[p] * ky)
        })
        .collect();
    fft_nd(&mut div, &vel.shape, true);
    let s = 1.0 / (n0 * n1) as f64;
    Ok(div.iter().map(|z| z.re.abs() * s).fold(0.0, f64::max))
}
