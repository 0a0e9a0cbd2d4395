use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CodanoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    #[default]
    Kolmogorov,
    RayleighBenard,
}

/// Named Rayleigh-Bénard parameter sets.
///
/// With unit temperature difference, `α·g = 1` and Prandtl number 1 on the
/// `2π × π` box, `ν = κ = sqrt(L_y³ / Ra)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbPreset {
    Ra12k,
    Ra20k,
}

impl RbPreset {
    pub fn rayleigh(self) -> f64 {
        match self {
            RbPreset::Ra12k => 12e3,
            RbPreset::Ra20k => 20e3,
        }
    }

    /// `(ν, κ)` for this preset.
    pub fn diffusivities(self) -> (f64, f64) {
        let d = (RB_LY.powi(3) / self.rayleigh()).sqrt();
        (d, d)
    }
}

pub const RB_LX: f64 = 2.0 * PI;
pub const RB_LY: f64 = PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub system: System,
    /// Grid points along x (a power of two); Rayleigh-Bénard uses `resolution / 2` cells in y.
    pub resolution: usize,
    pub snapshots: usize,
    /// Time between snapshots; `None` picks the system default.
    pub dt: Option<f64>,
    /// Simulated time before the first snapshot; `None` picks the system default.
    pub burn_in: Option<f64>,
    /// Kolmogorov Reynolds number.
    pub re: f64,
    /// Kolmogorov forcing `amplitude · sin(n y) x̂`.
    pub forcing_wavenumber: usize,
    pub forcing_amplitude: f64,
    /// RMS speed of the random Kolmogorov initial condition.
    pub initial_amplitude: f64,
    pub preset: Option<RbPreset>,
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
    pub alpha_g: f64,
    /// Amplitude of the seeded temperature noise added to the linear profile.
    pub temperature_noise: f64,
    /// CFL safety factor for the internal time step.
    pub cfl: f64,
    /// Speeds above this abort the run.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            system: System::Kolmogorov,
            resolution: 64,
            snapshots: 200,
            dt: None,
            burn_in: None,
            re: 500.0,
            forcing_wavenumber: 4,
            forcing_amplitude: 1.0,
            initial_amplitude: 1.0,
            preset: None,
            nu: None,
            kappa: None,
            alpha_g: 1.0,
            temperature_noise: 0.01,
            cfl: 0.5,
            max_speed: 1e3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn snapshot_interval(&self) -> f64 {
        self.dt.unwrap_or(match self.system {
            System::Kolmogorov => 0.5,
            System::RayleighBenard => 0.5,
        })
    }

    pub fn burn_in_time(&self) -> f64 {
        self.burn_in.unwrap_or(match self.system {
            System::Kolmogorov => 10.0,
            System::RayleighBenard => 0.0,
        })
    }

    /// Resolved `(ν, κ)` for Rayleigh-Bénard: explicit values override the preset.
    pub fn diffusivities(&self) -> (f64, f64) {
        let (pn, pk) = self.preset.unwrap_or(RbPreset::Ra12k).diffusivities();
        (self.nu.unwrap_or(pn), self.kappa.unwrap_or(pk))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CodanoError::Config(m));
        let n = self.resolution;
        if n < 8 || !n.is_power_of_two() {
            return bad(format!("resolution {n} must be a power of two, at least 8"));
        }
        if self.snapshots == 0 {
            return bad("snapshots must be positive".into());
        }
        if !(self.snapshot_interval() > 0.0) || !(self.burn_in_time() >= 0.0) {
            return bad("dt must be positive and burn_in non-negative".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl = {} must lie in (0, 1]", self.cfl));
        }
        match self.system {
            System::Kolmogorov => {
                if !(self.re > 0.0) {
                    return bad("re must be positive".into());
                }
                if self.forcing_wavenumber == 0 || 3 * self.forcing_wavenumber > n {
                    return bad(format!(
                        "forcing wavenumber {} is not resolved on {n} points",
                        self.forcing_wavenumber
                    ));
                }
            }
            System::RayleighBenard => {
                let (nu, kappa) = self.diffusivities();
                if !(nu > 0.0 && kappa > 0.0) {
                    return bad("nu and kappa must be positive".into());
                }
            }
        }
        Ok(())
    }
}
