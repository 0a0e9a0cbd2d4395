//! Data generators for Kolmogorov flow and Rayleigh-Bénard convection, and the dataset file format.

mod config;
pub mod container;
mod dataset;
mod kolmogorov;
mod rayleigh_benard;

pub use config::{RbPreset, SimConfig, System, RB_LX, RB_LY};
pub use dataset::{irregularize, DatasetContainer, DatasetHeader, MeshSpec};
pub use kolmogorov::simulate_kolmogorov;
pub use rayleigh_benard::{rb_mesh, simulate_rayleigh_benard};

use crate::error::Result;

/// Run the generator selected by `cfg.system`.
pub fn simulate(cfg: &SimConfig) -> Result<DatasetContainer> {
    match cfg.system {
        System::Kolmogorov => simulate_kolmogorov(cfg),
        System::RayleighBenard => simulate_rayleigh_benard(cfg),
    }
}
