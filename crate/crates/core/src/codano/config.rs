use serde::{Deserialize, Serialize};

use crate::error::{CodanoError, Result};
use crate::spectral::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VspeKind {
    /// Learnable Fourier coefficients synthesized on the mesh (uniform grids only).
    #[default]
    Fourier,
    /// MLP on sinusoidal features of position.
    CoordMlp,
}

/// How functions enter and leave the latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IoMode {
    /// Graph-kernel encoder and decoder between arbitrary meshes and the latent grid.
    #[default]
    Gno,
    /// The input uniform grid is the latent grid; no encoder/decoder.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variables: Vec<String>,
    pub vspe: VspeKind,
    /// Embedding dimension `d_en`.
    pub d_en: usize,
    /// Retained Fourier modes per axis for the Fourier VSPE.
    pub vspe_modes: usize,
    /// Frequency bands of the coordinate-MLP VSPE.
    pub vspe_bands: usize,
    pub vspe_hidden: usize,
    /// Latent width `D` per variable.
    pub width: usize,
    /// Token width `d'`; `None` means `D`.
    pub token_width: Option<usize>,
    pub heads: usize,
    pub d_k: usize,
    /// Value width; must equal the token width.
    pub d_v: usize,
    pub modes: Vec<usize>,
    pub encoder_layers: usize,
    pub reconstructor_layers: usize,
    pub predictor_layers: usize,
    pub latent_grid: Vec<usize>,
    /// GNO radius; `None` means 2.5 latent-grid spacings.
    pub gno_radius: Option<f64>,
    pub gno_hidden: Vec<usize>,
    /// Softmax temperature; `None` means `sqrt(d_k)·|D|`.
    pub tau: Option<f64>,
    pub norm_eps: f64,
    pub activation: Activation,
    pub bypass: bool,
    pub io: IoMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variables: vec![],
            vspe: VspeKind::Fourier,
            d_en: 8,
            vspe_modes: 4,
            vspe_bands: 4,
            vspe_hidden: 16,
            width: 32,
            token_width: None,
            heads: 4,
            d_k: 32,
            d_v: 32,
            modes: vec![16, 16],
            encoder_layers: 3,
            reconstructor_layers: 3,
            predictor_layers: 1,
            latent_grid: vec![64, 64],
            gno_radius: None,
            gno_hidden: vec![32, 32],
            tau: None,
            norm_eps: 1e-5,
            activation: Activation::Gelu,
            bypass: true,
            io: IoMode::Gno,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn token_width(&self) -> usize {
        self.token_width.unwrap_or(self.width)
    }

    pub fn tokens_per_variable(&self) -> usize {
        self.width / self.token_width()
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CodanoError::Config(m));
        let dp = self.token_width();
        if self.width == 0 || dp == 0 || !self.width.is_multiple_of(dp) {
            return bad(format!("token width {dp} must divide latent width {}", self.width));
        }
        if self.d_v != dp {
            return bad(format!("d_v ({}) must equal the token width ({dp})", self.d_v));
        }
        if self.heads == 0 || self.d_k == 0 {
            return bad("heads and d_k must be positive".into());
        }
        if self.modes.is_empty() || self.modes.contains(&0) {
            return bad("modes must be positive, one per axis".into());
        }
        if self.io == IoMode::Gno && self.latent_grid.len() != self.modes.len() {
            return bad("latent_grid needs one resolution per axis".into());
        }
        if self.io == IoMode::Gno && self.latent_grid.iter().zip(&self.modes).any(|(&n, &m)| n < 2 * m) {
            return bad(format!(
                "latent grid {:?} too coarse for modes {:?}",
                self.latent_grid, self.modes
            ));
        }
        if self.vspe == VspeKind::Fourier && self.d_en > 0 && self.vspe_modes == 0 {
            return bad("vspe_modes must be positive".into());
        }
        if let Some(r) = self.gno_radius {
            if !(r > 0.0) {
                return bad(format!("gno_radius must be positive, got {r}"));
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return bad(format!("tau must be positive, got {t}"));
            }
        }
        if !(self.norm_eps >= 0.0) {
            return bad("norm_eps must be nonnegative".into());
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.variables {
            if !seen.insert(v) {
                return Err(CodanoError::VariableExists(v.clone()));
            }
        }
        Ok(())
    }
}
