//! Discretized functions, quadrature and Fourier utilities.

pub mod fft;
mod function;
mod mesh;
mod resample;

pub use fft::{fft_forward, fft_inverse, restrict_truncate, ModeBand, Spectrum};
pub use function::{inner_product, l2_norm, GridFunction};
pub(crate) use mesh::dist;
pub use mesh::{AxisKind, DomainBox, Mesh, MeshKind, UniformGrid};
pub use resample::resample;
