//! Graph-kernel integral operators between meshes.

mod kernel;
mod neighbors;

pub use kernel::{ball_measure, gno_apply, gno_set_apply, GnoLayer, KernelNet};
pub use neighbors::{build_neighbors, NeighborIndex, SpatialBins};
