mod config;
mod functional;
mod layer;
mod model;
mod vspe;

pub use config::{IoMode, ModelConfig, VspeKind};
pub use functional::{attention, codano_layer_forward, lift, model_forward, normalize, vspe_concat, TokenSet};
pub use layer::{CodanoLayer, LatentContext};
pub use model::{component_rng, extend_variables, Batch, Codano, ForwardPlan, Head};
pub use vspe::{Vspe, VspeBasis};
