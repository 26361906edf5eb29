//! Masked layered networks: architecture, weights, mask and density
//! bookkeeping shared by every pruning method.

mod arch;
pub mod io;
mod mask;
mod net;

pub use arch::{min_density, target_count, Architecture, LayerKind};
pub use mask::Mask;
pub use net::{build_network, density, InitSpec, Reinit, SparseNet};
