//! Minimal dense-network toolkit: matrices, parameters, layers with explicit
//! backward passes, and the optimizer.

mod adam;
pub(crate) mod layers;
mod mat;
mod param;
pub(crate) mod unfold;

pub use adam::{Adam, AdamConfig};
pub use mat::Mat;
pub(crate) use mat::{gemm, View};
pub use param::Param;
