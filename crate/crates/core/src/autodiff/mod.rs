//! Minimal tensor autodiff: a recorded tape of fused operations with
//! hand-written backward rules.

mod conv;
mod elementwise;
mod graph;
mod gru;
pub(crate) mod kernels;
mod linalg;
mod norm;
pub(crate) mod shape;

pub use conv::{Conv2dOpts, Padding};
pub use elementwise::prelu_scalar;
pub use graph::{BackwardCtx, BackwardFn, Gradients, Graph, ParamId, ParamStore, Var};
pub use gru::GruVars;
