//! Signed distance fields as softmax-normalized radial basis interpolation
//! of per-grid-point polynomials, with no neural network anywhere.
//!
//! A field is a dense parameter grid ([`ParamGrid`]): keys on a regular
//! lattice of `[-1,1]^3`, per-key Gaussian scales and per-key polynomial
//! value functions, optionally doubled with an offset bank whose keys are
//! pulled toward the surface. Evaluation blends every key's polynomial with
//! softmax weights, so a query sees the whole grid, not just its cell.
//!
//! The crate covers the full pipeline:
//!
//! * [`eval`] — streaming forward kernels with `Theta(J)` transient memory
//!   plus the `Theta(I*J)` naive oracle they are tested against.
//! * [`backward`] — manual reverse-mode gradients for every parameter.
//! * [`train`] — AdamW fitting loop, point sampling, mean-shift offset
//!   initialization.
//! * [`geom`] — SDF oracles (analytic shapes and triangle meshes), surface
//!   sampling, marching cubes, Chamfer/AE/IOU metrics, normal estimation.
//! * [`compose`] — cosine-series frequency decomposition and grid splicing.
//! * [`efg`] — the binary parameter-file format.

pub mod alloc_stats;
pub mod backward;
pub mod compose;
pub mod efg;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grid;
pub mod poly;
pub mod test_support;
pub mod train;
pub mod vec3;

pub use backward::{backward, backward_into, mse_loss, GradBuffer};
pub use error::{Error, Result};
pub use eval::{forward_naive, forward_streaming, forward_trilinear, query_gradient, EvalBatch};
pub use grid::{param_count, GridConfig, InitSpec, ParamGrid, QueryPoint, Variant};
pub use poly::{Degree, PolyValue};
pub use vec3::Vec3;
