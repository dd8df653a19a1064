//! Differentiable screened-Poisson field layers on graphs, with object
//! multigrid coarsening, metriplectic field dynamics, Noether-style
//! readouts, causal affine scans and a maze benchmark.

pub mod autodiff;
pub mod cg;
pub mod dynamics;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod layer;
pub mod maze;
pub mod multigrid;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod readout;
pub mod scan;
pub mod stencil;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use cg::{CgConfig, CgError, SolveRecord};
pub use graph::{GraphError, GraphTopology, ScreenedSystem};
pub use params::ModelParams;
pub use tensor::{Tensor, TensorError};
