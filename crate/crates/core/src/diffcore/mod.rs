//! Minimal differentiable core: dense matrices, a reverse-mode tape,
//! feed-forward networks and Adam.

pub mod adam;
pub mod kernels;
pub mod matrix;
pub mod network;
pub mod tape;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use network::{gradient, Architecture, Dropout, Head, NetworkParams};
pub use tape::{Gradients, Tape, Var};
