//! Stability analysis of linear integral delay equations
//!
//! ```text
//! x(t) = ∫_{-h}^0 F(θ) x(t + θ) dθ
//! ```
//!
//! via the fundamental matrix, the delay Lyapunov matrix and the
//! positive-definiteness test on the block matrices `K_r`.

pub mod config;
pub mod criterion;
pub mod error;
pub mod functional;
pub mod fundamental;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod lyapunov;
mod march;
mod quad;
pub mod par;
pub mod scan;
pub mod simulator;

pub use error::{Error, Result};
pub use grid::{Cubic, GridFunction};
pub use kernel::{KernelConstants, KernelSpec, Piece};
pub use par::Execution;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Whether the crate was built with the `parallel` feature.
pub const PARALLEL: bool = cfg!(feature = "parallel");
