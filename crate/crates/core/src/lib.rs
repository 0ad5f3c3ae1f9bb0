//! Asynchronous primal-dual splitting with bounded communication delays.

pub mod block;
pub mod delay;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod functions;
pub mod problem;
pub mod solvers;
pub mod tuning;

pub use error::{Error, Result, Side};
