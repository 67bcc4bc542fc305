//! Pseudospectral solver for ground states and ring-shaped multi-bump
//! solutions of `(-Delta)^s u + u = K(|x|) u^p` on periodic boxes.

pub mod cli;
pub mod config;
pub mod configuration;
pub mod energy;
pub mod error;
pub mod grid;
pub mod ground_state;
pub mod interp;
pub mod io;
pub mod krylov;
pub mod pipeline;
pub mod quad;
pub mod reduction;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, GridSpec};
