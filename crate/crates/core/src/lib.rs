//! Sticky-particle Cucker-Smale simulation and entropy-solution tools for
//! the nonlocal Aw-Rascle-Zhang traffic model.

pub mod cumulative;
pub mod discretize;
pub mod dynamics;
pub mod error;
pub mod interaction;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod quadrature;

pub use error::{Error, Result};
