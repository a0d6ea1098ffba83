//! Particle-measure toolkit for mean-field optimal control.
//!
//! Measures are finite weighted point clouds. On top of exact W2 transport the crate
//! provides a continuity-equation solver, Moreau-Yosida envelopes of tabulated value
//! functions, Bellman margin checks, an exhaustive value oracle and a sample-and-hold
//! proximal aiming feedback with upper and lower bound certificates. [`scenario`]
//! drives all of it from TOML configs and writes CSV artifacts.

pub mod aiming;
pub mod bellman;
pub mod benchmark;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod io;
pub mod measure;
pub mod models;
pub mod nonsmooth;
pub mod scenario;
pub mod tol;
pub mod transport;
pub mod value;

pub use error::{Error, Result};
