//! Simulation and verification toolkit for spatially extended systems of
//! interacting diffusions with disorder and singular spatial weights.

pub mod config;
pub mod experiment;
pub mod lattice;
pub mod meanfield;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod simulate;
pub mod yosida;
