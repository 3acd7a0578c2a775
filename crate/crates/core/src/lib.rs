//! Simulation and security analysis for a three-state, one-decoy time-bin
//! BB84 link with gated or free-running InGaAs SPADs.

pub mod analytic;
pub mod calibrate;
pub mod counts;
pub mod finite_key;
pub mod link;
pub mod model;
pub mod optimize;
pub mod presets;
pub mod photonics;
pub mod postproc;
pub mod rng;
pub mod sweep;

pub use model::*;
