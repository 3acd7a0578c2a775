//! Seeded Monte Carlo model of the optical train: weak coherent source,
//! lossy fiber, passive basis choice, delay-line interferometer and the two
//! single-photon detectors.
//!
//! Time advances in frame slots; every detection carries ground-truth tags
//! (cause and emitted photon number) so the security bounds can be checked
//! against what actually happened.

mod channel;
mod detector;
mod link;
mod source;

pub use channel::{propagate, Adversary, Arrivals, PhotonState};
pub use detector::{detect, Click, Detector, DetectorState, Origin, TrapDeposit};
pub use link::{
    run_link, write_event_stream, DetectionRecord, GroundTruth, LinkConfig, LinkRun, StopRule,
};
pub use source::{generate_frames, EmittedFrame, FrameSource};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("internal detector state is inconsistent: {0}")]
    InconsistentState(String),
    #[error("stop target not reached after {frames} frames ({n_z} sifted Z detections)")]
    Timeout { frames: u64, n_z: u64 },
    #[error("{0}")]
    Config(String),
}
