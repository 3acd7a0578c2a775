//! Classical post-processing: sifting, parameter estimation, error-correction
//! accounting, privacy amplification and key confirmation.
//!
//! Keys are held as one byte per bit (`0` or `1`); hashing packs them into
//! 64-bit words internally.

mod toeplitz;

pub use toeplitz::{confirm, confirmation_tag, privacy_amplify, ConfirmOutcome, PaSeed};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finite_key::lambda_ec;
use crate::model::{Basis, ModelError, TallyCounts};
use crate::photonics::{DetectionRecord, EmittedFrame};
use crate::rng::SimRng;

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.05;
pub const DEFAULT_TAG_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("{stream} stream is not sorted by frame index at frame {frame}")]
    Unsorted { stream: &'static str, frame: u64 },
    #[error("{stream} stream repeats frame index {frame}")]
    Duplicate { stream: &'static str, frame: u64 },
    #[error("detection at frame {0} has no matching transmitted frame")]
    MissingFrame(u64),
    #[error("key lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no X-basis detections to estimate the phase error from; abort the session")]
    EmptyXSample,
    #[error("requested {requested} output bits from a {available}-bit key")]
    KeyTooShort { requested: usize, available: usize },
    #[error("seed has {actual} bits, expected {expected}")]
    SeedLength { expected: usize, actual: usize },
    #[error("sample position {0} is outside the key")]
    SampleOutOfRange(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Z-basis key bits of one party with the frames they came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedKey {
    pub bits: Vec<u8>,
    pub frame_indices: Vec<u64>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn validate(&self) -> Result<(), PostprocError> {
        if self.bits.len() != self.frame_indices.len() {
            return Err(PostprocError::LengthMismatch(self.bits.len(), self.frame_indices.len()));
        }
        check_sorted("key", self.frame_indices.iter().copied())
    }

    /// Removes the given (sorted, distinct) positions, returning what was removed.
    pub fn remove_positions(&mut self, positions: &[usize]) -> Result<SiftedKey, PostprocError> {
        let mut removed = SiftedKey::default();
        let mut keep = SiftedKey::default();
        let mut next = positions.iter().peekable();
        for (i, (&b, &f)) in self.bits.iter().zip(&self.frame_indices).enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
                removed.bits.push(b);
                removed.frame_indices.push(f);
            } else {
                keep.bits.push(b);
                keep.frame_indices.push(f);
            }
        }
        if let Some(&&p) = next.peek() {
            return Err(PostprocError::SampleOutOfRange(p));
        }
        *self = keep;
        Ok(removed)
    }
}

fn check_sorted(stream: &'static str, frames: impl Iterator<Item = u64>) -> Result<(), PostprocError> {
    let mut prev: Option<u64> = None;
    for f in frames {
        match prev {
            Some(p) if f == p => return Err(PostprocError::Duplicate { stream, frame: f }),
            Some(p) if f < p => return Err(PostprocError::Unsorted { stream, frame: f }),
            _ => {}
        }
        prev = Some(f);
    }
    Ok(())
}

/// Matches Bob's detections with Alice's frames (both sorted by index).
///
/// Alice may pass every frame or only the detected ones. Z/Z matches become
/// key bits, X/X matches only feed the tallies, mismatches are dropped.
pub fn sift(
    alice_frames: &[EmittedFrame],
    bob_detections: &[DetectionRecord],
) -> Result<(SiftedKey, SiftedKey, TallyCounts), PostprocError> {
    check_sorted("transmitter", alice_frames.iter().map(|f| f.frame_index))?;
    check_sorted("detection", bob_detections.iter().map(|d| d.frame_index))?;
    let mut key_a = SiftedKey::default();
    let mut key_b = SiftedKey::default();
    let mut tallies = TallyCounts::default();
    let mut frames = alice_frames.iter().peekable();
    for d in bob_detections {
        while frames.peek().is_some_and(|f| f.frame_index < d.frame_index) {
            frames.next();
        }
        let f = match frames.peek() {
            Some(f) if f.frame_index == d.frame_index => *f,
            _ => return Err(PostprocError::MissingFrame(d.frame_index)),
        };
        if f.alice_basis != d.bob_basis {
            continue;
        }
        match d.bob_basis {
            Basis::Z => {
                let a = f.alice_bit.expect("Z frames carry a bit");
                key_a.bits.push(a);
                key_a.frame_indices.push(f.frame_index);
                key_b.bits.push(d.measured_bit);
                key_b.frame_indices.push(f.frame_index);
                tallies.record(Basis::Z, f.intensity, a != d.measured_bit);
            }
            Basis::X => tallies.record(Basis::X, f.intensity, d.measured_bit == 1),
        }
    }
    Ok((key_a, key_b, tallies))
}

/// Random subset of `fraction * n` key positions, sorted.
pub fn choose_sample(n: usize, fraction: f64, rng: &mut SimRng) -> Vec<usize> {
    let size = ((n as f64 * fraction.clamp(0.0, 1.0)).round() as usize).min(n);
    let mut picked = index::sample(rng, n, size).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub qber_z: f64,
    pub qber_x: f64,
}

/// QBER_Z from a disclosed sample of (Alice, Bob) bit pairs and QBER_X from
/// the X tallies.
pub fn estimate_parameters(tallies: &TallyCounts, disclosed: &[(u8, u8)]) -> Result<Estimates, PostprocError> {
    let qber_x = tallies.qber_x().ok_or(PostprocError::EmptyXSample)?;
    let qber_z = if disclosed.is_empty() {
        0.0
    } else {
        disclosed.iter().filter(|(a, b)| a != b).count() as f64 / disclosed.len() as f64
    };
    Ok(Estimates { qber_z, qber_x })
}

/// Simulation-grade reconciliation: Bob adopts Alice's key and the
/// corresponding leakage `f_ec * n * H2(q)` is charged.
pub fn reconcile(
    key_a: &[u8],
    key_b: &[u8],
    qber_estimate: f64,
    f_ec: f64,
) -> Result<(Vec<u8>, Vec<u8>, f64), PostprocError> {
    if key_a.len() != key_b.len() {
        return Err(PostprocError::LengthMismatch(key_a.len(), key_b.len()));
    }
    let lambda = lambda_ec(key_a.len() as u64, qber_estimate, f_ec)?;
    Ok((key_a.to_vec(), key_a.to_vec(), lambda))
}
