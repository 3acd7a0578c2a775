use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Basis, Intensity, ProtocolParams};
use crate::rng::{stream_rng, SimRng, Stream};

/// One pulse frame as prepared by the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedFrame {
    pub frame_index: u64,
    pub alice_basis: Basis,
    /// Key bit (time bin); `None` for the single X-basis state.
    pub alice_bit: Option<u8>,
    pub intensity: Intensity,
    /// Ground truth, Poisson-sampled.
    pub photon_count: u32,
}

/// Deterministic, endless stream of frames for one seed.
pub struct FrameSource {
    rng: SimRng,
    next_index: u64,
    p_z: f64,
    // cumulative intensity choice
    p_mu_cdf: [f64; 2],
    photon_cdf: [Vec<f64>; 3],
}

impl FrameSource {
    pub fn new(params: &ProtocolParams, seed: u64) -> Self {
        let cdf = |mu: f64| {
            let mut out = Vec::new();
            let mut term = (-mu).exp();
            let mut acc = 0.0;
            let mut n = 0u32;
            loop {
                acc += term;
                out.push(acc);
                n += 1;
                term *= mu / n as f64;
                if acc >= 1.0 - 1e-17 || (term < 1e-300 && n as f64 > mu) || n > 4096 {
                    break;
                }
            }
            out
        };
        Self {
            rng: stream_rng(seed, Stream::Frames),
            next_index: 0,
            p_z: params.p_z_alice,
            p_mu_cdf: [params.p_mu[0], params.p_mu[0] + params.p_mu[1]],
            photon_cdf: [cdf(params.mu1), cdf(params.mu2), cdf(params.mu3)],
        }
    }
}

impl Iterator for FrameSource {
    type Item = EmittedFrame;

    fn next(&mut self) -> Option<EmittedFrame> {
        // four draws per frame regardless of outcome
        let u_basis: f64 = self.rng.random();
        let u_bit: f64 = self.rng.random();
        let u_mu: f64 = self.rng.random();
        let u_n: f64 = self.rng.random();

        let alice_basis = if u_basis < self.p_z { Basis::Z } else { Basis::X };
        let alice_bit = (alice_basis == Basis::Z).then_some(u8::from(u_bit >= 0.5));
        let intensity = if u_mu < self.p_mu_cdf[0] {
            Intensity::Mu1
        } else if u_mu < self.p_mu_cdf[1] {
            Intensity::Mu2
        } else {
            Intensity::Mu3
        };
        let cdf = &self.photon_cdf[intensity.index()];
        let photon_count = cdf.partition_point(|&c| c <= u_n).min(cdf.len() - 1) as u32;

        let frame = EmittedFrame {
            frame_index: self.next_index,
            alice_basis,
            alice_bit,
            intensity,
            photon_count,
        };
        self.next_index += 1;
        Some(frame)
    }
}

/// First `count` frames of the stream for `seed`.
pub fn generate_frames(params: &ProtocolParams, count: u64, seed: u64) -> impl Iterator<Item = EmittedFrame> {
    FrameSource::new(params, seed).take(count as usize)
}
