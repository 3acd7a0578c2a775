use rand::Rng;
use serde::{Deserialize, Serialize};

use super::source::EmittedFrame;
use crate::model::{Basis, ChannelModel};
use crate::rng::SimRng;

/// State a photon is in while it travels to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhotonState {
    /// Time-bin state with the given bin.
    Z(u8),
    /// The single X state the transmitter prepares.
    XPlus,
    /// Orthogonal X state; only an eavesdropper re-prepares it.
    XMinus,
}

impl PhotonState {
    pub fn prepared(frame: &EmittedFrame) -> Self {
        match (frame.alice_basis, frame.alice_bit) {
            (Basis::Z, Some(bit)) => PhotonState::Z(bit),
            _ => PhotonState::XPlus,
        }
    }
}

/// Photons landing in each detector slot within one frame.
///
/// `z[b]` counts photons in time bin `b` of the Z arm; `x[0]` counts the
/// constructive DLI slot and `x[1]` the destructive one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Arrivals {
    pub z: [u32; 2],
    pub x: [u32; 2],
}

impl Arrivals {
    pub fn z_total(&self) -> u32 {
        self.z[0] + self.z[1]
    }

    pub fn x_total(&self) -> u32 {
        self.x[0] + self.x[1]
    }
}

/// Active attack on the quantum channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adversary {
    /// Measure a random basis and re-prepare the outcome with the same photon
    /// number, on the given fraction of non-empty frames.
    InterceptResend { fraction: f64 },
}

impl Adversary {
    /// Three draws per frame so the stream stays aligned across frames.
    pub fn apply(&self, frame: &EmittedFrame, rng: &mut SimRng) -> PhotonState {
        let Adversary::InterceptResend { fraction } = *self;
        let u_hit: f64 = rng.random();
        let u_basis: f64 = rng.random();
        let u_outcome: f64 = rng.random();
        let sent = PhotonState::prepared(frame);
        if frame.photon_count == 0 || u_hit >= fraction {
            return sent;
        }
        let coin = u8::from(u_outcome < 0.5);
        if u_basis < 0.5 {
            match sent {
                PhotonState::Z(b) => PhotonState::Z(b),
                _ => PhotonState::Z(coin),
            }
        } else {
            match sent {
                PhotonState::XPlus => PhotonState::XPlus,
                _ if coin == 1 => PhotonState::XPlus,
                _ => PhotonState::XMinus,
            }
        }
    }
}

/// Sends `photons` photons in `state` through the channel and Bob's passive
/// basis splitter. Three draws per photon: arm, survival and output slot.
pub fn propagate(
    state: PhotonState,
    photons: u32,
    channel: &ChannelModel,
    bob_p_z: f64,
    rng: &mut SimRng,
) -> Arrivals {
    let mut out = Arrivals::default();
    if photons == 0 {
        return out;
    }
    let t_z = channel.transmittance(Basis::Z);
    let t_x = channel.transmittance(Basis::X);
    let p_correct_x = (1.0 + channel.visibility) / 2.0;
    for _ in 0..photons {
        let u_arm: f64 = rng.random();
        let u_survive: f64 = rng.random();
        let u_slot: f64 = rng.random();
        if u_arm < bob_p_z {
            if u_survive < t_z {
                let bin = match state {
                    PhotonState::Z(b) => b,
                    _ => u8::from(u_slot < 0.5),
                };
                out.z[bin as usize] += 1;
            }
        } else if u_survive < t_x {
            let destructive = match state {
                PhotonState::XPlus => u_slot >= p_correct_x,
                PhotonState::XMinus => u_slot < p_correct_x,
                PhotonState::Z(_) => u_slot < 0.5,
            };
            out.x[usize::from(destructive)] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Intensity;
    use crate::rng::{stream_rng, Stream};

    fn lossless(vis: f64) -> ChannelModel {
        ChannelModel {
            channel_loss_db: 0.0,
            receiver_loss_z_db: 0.0,
            receiver_loss_x_db: 0.0,
            visibility: vis,
        }
    }

    #[test]
    fn lossless_perfect_channel_delivers_every_photon() {
        let mut rng = stream_rng(1, Stream::Photons);
        for _ in 0..1000 {
            let a = propagate(PhotonState::XPlus, 1, &lossless(1.0), 0.5, &mut rng);
            assert_eq!(a.z_total() + a.x_total(), 1);
            assert_eq!(a.x[1], 0);
            let a = propagate(PhotonState::Z(1), 1, &lossless(1.0), 0.5, &mut rng);
            assert_eq!(a.z[0] + a.x_total() + a.z[1], 1);
            assert_eq!(a.z[0], 0);
        }
    }

    #[test]
    fn z_arm_survival_at_21_db() {
        let ch = ChannelModel {
            channel_loss_db: 20.0,
            receiver_loss_z_db: 1.0,
            ..ChannelModel::default()
        };
        assert!((ch.transmittance(Basis::Z) - 10f64.powf(-2.1)).abs() < 1e-15);
    }

    #[test]
    fn survivor_fraction_at_10_db() {
        let ch = ChannelModel {
            channel_loss_db: 10.0,
            receiver_loss_z_db: 0.0,
            receiver_loss_x_db: 0.0,
            visibility: 1.0,
        };
        let mut rng = stream_rng(7, Stream::Photons);
        let n = 1_000_000u32;
        let mut survived = 0u64;
        for _ in 0..n / 100 {
            let a = propagate(PhotonState::Z(0), 100, &ch, 0.5, &mut rng);
            survived += (a.z_total() + a.x_total()) as u64;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((survived as f64 - 0.1 * n as f64).abs() < 4.0 * sigma);
    }

    #[test]
    fn full_intercept_resend_randomizes_mismatched_basis() {
        let eve = Adversary::InterceptResend { fraction: 1.0 };
        let mut rng = stream_rng(3, Stream::Adversary);
        let frame = EmittedFrame {
            frame_index: 0,
            alice_basis: Basis::Z,
            alice_bit: Some(0),
            intensity: Intensity::Mu1,
            photon_count: 1,
        };
        let n = 100_000;
        let resent_x = (0..n)
            .filter(|_| eve.apply(&frame, &mut rng) != PhotonState::Z(0))
            .count();
        // Z results are always right, X measurements re-prepare an X state.
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((resent_x as f64 - n as f64 / 2.0).abs() < 4.0 * sigma);
        let vacuum = EmittedFrame {
            photon_count: 0,
            ..frame
        };
        assert_eq!(eve.apply(&vacuum, &mut rng), PhotonState::Z(0));
    }
}
