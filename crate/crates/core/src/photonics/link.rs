use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::channel::{propagate, Adversary, PhotonState};
use super::detector::{Detector, Origin};
use super::source::{EmittedFrame, FrameSource};
use super::SimError;
use crate::model::{Basis, BasisCounts, ChannelModel, DetectorModel, ProtocolParams, TallyCounts};
use crate::rng::{stream_rng, Stream};

/// One click that survived to Bob's record (after double-click squashing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub bob_basis: Basis,
    pub measured_bit: u8,
    pub origin_tag: Origin,
    /// Photon number of the frame for signal clicks, 0 otherwise.
    pub origin_photon_number: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run exactly this many frames.
    Frames(u64),
    /// Run until this many basis-matched Z detections are recorded.
    SiftedZ(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub params: ProtocolParams,
    pub channel: ChannelModel,
    pub detector_z: DetectorModel,
    pub detector_x: DetectorModel,
    pub stop: StopRule,
    /// Upper bound on frames for `StopRule::SiftedZ`.
    pub max_frames: u64,
    pub seed: u64,
    pub adversary: Option<Adversary>,
    /// Keep every (frame, detection) pair, needed for sifting.
    pub keep_events: bool,
}

impl LinkConfig {
    pub fn new(
        params: ProtocolParams,
        channel: ChannelModel,
        detector_z: DetectorModel,
        detector_x: DetectorModel,
        stop: StopRule,
        seed: u64,
    ) -> Self {
        Self {
            params,
            channel,
            detector_z,
            detector_x,
            stop,
            max_frames: 100_000_000_000,
            seed,
            adversary: None,
            keep_events: false,
        }
    }
}

/// Counts the simulator knows and the protocol does not; used as oracles.
///
/// Photon-number classes are those of the emitted frame, which is what the
/// decoy bounds estimate. Index 3 collects every frame with three or more.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub by_origin: [u64; 3],
    pub z_by_photons: [u64; 4],
    pub x_by_photons: [BasisCounts; 4],
    pub raw_clicks_z: u64,
    pub raw_clicks_x: u64,
    pub double_clicks: u64,
}

impl GroundTruth {
    pub fn z_vacuum(&self) -> u64 {
        self.z_by_photons[0]
    }

    pub fn z_single(&self) -> u64 {
        self.z_by_photons[1]
    }

    /// Error ratio of basis-matched X detections from single-photon frames.
    pub fn x_single_error_ratio(&self) -> Option<f64> {
        let c = self.x_by_photons[1];
        (c.detections > 0).then(|| c.errors as f64 / c.detections as f64)
    }
}

#[derive(Debug, Clone)]
pub struct LinkRun {
    pub tallies: TallyCounts,
    pub events: Vec<(EmittedFrame, DetectionRecord)>,
    pub frames: u64,
    pub elapsed_protocol_time: f64,
    pub ground_truth: GroundTruth,
}

/// Runs source, channel and both detectors frame by frame.
///
/// Every stage draws a fixed number of variates per frame (per photon for the
/// channel) from its own stream, so two runs differing only in loss see the
/// same random numbers and detections can only disappear as loss grows.
pub fn run_link(cfg: &LinkConfig) -> Result<LinkRun, SimError> {
    cfg.params.validate()?;
    cfg.channel.validate()?;
    cfg.detector_z.validate()?;
    cfg.detector_x.validate()?;
    let frame_budget = match cfg.stop {
        StopRule::Frames(0) => return Err(SimError::Config("frame count must be at least 1".into())),
        StopRule::Frames(n) => n,
        StopRule::SiftedZ(0) => return Err(SimError::Config("sifted Z target must be at least 1".into())),
        StopRule::SiftedZ(_) => cfg.max_frames,
    };

    let rep = cfg.params.rep_rate;
    let mut source = FrameSource::new(&cfg.params, cfg.seed);
    let mut photon_rng = stream_rng(cfg.seed, Stream::Photons);
    let mut eve_rng = stream_rng(cfg.seed, Stream::Adversary);
    let mut squash_rng = stream_rng(cfg.seed, Stream::Squash);
    let mut rng_z = stream_rng(cfg.seed, Stream::DetectorZ);
    let mut rng_x = stream_rng(cfg.seed, Stream::DetectorX);
    let mut det_z = Detector::new(&cfg.detector_z, rep, Basis::Z);
    let mut det_x = Detector::new(&cfg.detector_x, rep, Basis::X);

    let mut tallies = TallyCounts::default();
    let mut truth = GroundTruth::default();
    let mut events = Vec::new();
    let mut frames = 0u64;

    while frames < frame_budget {
        let frame = source.next().expect("frame source is endless");
        frames += 1;
        let state = match &cfg.adversary {
            Some(eve) => eve.apply(&frame, &mut eve_rng),
            None => PhotonState::prepared(&frame),
        };
        let arrivals = propagate(state, frame.photon_count, &cfg.channel, cfg.params.p_z_bob, &mut photon_rng);
        let slot = frame.frame_index;
        let click_z = det_z.step(slot, arrivals.z, &mut rng_z)?;
        let click_x = det_x.step(slot, arrivals.x, &mut rng_x)?;
        let u_squash: f64 = squash_rng.random();

        truth.raw_clicks_z += u64::from(click_z.is_some());
        truth.raw_clicks_x += u64::from(click_x.is_some());
        let (bob_basis, click) = match (click_z, click_x) {
            (None, None) => continue,
            (Some(c), None) => (Basis::Z, c),
            (None, Some(c)) => (Basis::X, c),
            (Some(cz), Some(cx)) => {
                truth.double_clicks += 1;
                if u_squash < 0.5 {
                    (Basis::Z, cz)
                } else {
                    (Basis::X, cx)
                }
            }
        };
        let record = DetectionRecord {
            frame_index: frame.frame_index,
            bob_basis,
            measured_bit: click.bit,
            origin_tag: click.origin,
            origin_photon_number: if click.origin == Origin::Signal {
                frame.photon_count
            } else {
                0
            },
        };
        truth.by_origin[click.origin.index()] += 1;
        if bob_basis == frame.alice_basis {
            let error = match bob_basis {
                Basis::Z => Some(click.bit) != frame.alice_bit,
                Basis::X => click.bit == 1,
            };
            tallies.record(bob_basis, frame.intensity, error);
            let class = frame.photon_count.min(3) as usize;
            match bob_basis {
                Basis::Z => truth.z_by_photons[class] += 1,
                Basis::X => {
                    truth.x_by_photons[class].detections += 1;
                    truth.x_by_photons[class].errors += u64::from(error);
                }
            }
        }
        if cfg.keep_events {
            events.push((frame, record));
        }
        if let StopRule::SiftedZ(target) = cfg.stop {
            if tallies.n_z() >= target {
                break;
            }
        }
    }

    if let StopRule::SiftedZ(target) = cfg.stop {
        if tallies.n_z() < target {
            return Err(SimError::Timeout {
                frames,
                n_z: tallies.n_z(),
            });
        }
    }

    Ok(LinkRun {
        tallies,
        events,
        frames,
        elapsed_protocol_time: frames as f64 / rep,
        ground_truth: truth,
    })
}

/// Writes the event stream as comma-separated text, one detection per line.
pub fn write_event_stream<W: Write>(mut out: W, events: &[(EmittedFrame, DetectionRecord)]) -> io::Result<()> {
    writeln!(
        out,
        "frame_index,alice_basis,bob_basis,alice_bit,bob_bit,intensity,origin_tag,photon_count"
    )?;
    for (f, d) in events {
        let alice_bit = f.alice_bit.map_or_else(String::new, |b| b.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            f.frame_index,
            f.alice_basis,
            d.bob_basis,
            alice_bit,
            d.measured_bit,
            f.intensity.label(),
            d.origin_tag.label(),
            f.photon_count
        )?;
    }
    Ok(())
}
