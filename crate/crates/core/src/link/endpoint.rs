//! Alice and Bob as sequential, event-driven state machines.
//!
//! An endpoint never touches a transport. `start` and `on_message` return the
//! messages to send, so the same code runs over a socket, an in-memory pipe or
//! a test that feeds it hand-made frames.
//!
//! Both parties replay the seeded quantum exchange. Alice keeps only what she
//! prepared and Bob only what he measured; the one exception is Bob's copy of
//! Alice's bits, which stands in for a perfect error-correction code and is
//! read only while reconciling.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::payload::{
    intensity_from_u8, pack_bases, unpack_bases, Abort, BasisReveal, ConfirmTag, DetectionReport, EcAccount, Hello,
    IntensityReveal, PaSeedMsg, Payload, SampleRequest, SampleReveal,
};
use super::wire::{MsgType, WireError, WireMessage};
use crate::finite_key::{decoy_bounds, lambda_ec, secret_key_length, DecoyBounds, DEFAULT_F_EC};
use crate::model::{
    epsilon_budget, Basis, BasisCounts, ChannelModel, DetectorMode, DetectorModel, Intensity, ModelError,
    ProtocolParams, SecretKeyReport, TallyCounts,
};
use crate::photonics::{run_link, DetectionRecord, EmittedFrame, LinkConfig, StopRule};
use crate::postproc::{
    choose_sample, confirmation_tag, privacy_amplify, PaSeed, DEFAULT_SAMPLE_FRACTION, DEFAULT_TAG_BITS,
};
use crate::rng::{stream_rng, SimRng, Stream};

/// Everything both parties must agree on before the quantum exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub link: LinkConfig,
    pub f_ec: f64,
    /// Fraction of the sifted Z key disclosed to estimate QBER_Z.
    pub sample_fraction: f64,
    pub tag_bits: u32,
}

impl SessionConfig {
    pub fn new(mut link: LinkConfig) -> Self {
        link.keep_events = true;
        Self {
            link,
            f_ec: DEFAULT_F_EC,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            tag_bits: DEFAULT_TAG_BITS,
        }
    }

    /// Ideal detectors and a perfect interferometer at 3 dB of channel loss,
    /// stopping after `n_z` sifted Z detections.
    pub fn noiseless(n_z: u64, seed: u64) -> Self {
        let detector = DetectorModel {
            name: "noiseless".into(),
            efficiency: 0.5,
            dark_rate: 0.0,
            mode: DetectorMode::Gated,
            gate_rate: 119e6,
            gate_on_window: 0.5e-9,
            holdoff_time: 0.0,
            afterpulse_amplitude: 0.0,
            afterpulse_tau: 1e-6,
            timing_error: 0.0,
        };
        let channel = ChannelModel {
            channel_loss_db: 3.0,
            receiver_loss_z_db: 1.0,
            receiver_loss_x_db: 3.0,
            visibility: 1.0,
        };
        Self::new(LinkConfig::new(
            ProtocolParams::default(),
            channel,
            detector.clone(),
            detector,
            StopRule::SiftedZ(n_z),
            seed,
        ))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.link.params.validate()?;
        self.link.channel.validate()?;
        self.link.detector_z.validate()?;
        self.link.detector_x.validate()?;
        let bad = |name: &'static str, value: f64, domain: &'static str| {
            Err(ModelError::Domain {
                name,
                value,
                domain,
            })
        };
        if !(self.f_ec.is_finite() && self.f_ec >= 1.0) {
            return bad("f_ec", self.f_ec, "[1, inf)");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            return bad("sample_fraction", self.sample_fraction, "(0, 1)");
        }
        if !(1..=4096).contains(&self.tag_bits) {
            return bad("tag_bits", f64::from(self.tag_bits), "[1, 4096]");
        }
        if matches!(self.link.stop, StopRule::Frames(0) | StopRule::SiftedZ(0)) {
            return Err(ModelError::InvalidParameters("stop target must be positive".into()));
        }
        Ok(())
    }

    /// Serialization compared byte for byte during the PARAMS handshake.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes infallibly")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Init,
    Quantum,
    Sift,
    Estimate,
    Reconcile,
    Amplify,
    Confirm,
    Done,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }
}

/// One message an endpoint put on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentMessage {
    pub seq: u32,
    pub msg_type: MsgType,
    pub payload_bytes: usize,
    /// Bits of sifted or final key carried by the payload.
    pub key_bits: u64,
}

/// Finite-key accounting for one session: the decoy bounds over every sifted
/// detection, and a leakage of `f_ec * n_key * H2(q_sample)` plus the
/// disclosed sample. The key length is capped at the key actually held.
pub fn session_key_accounting(
    tallies: &TallyCounts,
    params: &ProtocolParams,
    qber_sample: f64,
    n_key: u64,
    sample_bits: u64,
    f_ec: f64,
    elapsed_protocol_time: f64,
) -> Result<(DecoyBounds, SecretKeyReport), ModelError> {
    let bounds = if tallies.n_z() == 0 && tallies.n_x() == 0 {
        DecoyBounds::vacuous()
    } else {
        decoy_bounds(tallies, params, epsilon_budget(params.eps_sec))?
    };
    let lambda = lambda_ec(n_key, qber_sample, f_ec)? + sample_bits as f64;
    let l = secret_key_length(&bounds, lambda, params.eps_sec, params.eps_corr).min(n_key);
    let skr = if elapsed_protocol_time > 0.0 {
        l as f64 / elapsed_protocol_time
    } else {
        0.0
    };
    Ok((
        bounds,
        SecretKeyReport {
            s_z0_lower: bounds.s_z0_lower,
            s_z1_lower: bounds.s_z1_lower,
            phi_z_upper: bounds.phi_z_upper,
            lambda_ec: lambda,
            key_length_l: l,
            skr,
            elapsed_protocol_time,
        },
    ))
}

fn sample_qber(pairs: impl Iterator<Item = (u8, u8)>) -> f64 {
    let (mut n, mut e) = (0u64, 0u64);
    for (a, b) in pairs {
        n += 1;
        e += u64::from(a != b);
    }
    // With nothing disclosed, assume the worst.
    if n == 0 {
        0.5
    } else {
        e as f64 / n as f64
    }
}

/// Sifted Z key with the intensity each bit was sent at.
#[derive(Debug, Clone, Default)]
struct KeyBits {
    bits: Vec<u8>,
    intensity: Vec<Intensity>,
}

impl KeyBits {
    fn counts(&self) -> [u64; 3] {
        let mut n = [0u64; 3];
        for k in &self.intensity {
            n[k.index()] += 1;
        }
        n
    }

    /// Drops the sorted `positions` and returns the remaining bits.
    fn without(&self, positions: &[usize]) -> Vec<u8> {
        let mut skip = positions.iter().peekable();
        let mut out = Vec::with_capacity(self.bits.len() - positions.len());
        for (i, &b) in self.bits.iter().enumerate() {
            if skip.peek() == Some(&&i) {
                skip.next();
            } else {
                out.push(b);
            }
        }
        out
    }
}

#[derive(Debug, Default)]
struct AliceState {
    session_rng: Option<SimRng>,
    /// Prepared frames that Bob will report, sorted by index.
    frames: Vec<EmittedFrame>,
    key: KeyBits,
    sample: Vec<usize>,
    x_tallies: [BasisCounts; 3],
    qber_sample: f64,
    lambda_ec: f64,
    tag_seed: u64,
    tag_sent: bool,
}

#[derive(Debug, Default)]
struct BobState {
    detections: Vec<DetectionRecord>,
    /// Alice's bit per detection; read only by reconciliation.
    ec_reference: Vec<Option<u8>>,
    alice_bases: Option<Vec<Basis>>,
    /// Index into `detections` of each sifted Z bit.
    key_source: Vec<usize>,
    key: KeyBits,
    x_tallies: [BasisCounts; 3],
    sample: Vec<usize>,
    tag: Vec<u8>,
}

pub struct Endpoint {
    role: Role,
    phase: Phase,
    config: SessionConfig,
    config_bytes: Vec<u8>,
    session_id: [u8; 16],
    next_seq: u32,
    expected_seq: u32,
    hello_seen: bool,
    sent: Vec<SentMessage>,
    abort_reason: Option<String>,
    frames: u64,
    elapsed_protocol_time: f64,
    tallies: Option<TallyCounts>,
    qber_sample: Option<f64>,
    sample_bits: u64,
    accounting: Option<(DecoyBounds, SecretKeyReport)>,
    final_key: Option<Vec<u8>>,
    alice: AliceState,
    bob: BobState,
}

type Outbox = Vec<WireMessage>;

impl Endpoint {
    pub fn new(role: Role, config: SessionConfig) -> Self {
        let mut config = config;
        config.link.keep_events = true;
        Self {
            role,
            phase: Phase::Init,
            config_bytes: config.canonical_bytes(),
            config,
            session_id: [0; 16],
            next_seq: 0,
            expected_seq: 0,
            hello_seen: false,
            sent: Vec::new(),
            abort_reason: None,
            frames: 0,
            elapsed_protocol_time: 0.0,
            tallies: None,
            qber_sample: None,
            sample_bits: 0,
            accounting: None,
            final_key: None,
            alice: AliceState::default(),
            bob: BobState::default(),
        }
    }

    pub fn alice(config: SessionConfig) -> Self {
        Self::new(Role::Alice, config)
    }

    pub fn bob(config: SessionConfig) -> Self {
        Self::new(Role::Bob, config)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_finished(&self) -> bool {
        self.phase.is_terminal()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn session_id(&self) -> [u8; 16] {
        self.session_id
    }

    pub fn abort_reason(&self) -> Option<&str> {
        self.abort_reason.as_deref()
    }

    /// Final key; present only once the session reached DONE.
    pub fn final_key(&self) -> Option<&[u8]> {
        match self.phase {
            Phase::Done => self.final_key.as_deref(),
            _ => None,
        }
    }

    pub fn tallies(&self) -> Option<&TallyCounts> {
        self.tallies.as_ref()
    }

    pub fn qber_sample(&self) -> Option<f64> {
        self.qber_sample
    }

    pub fn sample_bits(&self) -> u64 {
        self.sample_bits
    }

    pub fn bounds(&self) -> Option<&DecoyBounds> {
        self.accounting.as_ref().map(|a| &a.0)
    }

    pub fn report(&self) -> Option<&SecretKeyReport> {
        self.accounting.as_ref().map(|a| &a.1)
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn elapsed_protocol_time(&self) -> f64 {
        self.elapsed_protocol_time
    }

    pub fn sent(&self) -> &[SentMessage] {
        &self.sent
    }

    fn set_phase(&mut self, next: Phase) {
        debug_assert!(next >= self.phase, "phase may not move backwards");
        self.phase = next;
    }

    fn emit(&mut self, payload: Payload) -> WireMessage {
        let msg = payload.clone().into_message(self.session_id, self.next_seq);
        self.sent.push(SentMessage {
            seq: self.next_seq,
            msg_type: msg.msg_type,
            payload_bytes: msg.payload.len(),
            key_bits: payload.key_bits(),
        });
        self.next_seq += 1;
        msg
    }

    /// Moves to ABORTED and returns the ABORT notice for the peer. Once the
    /// session is over this is a no-op.
    pub fn abort(&mut self, reason: impl Into<String>) -> Outbox {
        if self.is_finished() {
            return Vec::new();
        }
        let reason = reason.into();
        self.phase = Phase::Aborted;
        self.final_key = None;
        self.abort_reason = Some(reason.clone());
        vec![self.emit(Payload::Abort(Abort { reason }))]
    }

    pub fn on_transport_error(&mut self, diagnostic: &str) -> Outbox {
        self.abort(format!("transport failure: {diagnostic}"))
    }

    pub fn on_decode_error(&mut self, err: &WireError) -> Outbox {
        self.abort(format!("undecodable frame: {err}"))
    }

    /// Messages to send when the session opens. Alice speaks first.
    pub fn start(&mut self) -> Outbox {
        if self.role == Role::Bob || self.next_seq > 0 {
            return Vec::new();
        }
        if let Err(e) = self.config.validate() {
            return self.abort(format!("invalid configuration: {e}"));
        }
        let mut rng = stream_rng(self.config.link.seed, Stream::Session);
        rng.fill_bytes(&mut self.session_id);
        self.alice.session_rng = Some(rng);
        let hello = self.emit(Payload::Hello(Hello {
            role: "alice".into(),
            software: concat!("qkdlab ", env!("CARGO_PKG_VERSION")).into(),
        }));
        let params = self.emit(Payload::Params(self.config_bytes.clone()));
        vec![hello, params]
    }

    pub fn on_message(&mut self, msg: &WireMessage) -> Outbox {
        if self.is_finished() {
            return Vec::new();
        }
        let adopting = self.role == Role::Bob && !self.hello_seen && msg.msg_type == MsgType::Hello;
        if adopting {
            self.session_id = msg.session_id;
        } else if msg.session_id != self.session_id {
            return self.abort("message for a different session");
        }
        if msg.seq != self.expected_seq {
            return self.abort(format!("sequence number {} where {} was due", msg.seq, self.expected_seq));
        }
        self.expected_seq += 1;
        let payload = match Payload::from_message(msg) {
            Ok(p) => p,
            Err(e) => return self.abort(format!("malformed {:?} payload: {e}", msg.msg_type)),
        };
        if let Payload::Abort(a) = payload {
            self.phase = Phase::Aborted;
            self.final_key = None;
            self.abort_reason = Some(format!("peer aborted: {}", a.reason));
            return Vec::new();
        }
        let result = match self.role {
            Role::Alice => self.alice_step(payload),
            Role::Bob => self.bob_step(payload),
        };
        result.unwrap_or_else(|reason| self.abort(reason))
    }

    fn unexpected(&self, t: MsgType) -> String {
        format!("unexpected {t:?} in phase {:?}", self.phase)
    }

    fn check_params(&self, bytes: &[u8]) -> Result<(), String> {
        if bytes == self.config_bytes.as_slice() {
            Ok(())
        } else {
            Err("session parameters differ between the endpoints".into())
        }
    }

    fn simulate(&mut self) -> Result<Vec<(EmittedFrame, DetectionRecord)>, String> {
        self.set_phase(Phase::Quantum);
        let run = run_link(&self.config.link).map_err(|e| format!("quantum exchange failed: {e}"))?;
        self.frames = run.frames;
        self.elapsed_protocol_time = run.elapsed_protocol_time;
        Ok(run.events)
    }

    fn finish_accounting(&mut self, tallies: TallyCounts, qber_sample: f64, n_key: u64) -> Result<u64, String> {
        let acc = session_key_accounting(
            &tallies,
            &self.config.link.params,
            qber_sample,
            n_key,
            self.sample_bits,
            self.config.f_ec,
            self.elapsed_protocol_time,
        )
        .map_err(|e| format!("finite-key analysis failed: {e}"))?;
        let l = acc.1.key_length_l;
        self.tallies = Some(tallies);
        self.qber_sample = Some(qber_sample);
        self.accounting = Some(acc);
        Ok(l)
    }

    fn alice_step(&mut self, payload: Payload) -> Result<Outbox, String> {
        let t = payload.msg_type();
        match (self.phase, payload) {
            (Phase::Init, Payload::Hello(_)) if !self.hello_seen => {
                self.hello_seen = true;
                Ok(Vec::new())
            }
            (Phase::Init, Payload::Params(bytes)) if self.hello_seen => {
                self.check_params(&bytes)?;
                let events = self.simulate()?;
                self.alice.frames = events.into_iter().map(|(f, _)| f).collect();
                Ok(Vec::new())
            }
            (Phase::Quantum, Payload::DetectionReport(report)) => self.alice_sift(report),
            (Phase::Estimate, Payload::SampleReveal(reveal)) => {
                let a = &mut self.alice;
                if reveal.bits.len() != a.sample.len() {
                    return Err("sample reveal has the wrong length".into());
                }
                let q = sample_qber(a.sample.iter().map(|&p| a.key.bits[p]).zip(reveal.bits.iter().copied()));
                a.qber_sample = q;
                a.x_tallies = reveal.x_tallies;
                let n_key = (a.key.bits.len() - a.sample.len()) as u64;
                a.lambda_ec = lambda_ec(n_key, q, self.config.f_ec).map_err(|e| e.to_string())?;
                let charge = EcAccount::Charge {
                    lambda_ec: a.lambda_ec,
                    qber_sample: q,
                };
                self.sample_bits = a.sample.len() as u64;
                self.set_phase(Phase::Reconcile);
                Ok(vec![self.emit(Payload::EcAccount(charge))])
            }
            (Phase::Reconcile, Payload::EcAccount(EcAccount::Corrected { z_errors })) => {
                self.set_phase(Phase::Amplify);
                let n = self.alice.key.counts();
                let mut tallies = TallyCounts::default();
                for k in 0..3 {
                    if z_errors[k] > n[k] {
                        return Err("corrected error count exceeds the sifted count".into());
                    }
                    tallies.z[k] = BasisCounts {
                        detections: n[k],
                        errors: z_errors[k],
                    };
                }
                tallies.x = self.alice.x_tallies;
                let key = self.alice.key.without(&self.alice.sample);
                let l = self.finish_accounting(tallies, self.alice.qber_sample, key.len() as u64)?;
                if l == 0 {
                    return Err("extractable key length is zero".into());
                }
                let mut pa_rng = stream_rng(self.config.link.seed, Stream::PrivacyAmplification);
                let seed = PaSeed::random(l as usize, key.len(), &mut pa_rng);
                let final_key = privacy_amplify(&key, l as usize, &seed).map_err(|e| e.to_string())?;
                let rng = self.alice.session_rng.as_mut().expect("set in start");
                self.alice.tag_seed = rng.random();
                self.final_key = Some(final_key);
                self.set_phase(Phase::Confirm);
                let msg = PaSeedMsg {
                    key_length: l,
                    seed,
                    tag_seed: self.alice.tag_seed,
                };
                Ok(vec![self.emit(Payload::PaSeed(msg))])
            }
            (Phase::Confirm, Payload::ConfirmTag(theirs)) if !self.alice.tag_sent => {
                let key = self.final_key.as_deref().expect("set before CONFIRM");
                let ours = confirmation_tag(key, self.config.tag_bits, self.alice.tag_seed);
                if ours != theirs.tag {
                    return Err("confirmation tag mismatch".into());
                }
                self.alice.tag_sent = true;
                Ok(vec![self.emit(Payload::ConfirmTag(ConfirmTag { tag: ours }))])
            }
            (Phase::Confirm, Payload::Done) if self.alice.tag_sent => {
                self.set_phase(Phase::Done);
                Ok(Vec::new())
            }
            _ => Err(self.unexpected(t)),
        }
    }

    fn alice_sift(&mut self, report: DetectionReport) -> Result<Outbox, String> {
        self.set_phase(Phase::Sift);
        let n = report.frame_deltas.len();
        let bob_bases = unpack_bases(&report.bases, n).ok_or("basis list does not match the report")?;
        let mut bases = Vec::with_capacity(n);
        let mut intensities = Vec::with_capacity(n);
        let mut frames = self.alice.frames.iter().peekable();
        let mut index = 0u64;
        for (i, (&delta, &bob_basis)) in report.frame_deltas.iter().zip(&bob_bases).enumerate() {
            if i > 0 && delta == 0 {
                return Err("detection report repeats a frame".into());
            }
            index = index.checked_add(delta).ok_or("frame index overflow")?;
            while frames.peek().is_some_and(|f| f.frame_index < index) {
                frames.next();
            }
            let f = match frames.peek() {
                Some(f) if f.frame_index == index => **f,
                _ => return Err(format!("reported frame {index} was never transmitted")),
            };
            bases.push(f.alice_basis);
            intensities.push(f.intensity.index() as u8);
            if f.alice_basis == bob_basis && bob_basis == Basis::Z {
                self.alice.key.bits.push(f.alice_bit.expect("Z frames carry a bit"));
                self.alice.key.intensity.push(f.intensity);
            }
        }
        self.alice.frames = Vec::new();
        self.set_phase(Phase::Estimate);
        let mut rng = stream_rng(self.config.link.seed, Stream::Sampling);
        self.alice.sample = choose_sample(self.alice.key.bits.len(), self.config.sample_fraction, &mut rng);
        let positions = self.alice.sample.iter().map(|&p| p as u32).collect();
        Ok(vec![
            self.emit(Payload::BasisReveal(BasisReveal {
                bases: pack_bases(&bases),
            })),
            self.emit(Payload::IntensityReveal(IntensityReveal { intensities })),
            self.emit(Payload::SampleRequest(SampleRequest { positions })),
        ])
    }

    fn bob_step(&mut self, payload: Payload) -> Result<Outbox, String> {
        let t = payload.msg_type();
        match (self.phase, payload) {
            (Phase::Init, Payload::Hello(_)) if !self.hello_seen => {
                self.hello_seen = true;
                Ok(vec![self.emit(Payload::Hello(Hello {
                    role: "bob".into(),
                    software: concat!("qkdlab ", env!("CARGO_PKG_VERSION")).into(),
                }))])
            }
            (Phase::Init, Payload::Params(bytes)) if self.hello_seen => {
                self.check_params(&bytes)?;
                self.config.validate().map_err(|e| format!("invalid configuration: {e}"))?;
                let ack = self.emit(Payload::Params(self.config_bytes.clone()));
                let events = self.simulate()?;
                let mut prev = 0u64;
                let mut deltas = Vec::with_capacity(events.len());
                let mut bases = Vec::with_capacity(events.len());
                for (f, d) in events {
                    deltas.push(d.frame_index - prev);
                    prev = d.frame_index;
                    bases.push(d.bob_basis);
                    self.bob.ec_reference.push(f.alice_bit);
                    self.bob.detections.push(d);
                }
                self.set_phase(Phase::Sift);
                let report = self.emit(Payload::DetectionReport(DetectionReport {
                    frame_deltas: deltas,
                    bases: pack_bases(&bases),
                }));
                Ok(vec![ack, report])
            }
            (Phase::Sift, Payload::BasisReveal(reveal)) if self.bob.alice_bases.is_none() => {
                let n = self.bob.detections.len();
                let bases = unpack_bases(&reveal.bases, n).ok_or("basis reveal does not match the report")?;
                self.bob.alice_bases = Some(bases);
                Ok(Vec::new())
            }
            (Phase::Sift, Payload::IntensityReveal(reveal)) if self.bob.alice_bases.is_some() => {
                let b = &mut self.bob;
                let alice_bases = b.alice_bases.as_ref().expect("guarded");
                if reveal.intensities.len() != b.detections.len() {
                    return Err("intensity reveal does not match the report".into());
                }
                for (i, d) in b.detections.iter().enumerate() {
                    let k = intensity_from_u8(reveal.intensities[i]).ok_or("unknown intensity index")?;
                    if alice_bases[i] != d.bob_basis {
                        continue;
                    }
                    match d.bob_basis {
                        Basis::Z => {
                            b.key_source.push(i);
                            b.key.bits.push(d.measured_bit);
                            b.key.intensity.push(k);
                        }
                        Basis::X => {
                            let c = &mut b.x_tallies[k.index()];
                            c.detections += 1;
                            c.errors += u64::from(d.measured_bit == 1);
                        }
                    }
                }
                self.set_phase(Phase::Estimate);
                Ok(Vec::new())
            }
            (Phase::Estimate, Payload::SampleRequest(req)) => {
                let n = self.bob.key.bits.len();
                let sample: Vec<usize> = req.positions.iter().map(|&p| p as usize).collect();
                if sample.windows(2).any(|w| w[0] >= w[1]) || sample.last().is_some_and(|&p| p >= n) {
                    return Err("sample positions must be sorted, distinct and inside the key".into());
                }
                let bits = sample.iter().map(|&p| self.bob.key.bits[p]).collect();
                self.bob.sample = sample;
                self.sample_bits = self.bob.sample.len() as u64;
                self.set_phase(Phase::Reconcile);
                let reveal = SampleReveal {
                    bits,
                    x_tallies: self.bob.x_tallies,
                };
                Ok(vec![self.emit(Payload::SampleReveal(reveal))])
            }
            (Phase::Reconcile, Payload::EcAccount(EcAccount::Charge { lambda_ec: charged, qber_sample })) => {
                let b = &mut self.bob;
                let reference: Vec<u8> = b
                    .key_source
                    .iter()
                    .map(|&i| b.ec_reference[i].expect("sifted Z frames carry a bit"))
                    .collect();
                let mut tallies = TallyCounts::default();
                for (p, (&ours, &theirs)) in b.key.bits.iter().zip(&reference).enumerate() {
                    tallies.record(Basis::Z, b.key.intensity[p], ours != theirs);
                }
                tallies.x = b.x_tallies;
                let q = sample_qber(b.sample.iter().map(|&p| (reference[p], b.key.bits[p])));
                b.key.bits = reference;
                let n_key = (b.key.bits.len() - b.sample.len()) as u64;
                let own = lambda_ec(n_key, q, self.config.f_ec).map_err(|e| e.to_string())?;
                if q != qber_sample || (own - charged).abs() > 1e-9 * own.max(1.0) {
                    return Err("reconciliation leakage disagrees between the endpoints".into());
                }
                let z_errors = [0, 1, 2].map(|k| tallies.z[k].errors);
                self.finish_accounting(tallies, q, n_key)?;
                self.set_phase(Phase::Amplify);
                Ok(vec![self.emit(Payload::EcAccount(EcAccount::Corrected { z_errors }))])
            }
            (Phase::Amplify, Payload::PaSeed(msg)) => {
                let key = self.bob.key.without(&self.bob.sample);
                let l = self.report().expect("set in RECONCILE").key_length_l;
                msg.seed.validate().map_err(|e| e.to_string())?;
                if msg.key_length != l || msg.seed.rows as u64 != l || msg.seed.cols != key.len() {
                    return Err(format!(
                        "privacy amplification to {} bits, but the accounting allows {l}",
                        msg.key_length
                    ));
                }
                let final_key = privacy_amplify(&key, l as usize, &msg.seed).map_err(|e| e.to_string())?;
                self.bob.tag = confirmation_tag(&final_key, self.config.tag_bits, msg.tag_seed);
                self.final_key = Some(final_key);
                self.set_phase(Phase::Confirm);
                let tag = self.bob.tag.clone();
                Ok(vec![self.emit(Payload::ConfirmTag(ConfirmTag { tag }))])
            }
            (Phase::Confirm, Payload::ConfirmTag(theirs)) => {
                if theirs.tag != self.bob.tag {
                    return Err("confirmation tag mismatch".into());
                }
                let done = self.emit(Payload::Done);
                self.set_phase(Phase::Done);
                Ok(vec![done])
            }
            _ => Err(self.unexpected(t)),
        }
    }
}
