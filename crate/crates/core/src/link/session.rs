//! Driving two endpoints over a transport, and the artefacts a session leaves.

use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::endpoint::{Endpoint, Phase, Role, SentMessage, SessionConfig};
use super::payload::pack_bits;
use super::transport::{memory_pair, tcp_pair};
use super::wire::{read_message, write_message, MsgType, WireError, WireMessage, DEFAULT_MAX_FRAME};
use crate::finite_key::DecoyBounds;
use crate::model::{SecretKeyReport, TallyCounts};
use crate::postproc::confirmation_tag;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Memory,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memory" => Ok(Self::Memory),
            "tcp" => Ok(Self::Tcp),
            other => Err(format!("unknown transport '{other}', expected memory or tcp")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    /// Longest wait for the peer's next message.
    pub deadline: Duration,
    pub max_frame: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            deadline: Duration::from_secs(120),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("transport setup: {0}")]
    Io(#[from] io::Error),
    #[error("endpoint thread panicked")]
    Panicked,
}

fn send_all<S: Write>(stream: &mut S, msgs: &[WireMessage]) -> Result<(), WireError> {
    msgs.iter().try_for_each(|m| write_message(stream, m))
}

/// Runs one endpoint to completion over `stream`. Transport and framing
/// failures abort the session; the endpoint records why.
pub fn drive<S: Read + Write>(endpoint: &mut Endpoint, stream: &mut S, max_frame: usize) {
    let mut outbox = endpoint.start();
    loop {
        if let Err(e) = send_all(stream, &outbox) {
            let notice = endpoint.on_transport_error(&e.to_string());
            // the peer may be gone already; the notice is best effort
            let _ = send_all(stream, &notice);
            return;
        }
        if endpoint.is_finished() {
            return;
        }
        outbox = match read_message(stream, max_frame) {
            Ok(msg) => endpoint.on_message(&msg),
            Err(WireError::Io(e)) => endpoint.on_transport_error(&e.to_string()),
            Err(e) => endpoint.on_decode_error(&e),
        };
    }
}

/// Final state of one endpoint, without the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSummary {
    pub role: Role,
    pub phase: Phase,
    pub abort_reason: Option<String>,
    pub frames: u64,
    pub elapsed_protocol_time: f64,
    pub tallies: Option<TallyCounts>,
    pub qber_sample: Option<f64>,
    pub sample_bits: u64,
    pub bounds: Option<DecoyBounds>,
    pub report: Option<SecretKeyReport>,
    pub key_length: u64,
    /// 64-bit universal hash of the final key, hex.
    pub key_fingerprint: Option<String>,
    pub messages: Vec<SentMessage>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fixed seed for key fingerprints in manifests.
const FINGERPRINT_SEED: u64 = 0x5eed;

impl EndpointSummary {
    pub fn of(ep: &Endpoint) -> Self {
        let key = ep.final_key();
        Self {
            role: ep.role(),
            phase: ep.phase(),
            abort_reason: ep.abort_reason().map(str::to_owned),
            frames: ep.frames(),
            elapsed_protocol_time: ep.elapsed_protocol_time(),
            tallies: ep.tallies().cloned(),
            qber_sample: ep.qber_sample(),
            sample_bits: ep.sample_bits(),
            bounds: ep.bounds().copied(),
            report: ep.report().cloned(),
            key_length: key.map_or(0, |k| k.len() as u64),
            key_fingerprint: key.map(|k| hex(&pack_bits(confirmation_tag(k, 64, FINGERPRINT_SEED).iter().map(|&b| b == 1)))),
            messages: ep.sent().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub format_version: u32,
    pub session_id: String,
    pub config: SessionConfig,
    pub completed: bool,
    pub alice: EndpointSummary,
    pub bob: EndpointSummary,
}

pub struct SessionOutcome {
    pub alice: Endpoint,
    pub bob: Endpoint,
}

impl SessionOutcome {
    pub fn completed(&self) -> bool {
        self.alice.phase() == Phase::Done && self.bob.phase() == Phase::Done
    }

    /// The shared key, when both sides finished and hold the same bits.
    pub fn key(&self) -> Option<&[u8]> {
        match (self.alice.final_key(), self.bob.final_key()) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        }
    }

    pub fn manifest(&self) -> SessionManifest {
        SessionManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            session_id: hex(&self.alice.session_id()),
            config: self.alice.config().clone(),
            completed: self.completed(),
            alice: EndpointSummary::of(&self.alice),
            bob: EndpointSummary::of(&self.bob),
        }
    }

    /// Checks the message logs: key material travels only in SAMPLE_REVEAL
    /// (exactly the requested sample) and CONFIRM_TAG (exactly the tag).
    pub fn verify_leakage(&self) -> Result<u64, String> {
        let tag_bits = u64::from(self.alice.config().tag_bits);
        let mut total = 0;
        for m in self.alice.sent().iter().chain(self.bob.sent()) {
            let allowed = match m.msg_type {
                MsgType::SampleReveal => self.bob.sample_bits(),
                MsgType::ConfirmTag => tag_bits,
                _ => 0,
            };
            if m.key_bits != allowed {
                return Err(format!("{:?} #{} carried {} key bits, {allowed} allowed", m.msg_type, m.seq, m.key_bits));
            }
            total += m.key_bits;
        }
        Ok(total)
    }
}

fn run_pair<S: Read + Write + Send>(
    mut alice: Endpoint,
    mut bob: Endpoint,
    mut sa: S,
    mut sb: S,
    max_frame: usize,
) -> Result<SessionOutcome, LinkError> {
    thread::scope(|scope| {
        let a = scope.spawn(move || {
            drive(&mut alice, &mut sa, max_frame);
            alice
        });
        let b = scope.spawn(move || {
            drive(&mut bob, &mut sb, max_frame);
            bob
        });
        let alice = a.join().map_err(|_| LinkError::Panicked)?;
        let bob = b.join().map_err(|_| LinkError::Panicked)?;
        Ok(SessionOutcome { alice, bob })
    })
}

/// Runs a full session with Alice and Bob on their own threads, connected by
/// the chosen transport. Seeds and the optional adversary live in the configs.
pub fn run_session(
    alice_cfg: &SessionConfig,
    bob_cfg: &SessionConfig,
    transport: TransportKind,
    options: SessionOptions,
) -> Result<SessionOutcome, LinkError> {
    let alice = Endpoint::alice(alice_cfg.clone());
    let bob = Endpoint::bob(bob_cfg.clone());
    match transport {
        TransportKind::Memory => {
            let (sa, sb) = memory_pair(options.deadline);
            run_pair(alice, bob, sa, sb, options.max_frame)
        }
        TransportKind::Tcp => {
            let (sa, sb) = tcp_pair(options.deadline)?;
            run_pair(alice, bob, sa, sb, options.max_frame)
        }
    }
}

/// Writes a key as packed bytes, least significant bit first.
pub fn write_key_file(path: &Path, key: &[u8]) -> io::Result<()> {
    std::fs::write(path, pack_bits(key.iter().map(|&b| b == 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_and_tcp_sessions_are_identical() {
        let cfg = SessionConfig::noiseless(10_000, 21);
        let opts = SessionOptions::default();
        let mem = run_session(&cfg, &cfg, TransportKind::Memory, opts).unwrap();
        let tcp = run_session(&cfg, &cfg, TransportKind::Tcp, opts).unwrap();
        assert!(mem.completed(), "{:?}", mem.alice.abort_reason());
        assert_eq!(mem.key(), tcp.key());
        assert!(mem.key().is_some());
        assert_eq!(
            serde_json::to_string(&mem.manifest()).unwrap(),
            serde_json::to_string(&tcp.manifest()).unwrap()
        );
        assert_eq!(mem.verify_leakage().unwrap(), mem.bob.sample_bits() + 2 * 64);
    }

    #[test]
    fn silent_peer_hits_the_deadline() {
        let cfg = SessionConfig::noiseless(1_000, 1);
        let (mut sa, _sb) = memory_pair(Duration::from_millis(50));
        let mut alice = Endpoint::alice(cfg);
        drive(&mut alice, &mut sa, DEFAULT_MAX_FRAME);
        assert_eq!(alice.phase(), Phase::Aborted);
        assert!(alice.abort_reason().unwrap().contains("transport failure"));
    }

    #[test]
    fn transport_names_parse() {
        assert_eq!("tcp".parse::<TransportKind>().unwrap(), TransportKind::Tcp);
        assert!("udp".parse::<TransportKind>().is_err());
    }
}
