//! Typed message bodies. Each message type has one JSON payload shape.

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::wire::{MsgType, WireMessage, WIRE_VERSION};
use crate::model::{Basis, BasisCounts, Intensity};
use crate::postproc::PaSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: String,
    pub software: String,
}

/// Bob's detections, frame indices delta-encoded, bases packed one bit each
/// (`1` = X). No measurement outcome is included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub frame_deltas: Vec<u64>,
    pub bases: Vec<u8>,
}

/// Alice's basis for each reported detection, packed like the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisReveal {
    pub bases: Vec<u8>,
}

/// Alice's intensity index for each reported detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityReveal {
    pub intensities: Vec<u8>,
}

/// Positions in the sifted Z key Bob must disclose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub positions: Vec<u32>,
}

/// Bob's disclosed sample bits and his X-basis tallies per intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReveal {
    pub bits: Vec<u8>,
    pub x_tallies: [BasisCounts; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcAccount {
    /// Alice's leakage charge for reconciliation.
    Charge { lambda_ec: f64, qber_sample: f64 },
    /// Bob's corrected-error count per intensity over the whole sifted Z set.
    Corrected { z_errors: [u64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaSeedMsg {
    pub key_length: u64,
    pub seed: PaSeed,
    pub tag_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmTag {
    pub tag: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello(Hello),
    /// Canonical JSON of the session configuration, compared byte for byte.
    Params(Vec<u8>),
    DetectionReport(DetectionReport),
    BasisReveal(BasisReveal),
    IntensityReveal(IntensityReveal),
    SampleRequest(SampleRequest),
    SampleReveal(SampleReveal),
    EcAccount(EcAccount),
    PaSeed(PaSeedMsg),
    ConfirmTag(ConfirmTag),
    Abort(Abort),
    Done,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("payload types serialize infallibly")
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, serde_json::Error> {
    serde_json::from_slice(bytes)
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Hello(_) => MsgType::Hello,
            Payload::Params(_) => MsgType::Params,
            Payload::DetectionReport(_) => MsgType::DetectionReport,
            Payload::BasisReveal(_) => MsgType::BasisReveal,
            Payload::IntensityReveal(_) => MsgType::IntensityReveal,
            Payload::SampleRequest(_) => MsgType::SampleRequest,
            Payload::SampleReveal(_) => MsgType::SampleReveal,
            Payload::EcAccount(_) => MsgType::EcAccount,
            Payload::PaSeed(_) => MsgType::PaSeed,
            Payload::ConfirmTag(_) => MsgType::ConfirmTag,
            Payload::Abort(_) => MsgType::Abort,
            Payload::Done => MsgType::Done,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::Hello(p) => json(p),
            Payload::Params(bytes) => bytes.clone(),
            Payload::DetectionReport(p) => json(p),
            Payload::BasisReveal(p) => json(p),
            Payload::IntensityReveal(p) => json(p),
            Payload::SampleRequest(p) => json(p),
            Payload::SampleReveal(p) => json(p),
            Payload::EcAccount(p) => json(p),
            Payload::PaSeed(p) => json(p),
            Payload::ConfirmTag(p) => json(p),
            Payload::Abort(p) => json(p),
            Payload::Done => Vec::new(),
        }
    }

    pub fn from_message(msg: &WireMessage) -> Result<Self, serde_json::Error> {
        let b = &msg.payload;
        Ok(match msg.msg_type {
            MsgType::Hello => Payload::Hello(parse(b)?),
            MsgType::Params => Payload::Params(b.clone()),
            MsgType::DetectionReport => Payload::DetectionReport(parse(b)?),
            MsgType::BasisReveal => Payload::BasisReveal(parse(b)?),
            MsgType::IntensityReveal => Payload::IntensityReveal(parse(b)?),
            MsgType::SampleRequest => Payload::SampleRequest(parse(b)?),
            MsgType::SampleReveal => Payload::SampleReveal(parse(b)?),
            MsgType::EcAccount => Payload::EcAccount(parse(b)?),
            MsgType::PaSeed => Payload::PaSeed(parse(b)?),
            MsgType::ConfirmTag => Payload::ConfirmTag(parse(b)?),
            MsgType::Abort => Payload::Abort(parse(b)?),
            MsgType::Done => Payload::Done,
        })
    }

    /// Bits of key material (sifted or final) this payload carries.
    pub fn key_bits(&self) -> u64 {
        match self {
            Payload::SampleReveal(p) => p.bits.len() as u64,
            Payload::ConfirmTag(p) => p.tag.len() as u64,
            _ => 0,
        }
    }

    pub fn into_message(self, session_id: [u8; 16], seq: u32) -> WireMessage {
        WireMessage {
            version: WIRE_VERSION,
            session_id,
            seq,
            msg_type: self.msg_type(),
            payload: self.to_bytes(),
        }
    }
}

/// LSB-first bit packing.
pub fn pack_bits(bits: impl IntoIterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.into_iter().enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().expect("pushed above") |= 1 << (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits`]; `None` if `bytes` cannot hold exactly `n` bits.
pub fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

pub fn pack_bases(bases: &[Basis]) -> Vec<u8> {
    pack_bits(bases.iter().map(|b| *b == Basis::X))
}

pub fn unpack_bases(bytes: &[u8], n: usize) -> Option<Vec<Basis>> {
    unpack_bits(bytes, n).map(|v| v.into_iter().map(|x| if x { Basis::X } else { Basis::Z }).collect())
}

pub fn intensity_from_u8(v: u8) -> Option<Intensity> {
    Intensity::from_index(v as usize)
}
