//! Length-prefixed framing for the classical channel.
//!
//! ```text
//! u32 BE  length of everything after this field
//! u8      version
//! [u8;16] session id
//! u32 BE  sequence number
//! u8      message type
//! ...     payload
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIRE_VERSION: u8 = 1;
/// Version, session id, sequence number and type.
pub const HEADER_LEN: usize = 1 + 16 + 4 + 1;
pub const LENGTH_PREFIX: usize = 4;
pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Params = 2,
    DetectionReport = 3,
    BasisReveal = 4,
    IntensityReveal = 5,
    SampleRequest = 6,
    SampleReveal = 7,
    EcAccount = 8,
    PaSeed = 9,
    ConfirmTag = 10,
    Abort = 11,
    Done = 12,
}

impl MsgType {
    pub const ALL: [MsgType; 12] = [
        MsgType::Hello,
        MsgType::Params,
        MsgType::DetectionReport,
        MsgType::BasisReveal,
        MsgType::IntensityReveal,
        MsgType::SampleRequest,
        MsgType::SampleReveal,
        MsgType::EcAccount,
        MsgType::PaSeed,
        MsgType::ConfirmTag,
        MsgType::Abort,
        MsgType::Done,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub version: u8,
    pub session_id: [u8; 16],
    pub seq: u32,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("declared frame length {declared} exceeds the limit of {max} bytes")]
    TooLarge { declared: usize, max: usize },
    #[error("trailing bytes after frame: {0}")]
    Trailing(usize),
    #[error("transport: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let body = HEADER_LEN + msg.payload.len();
    let mut out = Vec::with_capacity(LENGTH_PREFIX + body);
    out.extend_from_slice(&(body as u32).to_be_bytes());
    out.push(msg.version);
    out.extend_from_slice(&msg.session_id);
    out.extend_from_slice(&msg.seq.to_be_bytes());
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.payload);
    out
}

fn check_length(declared: usize, max: usize) -> Result<(), WireError> {
    if declared > max {
        return Err(WireError::TooLarge { declared, max });
    }
    if declared < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            have: declared,
        });
    }
    Ok(())
}

fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    let version = body[0];
    if version != WIRE_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let mut session_id = [0u8; 16];
    session_id.copy_from_slice(&body[1..17]);
    let seq = u32::from_be_bytes(body[17..21].try_into().expect("4 bytes"));
    let msg_type = MsgType::from_u8(body[21]).ok_or(WireError::UnknownType(body[21]))?;
    Ok(WireMessage {
        version,
        session_id,
        seq,
        msg_type,
        payload: body[HEADER_LEN..].to_vec(),
    })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_message(bytes: &[u8], max_frame: usize) -> Result<WireMessage, WireError> {
    if bytes.len() < LENGTH_PREFIX {
        return Err(WireError::Truncated {
            needed: LENGTH_PREFIX,
            have: bytes.len(),
        });
    }
    let declared = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    check_length(declared, max_frame)?;
    let have = bytes.len() - LENGTH_PREFIX;
    if have < declared {
        return Err(WireError::Truncated { needed: declared, have });
    }
    if have > declared {
        return Err(WireError::Trailing(have - declared));
    }
    decode_body(&bytes[LENGTH_PREFIX..])
}

/// Reads one frame; the length is checked before the body is allocated.
pub fn read_message<R: Read>(reader: &mut R, max_frame: usize) -> Result<WireMessage, WireError> {
    let mut prefix = [0u8; LENGTH_PREFIX];
    reader.read_exact(&mut prefix)?;
    let declared = u32::from_be_bytes(prefix) as usize;
    check_length(declared, max_frame)?;
    let mut body = vec![0u8; declared];
    reader.read_exact(&mut body)?;
    decode_body(&body)
}

pub fn write_message<W: Write>(writer: &mut W, msg: &WireMessage) -> Result<(), WireError> {
    writer.write_all(&encode_message(msg))?;
    writer.flush()?;
    Ok(())
}
