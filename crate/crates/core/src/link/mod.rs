//! Alice and Bob as protocol state machines exchanging framed messages over
//! an ordered, reliable byte stream.
//!
//! The classical post-processing flow is a generic decoy-BB84 one:
//!
//! 1. HELLO both ways, then PARAMS and its echo (byte-identical config).
//! 2. Both sides replay the seeded quantum exchange; Bob sends a
//!    DETECTION_REPORT with frame indices and his bases, no outcomes.
//! 3. Alice answers with BASIS_REVEAL, INTENSITY_REVEAL and a SAMPLE_REQUEST
//!    for a random subset of the sifted Z key.
//! 4. Bob discloses the sample and his X tallies in SAMPLE_REVEAL.
//! 5. EC_ACCOUNT: Alice charges the reconciliation leakage, Bob returns the
//!    per-intensity Z error counts found while correcting.
//! 6. Alice computes the key length and sends PA_SEED, or ABORT if it is zero.
//! 7. CONFIRM_TAG both ways, then DONE from Bob.

mod endpoint;
mod payload;
mod session;
mod transport;
pub mod wire;

pub use endpoint::{session_key_accounting, Endpoint, Phase, Role, SentMessage, SessionConfig};
pub use payload::{pack_bits, unpack_bits, Payload};
pub use session::{
    drive, run_session, write_key_file, EndpointSummary, LinkError, SessionManifest, SessionOptions, SessionOutcome,
    TransportKind, MANIFEST_FORMAT_VERSION,
};
pub use transport::{memory_pair, prepare_tcp, tcp_pair, MemoryStream};
pub use wire::{decode_message, encode_message, read_message, write_message, MsgType, WireError, WireMessage};
