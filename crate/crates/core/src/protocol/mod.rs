//! Two-party BB84 post-processing over a classical byte stream.

pub mod session;
pub mod sifting;
pub mod transport;
pub mod wire;

pub use session::{run_in_process, run_session, QuantumInput, SessionError, SessionResult};
pub use sifting::SiftedKey;
pub use transport::{memory_pair, Transport, TransportError};
pub use wire::{decode_frame, encode_frame, AbortReason, FrameError, Message, Role};
