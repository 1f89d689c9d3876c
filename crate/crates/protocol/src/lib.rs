//! Wire protocol between the data center (features and labels) and the
//! third party (sensitive attribute). Only prediction matrices travel one
//! way and index sets the other.

pub mod audit;
pub mod client;
pub mod error;
pub mod frame;
pub mod message;
pub mod server;
pub mod transcript;
pub mod transport;

pub use audit::{audit_transcript, AuditReport};
pub use client::{exchange_over, resolve_addr, session_id, DcClient, Exchange, ADDR_ENV};
pub use error::{ProtocolError, Result};
pub use frame::{Frame, FrameKind, MAX_PAYLOAD};
pub use message::Message;
pub use server::{tp_serve, SessionOutcome, ThirdParty, TpHandle};
pub use transcript::{Direction, Transcript};
