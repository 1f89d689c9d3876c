//! Data-center client: sends one batch of predictions, receives the fair
//! index set.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand::RngCore;

use dfl_core::fairfilter::{FairIndexSet, Policy};
use dfl_core::hypothesis::PredictionMatrix;
use dfl_core::rng::{stream_rng, Stream};

use crate::error::{ProtocolError, Result};
use crate::frame::{read_frame, write_frame, Frame, SessionId, MAX_PAYLOAD};
use crate::message::{chunk_predictions, Message};
use crate::transcript::{Direction, Transcript};

/// Environment variable naming the third party's address.
pub const ADDR_ENV: &str = "DFL_TP_ADDR";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const RETRY_DELAY: Duration = Duration::from_millis(200);

/// Explicit address if given, else `DFL_TP_ADDR`.
pub fn resolve_addr(flag: Option<&str>) -> Option<String> {
    flag.map(str::to_owned).or_else(|| std::env::var(ADDR_ENV).ok().filter(|v| !v.is_empty()))
}

/// Session identifier drawn from the session stream of `seed`.
pub fn session_id(seed: u64) -> SessionId {
    let mut id = [0u8; 16];
    stream_rng(seed, Stream::Session).fill_bytes(&mut id);
    id
}

/// Result of one request, with the frames exchanged.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub set: FairIndexSet,
    pub transcript: Transcript,
}

fn send<S: Write>(stream: &mut S, t: &mut Transcript, frame: &Frame) -> Result<()> {
    write_frame(stream, frame)?;
    t.record_frame(Direction::DcToTp, frame)
}

/// Runs the client side of a session over an established stream:
/// HELLO, PREDICTIONS chunks, one reply, BYE. Empty sets are returned, not
/// rejected.
pub fn exchange_over<S: Read + Write>(
    stream: &mut S,
    session: SessionId,
    preds: &PredictionMatrix,
    policy: Policy,
    max_payload: usize,
) -> Result<Exchange> {
    let mut t = Transcript::new();
    send(stream, &mut t, &Message::Hello.to_frame(session)?)?;
    for chunk in chunk_predictions(preds, policy, max_payload)? {
        send(stream, &mut t, &Message::Predictions(chunk).to_frame(session)?)?;
    }
    let reply = read_frame(stream)?.ok_or(ProtocolError::Closed)?;
    t.record_frame(Direction::TpToDc, &reply)?;
    let set = match Message::from_frame(&reply)? {
        Message::FairIndices(set) => set,
        Message::Error(reason) => return Err(ProtocolError::Remote(reason)),
        other => return Err(ProtocolError::Unexpected { got: other.kind().to_string(), want: "FAIR_INDICES" }),
    };
    if set.m != preds.m() || set.policy != policy {
        return Err(ProtocolError::Malformed("reply does not match the request".into()));
    }
    send(stream, &mut t, &Message::Bye.to_frame(session)?)?;
    Ok(Exchange { set, transcript: t })
}

#[derive(Debug, Clone)]
pub struct DcClient {
    pub addr: SocketAddr,
    pub timeout: Duration,
    pub max_payload: usize,
}

impl DcClient {
    pub fn new(addr: impl ToSocketAddrs) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| ProtocolError::Malformed("address resolves to nothing".into()))?;
        Ok(Self { addr, timeout: DEFAULT_TIMEOUT, max_payload: MAX_PAYLOAD })
    }

    fn connect(&self) -> Result<TcpStream> {
        let conn = TcpStream::connect_timeout(&self.addr, self.timeout).or_else(|_| {
            std::thread::sleep(RETRY_DELAY);
            TcpStream::connect_timeout(&self.addr, self.timeout)
        })?;
        conn.set_read_timeout(Some(self.timeout))?;
        conn.set_write_timeout(Some(self.timeout))?;
        conn.set_nodelay(true)?;
        Ok(conn)
    }

    /// One session; the set may be empty.
    pub fn exchange(&self, preds: &PredictionMatrix, policy: Policy, session_seed: u64) -> Result<Exchange> {
        let mut conn = self.connect()?;
        exchange_over(&mut conn, session_id(session_seed), preds, policy, self.max_payload)
    }

    /// Like [`DcClient::exchange`] but an empty set is an error.
    pub fn request_fair_set(&self, preds: &PredictionMatrix, policy: Policy, session_seed: u64) -> Result<Exchange> {
        let ex = self.exchange(preds, policy, session_seed)?;
        if ex.set.is_empty() {
            return Err(ProtocolError::NoFairHypotheses { m: ex.set.m });
        }
        Ok(ex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids_are_seeded() {
        assert_eq!(session_id(5), session_id(5));
        assert_ne!(session_id(5), session_id(6));
    }

    #[test]
    fn explicit_address_wins() {
        assert_eq!(resolve_addr(Some("127.0.0.1:1")).as_deref(), Some("127.0.0.1:1"));
    }

    #[test]
    fn connection_refused_after_retry() {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        drop(l);
        let mut c = DcClient::new(addr).unwrap();
        c.timeout = Duration::from_millis(200);
        let p = PredictionMatrix::new(nalgebra::DMatrix::zeros(1, 2)).unwrap();
        assert!(c.exchange(&p, Policy::Hard { rho: 1.0 }, 0).is_err());
    }
}
