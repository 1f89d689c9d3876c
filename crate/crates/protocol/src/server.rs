//! Third-party service: holds `s`, answers PREDICTIONS with FAIR_INDICES.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use dfl_core::fairfilter::{apply_policy, FairIndexSet};

use crate::error::{ProtocolError, Result};
use crate::frame::{read_frame, write_frame, Frame, FrameKind, SessionId};
use crate::message::{Message, Reassembler};
use crate::transcript::{Direction, Transcript};
use crate::transport::memory_pair;

/// Per-connection read timeout on the service side.
pub const SESSION_TIMEOUT: Duration = Duration::from_secs(30);

/// How a session ended.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    /// Client said BYE or closed the stream; carries the sets returned.
    Completed(Vec<FairIndexSet>),
    /// An ERROR frame was sent and the session closed.
    Rejected(String),
}

#[derive(Debug, Clone)]
struct Cohort {
    s: Vec<f64>,
    seed: u64,
}

impl Cohort {
    fn new(s: &[u8], seed: u64) -> Self {
        Self { s: s.iter().map(|&v| v as f64).collect(), seed }
    }
}

/// The third party's state: its sensitive vector (or one per registered
/// session, when the two parties agree on per-session cohorts in advance)
/// and the seed of its soft-policy draws.
#[derive(Debug, Clone)]
pub struct ThirdParty {
    default: Option<Cohort>,
    sessions: HashMap<SessionId, Cohort>,
    /// Runs the filter; separate from the global rayon pool.
    pool: Arc<rayon::ThreadPool>,
}

fn filter_pool() -> Arc<rayon::ThreadPool> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    Arc::new(
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("dfl-tp-{i}"))
            .build()
            .expect("spawning filter threads"),
    )
}

impl ThirdParty {
    /// One sensitive vector for every session.
    pub fn new(s: &[u8], seed: u64) -> Self {
        Self { default: Some(Cohort::new(s, seed)), sessions: HashMap::new(), pool: filter_pool() }
    }

    /// Sessions are only served when their id was registered.
    pub fn with_sessions<'a>(cohorts: impl IntoIterator<Item = (SessionId, &'a [u8], u64)>) -> Self {
        let sessions = cohorts.into_iter().map(|(id, s, seed)| (id, Cohort::new(s, seed))).collect();
        Self { default: None, sessions, pool: filter_pool() }
    }

    fn cohort(&self, session: &SessionId) -> Option<&Cohort> {
        self.sessions.get(session).or(self.default.as_ref())
    }

    /// Serves one session over any byte stream until BYE or until the
    /// stream ends or fails.
    pub fn handle_session<S: Read + Write>(&self, stream: &mut S) -> Result<SessionOutcome> {
        let mut session: SessionId = [0; 16];
        let mut asm = Reassembler::new();
        let mut returned = Vec::new();
        let mut cohort: Option<&Cohort> = None;
        loop {
            let frame = match read_frame(stream) {
                Ok(Some(f)) => f,
                Ok(None) => return Ok(SessionOutcome::Completed(returned)),
                Err(ProtocolError::Malformed(reason)) => return self.reject(stream, session, reason),
                Err(e) => return Err(e),
            };
            if cohort.is_none() {
                session = frame.session;
                cohort = self.cohort(&session);
                if cohort.is_none() {
                    return self.reject(stream, session, "unknown session".into());
                }
            } else if frame.session != session {
                return self.reject(stream, session, "session id changed mid-session".into());
            }
            let Cohort { s, seed } = cohort.expect("set above");
            let msg = match Message::from_frame(&frame) {
                Ok(m) => m,
                Err(e) => return self.reject(stream, session, e.to_string()),
            };
            match msg {
                Message::Hello => {}
                Message::Bye => return Ok(SessionOutcome::Completed(returned)),
                Message::Predictions(chunk) => {
                    if chunk.n != s.len() {
                        let reason = format!("length mismatch: n = {} but |s| = {}", chunk.n, s.len());
                        return self.reject(stream, session, reason);
                    }
                    let done = match asm.push(chunk) {
                        Ok(d) => d,
                        Err(e) => return self.reject(stream, session, e.to_string()),
                    };
                    if let Some((preds, policy)) = done {
                        let set = match self.pool.install(|| apply_policy(&preds, s, policy, *seed)) {
                            Ok(s) => s,
                            Err(e) => return self.reject(stream, session, e.to_string()),
                        };
                        write_frame(stream, &Message::FairIndices(set.clone()).to_frame(session)?)?;
                        returned.push(set);
                    }
                }
                other => {
                    return self.reject(stream, session, format!("unexpected {} frame from client", other.kind()));
                }
            }
        }
    }

    /// Re-runs the DC side of a recorded transcript against this service
    /// and returns the raw bytes it replies with.
    pub fn replay(&self, t: &Transcript) -> Result<Vec<u8>> {
        let (mut dc, mut srv) = memory_pair();
        dc.write_all(&t.stream(Direction::DcToTp))?;
        dc.shutdown_write();
        self.handle_session(&mut srv)?;
        drop(srv);
        let mut out = Vec::new();
        dc.read_to_end(&mut out)?;
        Ok(out)
    }

    fn reject<S: Write>(&self, stream: &mut S, session: SessionId, reason: String) -> Result<SessionOutcome> {
        // the peer may already be gone; the outcome is the same
        let _ = write_frame(stream, &Frame::new(FrameKind::Error, session, reason.clone().into_bytes()));
        Ok(SessionOutcome::Rejected(reason))
    }

    fn serve_connection(&self, mut conn: TcpStream) {
        let _ = conn.set_read_timeout(Some(SESSION_TIMEOUT));
        let _ = conn.set_write_timeout(Some(SESSION_TIMEOUT));
        let _ = conn.set_nodelay(true);
        let _ = self.handle_session(&mut conn);
        let _ = conn.shutdown(std::net::Shutdown::Both);
    }

    /// Blocks forever, handling connections one at a time in arrival order.
    pub fn serve_forever(&self, listener: TcpListener) -> Result<()> {
        for conn in listener.incoming() {
            self.serve_connection(conn?);
        }
        Ok(())
    }
}

/// A service running on a background thread.
pub struct TpHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TpHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TpHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_and_join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves sessions
/// sequentially on a background thread.
pub fn tp_serve(tp: ThirdParty, addr: impl ToSocketAddrs) -> Result<TpHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            if let Ok(c) = conn {
                tp.serve_connection(c);
            }
        }
    });
    Ok(TpHandle { addr: local, stop, thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{chunk_predictions, decode_fair_indices};
    use dfl_core::fairfilter::Policy;
    use dfl_core::hypothesis::PredictionMatrix;
    use nalgebra::DMatrix;

    /// Rows with covariances 0.05, -0.2, 0.1 against s = (1, 0, 1, 0).
    fn rows() -> (PredictionMatrix, Vec<u8>) {
        let s = vec![1, 0, 1, 0];
        let preds = DMatrix::from_row_slice(3, 4, &[0.2, 0.0, 0.2, 0.0, -0.8, 0.0, -0.8, 0.0, 0.4, 0.0, 0.4, 0.0]);
        (PredictionMatrix::new(preds).unwrap(), s)
    }

    fn exchange(tp: &ThirdParty, frames: Vec<Frame>) -> (SessionOutcome, Vec<Frame>) {
        let (mut dc, mut srv) = memory_pair();
        for f in &frames {
            write_frame(&mut dc, f).unwrap();
        }
        dc.shutdown_write();
        let out = tp.handle_session(&mut srv).unwrap();
        drop(srv);
        let mut replies = Vec::new();
        while let Some(f) = read_frame(&mut dc).unwrap() {
            replies.push(f);
        }
        (out, replies)
    }

    fn request(preds: &PredictionMatrix, policy: Policy) -> Vec<Frame> {
        let mut frames = vec![Message::Hello.to_frame([3; 16]).unwrap()];
        for c in chunk_predictions(preds, policy, 1 << 20).unwrap() {
            frames.push(Message::Predictions(c).to_frame([3; 16]).unwrap());
        }
        frames.push(Message::Bye.to_frame([3; 16]).unwrap());
        frames
    }

    #[test]
    fn hard_policy_example() {
        let (p, s) = rows();
        let tp = ThirdParty::new(&s, 1);
        let (out, replies) = exchange(&tp, request(&p, Policy::Hard { rho: 0.1 }));
        assert_eq!(replies.len(), 1);
        let set = decode_fair_indices(&replies[0].payload).unwrap();
        assert_eq!(set.indices, vec![0, 2]);
        assert_eq!(replies[0].session, [3; 16]);
        assert!(matches!(out, SessionOutcome::Completed(v) if v.len() == 1));
        let (_, all) = exchange(&tp, request(&p, Policy::Hard { rho: f64::INFINITY }));
        assert_eq!(decode_fair_indices(&all[0].payload).unwrap().indices, vec![0, 1, 2]);
    }

    #[test]
    fn length_mismatch_and_bad_magic() {
        let (p, _) = rows();
        let tp = ThirdParty::new(&[1, 0, 1], 1);
        let (out, replies) = exchange(&tp, request(&p, Policy::Hard { rho: 0.1 }));
        assert!(matches!(out, SessionOutcome::Rejected(ref r) if r.starts_with("length mismatch")));
        assert_eq!(replies[0].kind, FrameKind::Error);

        let mut bad = Message::Hello.to_frame([0; 16]).unwrap().encode().unwrap();
        bad[0] = b'Z';
        let (mut dc, mut srv) = memory_pair();
        dc.write_all(&bad).unwrap();
        let out = tp.handle_session(&mut srv).unwrap();
        assert!(matches!(out, SessionOutcome::Rejected(_)));
        drop(srv);
        let reply = read_frame(&mut dc).unwrap().unwrap();
        assert_eq!(reply.kind, FrameKind::Error);
        assert!(read_frame(&mut dc).unwrap().is_none());
    }

    #[test]
    fn registered_sessions_only() {
        let (p, s) = rows();
        let tp = ThirdParty::with_sessions([([3u8; 16], &s[..], 1)]);
        let (_, replies) = exchange(&tp, request(&p, Policy::Hard { rho: 0.1 }));
        assert_eq!(replies[0].kind, FrameKind::FairIndices);
        let mut frames = request(&p, Policy::Hard { rho: 0.1 });
        for f in &mut frames {
            f.session = [4; 16];
        }
        let (out, _) = exchange(&tp, frames);
        assert_eq!(out, SessionOutcome::Rejected("unknown session".into()));
    }

    #[test]
    fn unexpected_kind_from_client() {
        let (_, s) = rows();
        let tp = ThirdParty::new(&s, 1);
        let f = Message::Error("x".into()).to_frame([0; 16]).unwrap();
        let (out, _) = exchange(&tp, vec![f]);
        assert!(matches!(out, SessionOutcome::Rejected(_)));
    }
}
