//! Length-prefixed binary frames.
//!
//! `magic "DFL1" | kind u8 | session id [u8; 16] | payload length u32 LE | payload`

use std::fmt;
use std::io::{Read, Write};

use byteorder::{ByteOrder, LittleEndian as LE};

use crate::error::{ProtocolError, Result};

pub const MAGIC: &[u8; 4] = b"DFL1";
pub const HEADER_LEN: usize = 4 + 1 + 16 + 4;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

pub type SessionId = [u8; 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Hello = 1,
    Predictions = 2,
    FairIndices = 3,
    Error = 4,
    Bye = 5,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => FrameKind::Hello,
            2 => FrameKind::Predictions,
            3 => FrameKind::FairIndices,
            4 => FrameKind::Error,
            5 => FrameKind::Bye,
            _ => return None,
        })
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FrameKind::Hello => "HELLO",
            FrameKind::Predictions => "PREDICTIONS",
            FrameKind::FairIndices => "FAIR_INDICES",
            FrameKind::Error => "ERROR",
            FrameKind::Bye => "BYE",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub session: SessionId,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, session: SessionId, payload: Vec<u8>) -> Self {
        Self { kind, session, payload }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(ProtocolError::Malformed(format!("payload of {} bytes exceeds limit", self.payload.len())));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.session);
        let mut len = [0u8; 4];
        LE::write_u32(&mut len, self.payload.len() as u32);
        out.extend_from_slice(&len);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes one frame from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Malformed(format!("{} bytes is shorter than a header", bytes.len())));
        }
        let (kind, session, len) = parse_header(bytes[..HEADER_LEN].try_into().expect("header length"))?;
        let end = HEADER_LEN + len;
        if bytes.len() < end {
            return Err(ProtocolError::Malformed(format!("payload truncated ({} of {len} bytes)", bytes.len() - HEADER_LEN)));
        }
        Ok((Frame { kind, session, payload: bytes[HEADER_LEN..end].to_vec() }, end))
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(FrameKind, SessionId, usize)> {
    if &h[..4] != MAGIC {
        return Err(ProtocolError::Malformed(format!("bad magic {:?}", &h[..4])));
    }
    let kind = FrameKind::from_byte(h[4]).ok_or_else(|| ProtocolError::Malformed(format!("unknown kind {}", h[4])))?;
    let mut session = [0u8; 16];
    session.copy_from_slice(&h[5..21]);
    let len = LE::read_u32(&h[21..25]) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!("declared payload of {len} bytes exceeds limit")));
    }
    Ok((kind, session, len))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode()?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before any header
/// byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Malformed("stream ended inside a header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (kind, session, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ProtocolError::Malformed("stream ended inside a payload".into()),
        _ => e.into(),
    })?;
    Ok(Some(Frame { kind, session, payload }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let f = Frame::new(FrameKind::Error, [7; 16], b"oops".to_vec());
        let bytes = f.encode().unwrap();
        assert_eq!(&bytes[..4], b"DFL1");
        assert_eq!(bytes[4], 4);
        assert_eq!(&bytes[21..25], &[4, 0, 0, 0]);
        assert_eq!(Frame::decode(&bytes).unwrap(), (f.clone(), bytes.len()));
        let mut cur = &bytes[..];
        assert_eq!(read_frame(&mut cur).unwrap(), Some(f));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = Frame::new(FrameKind::Bye, [0; 16], vec![]).encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Frame::decode(&bytes), Err(ProtocolError::Malformed(_))));
        bytes[0] = b'D';
        bytes[4] = 9;
        assert!(Frame::decode(&bytes).is_err());
        bytes[4] = 5;
        bytes[21..25].copy_from_slice(&(MAX_PAYLOAD as u32 + 1).to_le_bytes());
        assert!(Frame::decode(&bytes).is_err());
        let mut short = &bytes[..10];
        assert!(read_frame(&mut short).is_err());
    }

    #[test]
    fn oversize_payload_is_refused() {
        let f = Frame::new(FrameKind::Predictions, [0; 16], vec![0; MAX_PAYLOAD + 1]);
        assert!(f.encode().is_err());
    }
}
