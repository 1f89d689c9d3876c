//! Typed payloads carried by frames.
//!
//! PREDICTIONS: `flags u8 (bit 0: more chunks follow) | policy u8 | threshold f64 |
//! m u32 | n u32 | row_offset u32 | row_count u32 | row_count·n f64`.
//! FAIR_INDICES: `policy u8 | threshold f64 | m u32 | k u32 | k u32 indices`.
//! ERROR: UTF-8 reason. HELLO and BYE carry no payload.

use byteorder::{ByteOrder, LittleEndian as LE};
use nalgebra::DMatrix;

use dfl_core::fairfilter::{FairIndexSet, Policy};
use dfl_core::hypothesis::PredictionMatrix;

use crate::error::{ProtocolError, Result};
use crate::frame::{Frame, FrameKind, SessionId, MAX_PAYLOAD};

pub const PREDICTIONS_HEADER_LEN: usize = 1 + 1 + 8 + 4 * 4;
pub const FAIR_INDICES_HEADER_LEN: usize = 1 + 8 + 4 + 4;
const FLAG_MORE: u8 = 1;
const POLICY_HARD: u8 = 0;
const POLICY_SOFT: u8 = 1;

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(ProtocolError::Malformed(msg.into()))
}

fn encode_policy(p: Policy) -> (u8, f64) {
    match p {
        Policy::Hard { rho } => (POLICY_HARD, rho),
        Policy::Soft { sigma2 } => (POLICY_SOFT, sigma2),
    }
}

fn decode_policy(code: u8, threshold: f64) -> Result<Policy> {
    match code {
        POLICY_HARD if threshold >= 0.0 => Ok(Policy::Hard { rho: threshold }),
        POLICY_SOFT if threshold > 0.0 && threshold.is_finite() => Ok(Policy::Soft { sigma2: threshold }),
        POLICY_HARD | POLICY_SOFT => malformed(format!("threshold {threshold} out of range")),
        c => malformed(format!("unknown policy {c}")),
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).or_else(|_| malformed(format!("{what} = {v} does not fit in u32")))
}

/// One slice of rows of a prediction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionsChunk {
    pub more: bool,
    pub policy: Policy,
    pub m: usize,
    pub n: usize,
    pub row_offset: usize,
    pub row_count: usize,
    /// Row-major, `row_count · n` values.
    pub values: Vec<f64>,
}

impl PredictionsChunk {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.values.len() != self.row_count * self.n {
            return malformed("chunk value count does not match its shape");
        }
        let mut out = vec![0u8; PREDICTIONS_HEADER_LEN + 8 * self.values.len()];
        let (code, threshold) = encode_policy(self.policy);
        out[0] = if self.more { FLAG_MORE } else { 0 };
        out[1] = code;
        LE::write_f64(&mut out[2..10], threshold);
        LE::write_u32(&mut out[10..14], to_u32(self.m, "m")?);
        LE::write_u32(&mut out[14..18], to_u32(self.n, "n")?);
        LE::write_u32(&mut out[18..22], to_u32(self.row_offset, "row_offset")?);
        LE::write_u32(&mut out[22..26], to_u32(self.row_count, "row_count")?);
        LE::write_f64_into(&self.values, &mut out[PREDICTIONS_HEADER_LEN..]);
        Ok(out)
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < PREDICTIONS_HEADER_LEN {
            return malformed("PREDICTIONS payload shorter than its header");
        }
        if b[0] & !FLAG_MORE != 0 {
            return malformed(format!("unknown flags {:#x}", b[0]));
        }
        let policy = decode_policy(b[1], LE::read_f64(&b[2..10]))?;
        let m = LE::read_u32(&b[10..14]) as usize;
        let n = LE::read_u32(&b[14..18]) as usize;
        let row_offset = LE::read_u32(&b[18..22]) as usize;
        let row_count = LE::read_u32(&b[22..26]) as usize;
        let body = &b[PREDICTIONS_HEADER_LEN..];
        if Some(body.len()) != row_count.checked_mul(n).and_then(|v| v.checked_mul(8)) {
            return malformed(format!("PREDICTIONS body has {} bytes for {row_count} rows of {n}", body.len()));
        }
        if row_offset.checked_add(row_count).is_none_or(|end| end > m) {
            return malformed(format!("rows {row_offset}+{row_count} exceed m = {m}"));
        }
        let mut values = vec![0.0; row_count * n];
        LE::read_f64_into(body, &mut values);
        Ok(Self { more: b[0] & FLAG_MORE != 0, policy, m, n, row_offset, row_count, values })
    }
}

/// Rows that fit in one frame for `n` columns.
pub fn rows_per_chunk(n: usize, max_payload: usize) -> Result<usize> {
    let per = max_payload.saturating_sub(PREDICTIONS_HEADER_LEN) / (8 * n.max(1));
    if per == 0 {
        return malformed(format!("a row of {n} predictions does not fit in one frame"));
    }
    Ok(per)
}

/// Splits a prediction matrix into chunks of at most `max_payload` bytes
/// each. An empty matrix yields a single empty chunk.
pub fn chunk_predictions(preds: &PredictionMatrix, policy: Policy, max_payload: usize) -> Result<Vec<PredictionsChunk>> {
    let (m, n) = (preds.m(), preds.n());
    let per = rows_per_chunk(n, max_payload.min(MAX_PAYLOAD))?;
    let mut chunks = Vec::new();
    let mut offset = 0;
    loop {
        let count = per.min(m - offset);
        let mut values = Vec::with_capacity(count * n);
        for t in offset..offset + count {
            values.extend(preds.values.row(t).iter());
        }
        offset += count;
        chunks.push(PredictionsChunk {
            more: offset < m,
            policy,
            m,
            n,
            row_offset: offset - count,
            row_count: count,
            values,
        });
        if offset >= m {
            return Ok(chunks);
        }
    }
}

/// Collects consecutive chunks back into one matrix.
#[derive(Debug, Default)]
pub struct Reassembler {
    head: Option<(Policy, usize, usize)>,
    next_row: usize,
    data: Vec<f64>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the matrix and its policy once the final chunk arrives.
    pub fn push(&mut self, c: PredictionsChunk) -> Result<Option<(PredictionMatrix, Policy)>> {
        let (policy, m, n) = *self.head.get_or_insert((c.policy, c.m, c.n));
        if c.policy != policy || c.m != m || c.n != n {
            return malformed("chunk header differs from the first chunk");
        }
        if c.row_offset != self.next_row {
            return malformed(format!("expected rows from {}, got {}", self.next_row, c.row_offset));
        }
        self.next_row += c.row_count;
        self.data.extend_from_slice(&c.values);
        if c.more {
            if self.next_row >= m && m > 0 {
                return malformed("continuation flag set after the last row");
            }
            return Ok(None);
        }
        if self.next_row != m {
            return malformed(format!("final chunk ends at row {} of {m}", self.next_row));
        }
        let data = std::mem::take(&mut self.data);
        *self = Self::default();
        let values = DMatrix::from_row_slice(m, n, &data);
        Ok(Some((PredictionMatrix::new(values)?, policy)))
    }
}

pub fn encode_fair_indices(set: &FairIndexSet) -> Result<Vec<u8>> {
    let k = set.indices.len();
    let mut out = vec![0u8; FAIR_INDICES_HEADER_LEN + 4 * k];
    let (code, threshold) = encode_policy(set.policy);
    out[0] = code;
    LE::write_f64(&mut out[1..9], threshold);
    LE::write_u32(&mut out[9..13], to_u32(set.m, "m")?);
    LE::write_u32(&mut out[13..17], to_u32(k, "k")?);
    for (i, &t) in set.indices.iter().enumerate() {
        let at = FAIR_INDICES_HEADER_LEN + 4 * i;
        LE::write_u32(&mut out[at..at + 4], to_u32(t, "index")?);
    }
    Ok(out)
}

/// Strict decoding: the length must match and indices must be strictly
/// increasing and below `m`.
pub fn decode_fair_indices(b: &[u8]) -> Result<FairIndexSet> {
    if b.len() < FAIR_INDICES_HEADER_LEN {
        return malformed("FAIR_INDICES payload shorter than its header");
    }
    let policy = decode_policy(b[0], LE::read_f64(&b[1..9]))?;
    let m = LE::read_u32(&b[9..13]) as usize;
    let k = LE::read_u32(&b[13..17]) as usize;
    if b.len() != FAIR_INDICES_HEADER_LEN + 4 * k {
        return malformed(format!("FAIR_INDICES has {} bytes for k = {k}", b.len()));
    }
    let indices: Vec<usize> = b[FAIR_INDICES_HEADER_LEN..].chunks_exact(4).map(|c| LE::read_u32(c) as usize).collect();
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return malformed("indices are not strictly increasing");
    }
    if indices.last().is_some_and(|&t| t >= m) {
        return malformed(format!("index out of range for m = {m}"));
    }
    Ok(FairIndexSet { indices, policy, m })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello,
    Predictions(PredictionsChunk),
    FairIndices(FairIndexSet),
    Error(String),
    Bye,
}

impl Message {
    pub fn kind(&self) -> FrameKind {
        match self {
            Message::Hello => FrameKind::Hello,
            Message::Predictions(_) => FrameKind::Predictions,
            Message::FairIndices(_) => FrameKind::FairIndices,
            Message::Error(_) => FrameKind::Error,
            Message::Bye => FrameKind::Bye,
        }
    }

    pub fn to_frame(&self, session: SessionId) -> Result<Frame> {
        let payload = match self {
            Message::Hello | Message::Bye => Vec::new(),
            Message::Predictions(c) => c.encode()?,
            Message::FairIndices(s) => encode_fair_indices(s)?,
            Message::Error(reason) => reason.as_bytes().to_vec(),
        };
        Ok(Frame::new(self.kind(), session, payload))
    }

    pub fn from_frame(f: &Frame) -> Result<Self> {
        Ok(match f.kind {
            FrameKind::Hello | FrameKind::Bye if !f.payload.is_empty() => {
                return malformed(format!("{} frame with a payload", f.kind));
            }
            FrameKind::Hello => Message::Hello,
            FrameKind::Bye => Message::Bye,
            FrameKind::Predictions => Message::Predictions(PredictionsChunk::decode(&f.payload)?),
            FrameKind::FairIndices => Message::FairIndices(decode_fair_indices(&f.payload)?),
            FrameKind::Error => Message::Error(
                String::from_utf8(f.payload.clone()).or_else(|_| malformed("ERROR reason is not UTF-8"))?,
            ),
        })
    }
}
