//! Encoding-level leakage checks over a recorded transcript.
//!
//! (a) every third-party frame decodes exactly to FAIR_INDICES or ERROR,
//! with no extra bytes; (b) every data-center frame is HELLO, PREDICTIONS or
//! BYE and decodes exactly; (c) no serialized copy of `s`, a column of `X`,
//! or `Y` appears anywhere in either byte stream.

use std::fmt;

use nalgebra::DMatrix;

use crate::frame::{Frame, FrameKind};
use crate::message::Message;
use crate::transcript::{Direction, Transcript};

/// ERROR reasons longer than this are treated as a side channel.
pub const MAX_ERROR_REASON: usize = 1024;
/// Byte-valued encodings of `s` are only searched for from this length on.
pub const MIN_BYTE_PATTERN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckResult {
    pub findings: Vec<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub frames: usize,
    pub tp_payload: CheckResult,
    pub dc_payload: CheckResult,
    pub byte_scan: CheckResult,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.tp_payload.passed() && self.dc_payload.passed() && self.byte_scan.passed()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |c: &CheckResult| if c.passed() { "pass".to_string() } else { format!("FAIL ({})", c.findings.join("; ")) };
        writeln!(f, "frames audited: {}", self.frames)?;
        writeln!(f, "(a) third-party payloads: {}", line(&self.tp_payload))?;
        writeln!(f, "(b) data-center payloads: {}", line(&self.dc_payload))?;
        write!(f, "(c) byte scan: {}", line(&self.byte_scan))
    }
}

fn decode_exact(bytes: &[u8]) -> Result<Frame, String> {
    let (frame, used) = Frame::decode(bytes).map_err(|e| e.to_string())?;
    if used != bytes.len() {
        return Err(format!("{} bytes after the frame", bytes.len() - used));
    }
    Ok(frame)
}

fn check_tp(i: usize, bytes: &[u8]) -> Option<String> {
    let frame = match decode_exact(bytes) {
        Ok(f) => f,
        Err(e) => return Some(format!("frame {i}: {e}")),
    };
    match frame.kind {
        FrameKind::FairIndices => Message::from_frame(&frame).err().map(|e| format!("frame {i}: {e}")),
        FrameKind::Error if frame.payload.len() > MAX_ERROR_REASON => {
            Some(format!("frame {i}: ERROR reason of {} bytes", frame.payload.len()))
        }
        FrameKind::Error => Message::from_frame(&frame).err().map(|e| format!("frame {i}: {e}")),
        k => Some(format!("frame {i}: third party sent {k}")),
    }
}

fn check_dc(i: usize, bytes: &[u8]) -> Option<String> {
    let frame = match decode_exact(bytes) {
        Ok(f) => f,
        Err(e) => return Some(format!("frame {i}: {e}")),
    };
    match frame.kind {
        FrameKind::Hello | FrameKind::Predictions | FrameKind::Bye => {
            Message::from_frame(&frame).err().map(|e| format!("frame {i}: {e}"))
        }
        k => Some(format!("frame {i}: data center sent {k}")),
    }
}

fn f64_bytes(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
    v.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn f32_bytes(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
    v.into_iter().flat_map(|x| (x as f32).to_le_bytes()).collect()
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.len() >= needle.len() && hay.windows(needle.len()).any(|w| w == needle)
}

fn patterns(s: &[u8], x: &DMatrix<f64>, y: &[f64]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let sf = || s.iter().map(|&v| v as f64);
    let sc = || s.iter().map(|&v| 1.0 - v as f64);
    out.push(("s as f64".into(), f64_bytes(sf())));
    out.push(("1-s as f64".into(), f64_bytes(sc())));
    out.push(("s as f32".into(), f32_bytes(sf())));
    out.push(("s as u32".into(), s.iter().flat_map(|&v| (v as u32).to_le_bytes()).collect()));
    if s.len() >= MIN_BYTE_PATTERN {
        out.push(("s as u8".into(), s.to_vec()));
        out.push(("1-s as u8".into(), s.iter().map(|&v| 1 - v.min(1)).collect()));
    }
    for (j, col) in x.column_iter().enumerate() {
        out.push((format!("X column {j} as f64"), f64_bytes(col.iter().copied())));
    }
    out.push(("Y as f64".into(), f64_bytes(y.iter().copied())));
    out.push(("Y as f32".into(), f32_bytes(y.iter().copied())));
    out
}

/// Runs all three checks. `x` holds the rows the predictions were computed
/// on, aligned with `s` and `y`.
pub fn audit_transcript(t: &Transcript, s: &[u8], x: &DMatrix<f64>, y: &[f64]) -> AuditReport {
    let mut tp_payload = CheckResult::default();
    let mut dc_payload = CheckResult::default();
    for (i, e) in t.entries().iter().enumerate() {
        let finding = match e.direction {
            Direction::TpToDc => check_tp(i, &e.bytes).map(|f| (&mut tp_payload, f)),
            Direction::DcToTp => check_dc(i, &e.bytes).map(|f| (&mut dc_payload, f)),
        };
        if let Some((check, f)) = finding {
            check.findings.push(f);
        }
    }

    let mut byte_scan = CheckResult::default();
    let streams = [(Direction::DcToTp, "dc>tp"), (Direction::TpToDc, "tp>dc")];
    let pats = patterns(s, x, y);
    for (dir, name) in streams {
        let hay = t.stream(dir);
        for (what, pat) in &pats {
            if contains(&hay, pat) {
                byte_scan.findings.push(format!("{what} found in {name} stream"));
            }
        }
    }
    AuditReport { frames: t.len(), tp_payload, dc_payload, byte_scan }
}
