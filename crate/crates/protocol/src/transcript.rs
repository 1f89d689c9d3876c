//! Recorded frame exchanges, persisted as the raw frame stream plus a
//! sidecar index (`direction offset length timestamp_us` per line).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{ProtocolError, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    DcToTp,
    TpToDc,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::DcToTp => "dc>tp",
            Direction::TpToDc => "tp>dc",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "dc>tp" => Some(Direction::DcToTp),
            "tp>dc" => Some(Direction::TpToDc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub direction: Direction,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    pub bytes: Vec<u8>,
}

/// Append-only log of raw frames.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<Entry>,
}

fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, direction: Direction, bytes: Vec<u8>) {
        self.entries.push(Entry { direction, timestamp_us: now_us(), bytes });
    }

    pub fn record_frame(&mut self, direction: Direction, frame: &Frame) -> Result<()> {
        self.record(direction, frame.encode()?);
        Ok(())
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenated raw bytes of every frame sent in `direction`.
    pub fn stream(&self, direction: Direction) -> Vec<u8> {
        self.entries.iter().filter(|e| e.direction == direction).flat_map(|e| e.bytes.iter().copied()).collect()
    }

    /// Raw frames in order, without timestamps.
    pub fn frame_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|e| e.bytes.iter().copied()).collect()
    }

    /// Writes `<stem>.frames` and `<stem>.idx`; returns both paths.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let frames = dir.as_ref().join(format!("{stem}.frames"));
        let index = dir.as_ref().join(format!("{stem}.idx"));
        let mut idx = String::new();
        let mut offset = 0usize;
        for e in &self.entries {
            idx.push_str(&format!("{} {} {} {}\n", e.direction.tag(), offset, e.bytes.len(), e.timestamp_us));
            offset += e.bytes.len();
        }
        fs::write(&frames, self.frame_bytes())?;
        fs::write(&index, idx)?;
        Ok((frames, index))
    }

    pub fn load(frames: impl AsRef<Path>, index: impl AsRef<Path>) -> Result<Self> {
        let raw = fs::read(frames)?;
        let idx = fs::read_to_string(index)?;
        let bad = |line: usize| ProtocolError::Malformed(format!("transcript index line {line}"));
        let mut entries = Vec::new();
        let mut expected = 0usize;
        for (i, line) in idx.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            let direction = Direction::parse(f[0]).ok_or_else(|| bad(i + 1))?;
            let offset: usize = f[1].parse().map_err(|_| bad(i + 1))?;
            let len: usize = f[2].parse().map_err(|_| bad(i + 1))?;
            let timestamp_us: u64 = f[3].parse().map_err(|_| bad(i + 1))?;
            if offset != expected || offset + len > raw.len() {
                return Err(bad(i + 1));
            }
            expected += len;
            entries.push(Entry { direction, timestamp_us, bytes: raw[offset..offset + len].to_vec() });
        }
        if expected != raw.len() {
            return Err(ProtocolError::Malformed("frame stream has unindexed bytes".into()));
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameKind;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Transcript::new();
        t.record_frame(Direction::DcToTp, &Frame::new(FrameKind::Hello, [1; 16], vec![])).unwrap();
        t.record_frame(Direction::TpToDc, &Frame::new(FrameKind::Error, [1; 16], b"no".to_vec())).unwrap();
        let (f, i) = t.save(dir.path(), "session").unwrap();
        assert_eq!(Transcript::load(&f, &i).unwrap(), t);
        assert_eq!(t.stream(Direction::TpToDc).len(), 27);
        std::fs::write(&f, b"short").unwrap();
        assert!(Transcript::load(&f, &i).is_err());
    }
}
