//! In-memory duplex byte stream with the same semantics as a socket.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

pub struct MemoryStream {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
    timeout: Option<Duration>,
}

/// Two connected endpoints; bytes written to one are read from the other.
pub fn memory_pair() -> (MemoryStream, MemoryStream) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let mk = |tx, rx| MemoryStream { tx: Some(tx), rx, buf: Vec::new(), pos: 0, timeout: None };
    (mk(a_tx, a_rx), mk(b_tx, b_rx))
}

impl MemoryStream {
    pub fn set_read_timeout(&mut self, t: Option<Duration>) {
        self.timeout = t;
    }

    /// Half-closes the write side; the peer then reads end of stream.
    pub fn shutdown_write(&mut self) {
        self.tx = None;
    }
}

impl Read for MemoryStream {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos >= self.buf.len() {
            let next = match self.timeout {
                Some(t) => match self.rx.recv_timeout(t) {
                    Ok(b) => Some(b),
                    Err(RecvTimeoutError::Timeout) => return Err(io::ErrorKind::TimedOut.into()),
                    Err(RecvTimeoutError::Disconnected) => None,
                },
                None => self.rx.recv().ok(),
            };
            match next {
                Some(b) => {
                    self.buf = b;
                    self.pos = 0;
                }
                None => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for MemoryStream {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let tx = self.tx.as_ref().ok_or(io::ErrorKind::BrokenPipe)?;
        tx.send(data.to_vec()).map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
