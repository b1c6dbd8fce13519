//! Framed stdin/stdout protocol for out-of-process patch transforms.
//!
//! Every frame is a 4-byte big-endian payload length followed by the payload.
//! The host opens a session by sending one handshake frame holding the UTF-8
//! JSON `{"patch": n, "version": 1}`; the child answers with a handshake frame
//! of its own (echoing it back is valid). After that each request frame is a
//! PNG-encoded 8-bit RGB patch and the child answers with exactly one PNG
//! frame of the same size, in order.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::ExternalSpec;
use crate::error::{Error, Result};
use crate::io::{decode_png, encode_png};
use crate::patchgrid::PatchRecord;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub patch: usize,
    pub version: u32,
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(ErrorKind::InvalidInput, "frame payload exceeds 4 GiB"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before a new
/// frame; EOF inside a frame is an `UnexpectedEof` error.
pub fn read_frame<R: Read>(r: &mut R, max_len: usize) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(io::Error::new(ErrorKind::UnexpectedEof, "stream ended inside a frame header"))
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > max_len {
        return Err(io::Error::new(
            ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit {max_len}"),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            io::Error::new(ErrorKind::UnexpectedEof, format!("stream ended inside a {len}-byte frame"))
        } else {
            e
        }
    })?;
    Ok(Some(payload))
}

/// A running child process and the threads pumping its pipes.
pub struct ExternalSession {
    child: Child,
    requests: Option<Sender<Vec<u8>>>,
    responses: Receiver<std::result::Result<Vec<u8>, String>>,
    writer: Option<JoinHandle<()>>,
    timeout: Duration,
    patch: usize,
    broken: Option<String>,
}

impl ExternalSession {
    /// Starts the child and completes the handshake for `patch x patch` tiles.
    pub fn spawn(spec: &ExternalSpec, patch: usize) -> Result<Self> {
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| Error::config("external backend command is empty"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (req_tx, req_rx) = mpsc::channel::<Vec<u8>>();
        let writer = thread::spawn(move || {
            let mut w = BufWriter::new(stdin);
            for frame in req_rx {
                if write_frame(&mut w, &frame).is_err() {
                    break;
                }
            }
        });

        let (resp_tx, resp_rx) = mpsc::channel();
        let max = spec.max_frame_bytes;
        thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let msg = match read_frame(&mut r, max) {
                    Ok(Some(frame)) => Ok(frame),
                    Ok(None) => Err("child closed its stdout".to_string()),
                    Err(e) => Err(format!("malformed frame: {e}")),
                };
                let stop = msg.is_err();
                if resp_tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });

        let mut session = ExternalSession {
            child,
            requests: Some(req_tx),
            responses: resp_rx,
            writer: Some(writer),
            timeout: Duration::from_secs_f64(spec.timeout_secs),
            patch,
            broken: None,
        };
        session.handshake()?;
        Ok(session)
    }

    fn handshake(&mut self) -> Result<()> {
        let hello = Handshake { patch: self.patch, version: PROTOCOL_VERSION };
        let payload = serde_json::to_vec(&hello).expect("handshake serializes");
        let reply = self
            .round_trip(payload)
            .map_err(|m| Error::Protocol(format!("handshake failed: {m}")))?;
        let answer: Handshake = serde_json::from_slice(&reply).map_err(|e| {
            self.poison(format!("bad handshake reply: {e}"));
            Error::Protocol(format!("handshake reply is not valid JSON: {e}"))
        })?;
        if answer.version != PROTOCOL_VERSION || answer.patch != self.patch {
            let msg = format!("child answered handshake with {answer:?}, expected {hello:?}");
            self.poison(msg.clone());
            return Err(Error::Protocol(msg));
        }
        Ok(())
    }

    fn poison(&mut self, why: String) {
        if self.broken.is_none() {
            self.broken = Some(why);
        }
        let _ = self.child.kill();
    }

    fn round_trip(&mut self, payload: Vec<u8>) -> std::result::Result<Vec<u8>, String> {
        if let Some(why) = &self.broken {
            return Err(format!("session unusable: {why}"));
        }
        let sent = self.requests.as_ref().map(|tx| tx.send(payload).is_ok()).unwrap_or(false);
        if !sent {
            self.poison("request pipe closed".into());
            return Err("request pipe closed".into());
        }
        match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(msg)) => {
                self.poison(msg.clone());
                Err(msg)
            }
            Err(RecvTimeoutError::Timeout) => {
                let msg = format!("no response within {:.1} s", self.timeout.as_secs_f64());
                self.poison(msg.clone());
                Err(msg)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.poison("response pipe closed".into());
                Err("response pipe closed".into())
            }
        }
    }

    /// Sends one patch and waits for its transformed counterpart.
    pub fn transform(&mut self, p: &PatchRecord) -> Result<PatchRecord> {
        let backend_err = |message: String| Error::Backend { origin: p.origin, message };
        let payload = encode_png(&p.pixels).map_err(|e| backend_err(e.to_string()))?;
        let reply = self.round_trip(payload).map_err(backend_err)?;
        let pixels = match decode_png(&reply) {
            Ok(px) => px,
            Err(e) => {
                self.poison(e.to_string());
                return Err(backend_err(e.to_string()));
            }
        };
        if pixels.dims() != p.pixels.dims() {
            let msg = format!(
                "dimension mismatch: sent {}x{}, received {}x{}",
                p.pixels.height(),
                p.pixels.width(),
                pixels.height(),
                pixels.width()
            );
            self.poison(msg.clone());
            return Err(backend_err(msg));
        }
        Ok(PatchRecord { origin: p.origin, pixels })
    }

    /// Closes the child's stdin and waits for it to exit.
    pub fn close(mut self) -> Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<()> {
        self.requests.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let deadline = Instant::now() + self.timeout.min(Duration::from_secs(5));
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) if status.success() || self.broken.is_some() => return Ok(()),
                Ok(Some(status)) => {
                    return Err(Error::Protocol(format!("external backend exited with {status}")))
                }
                Ok(None) if Instant::now() >= deadline => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return Err(Error::Protocol("external backend did not exit after stdin closed".into()));
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(Error::Protocol(format!("waiting for child: {e}"))),
            }
        }
    }
}

impl Drop for ExternalSession {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = self.shutdown();
        }
    }
}

/// Pushes `patches` through one session, preserving order.
pub fn run_external(session: &mut ExternalSession, patches: &[PatchRecord]) -> Result<Vec<PatchRecord>> {
    patches.iter().map(|p| session.transform(p)).collect()
}

/// Child-side helper: reads the handshake, echoes it, then maps every
/// incoming patch through `f` until stdin closes.
pub fn serve<R: Read, W: Write>(
    input: R,
    output: W,
    mut f: impl FnMut(crate::image::PlanarImage) -> Result<crate::image::PlanarImage>,
) -> Result<()> {
    let mut r = BufReader::new(input);
    let mut w = BufWriter::new(output);
    let io_err = |e: io::Error| Error::Protocol(e.to_string());
    let hello = read_frame(&mut r, usize::MAX)
        .map_err(io_err)?
        .ok_or_else(|| Error::Protocol("stdin closed before handshake".into()))?;
    let hs: Handshake = serde_json::from_slice(&hello)
        .map_err(|e| Error::Protocol(format!("bad handshake: {e}")))?;
    if hs.version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {}", hs.version)));
    }
    write_frame(&mut w, &hello).map_err(io_err)?;
    while let Some(frame) = read_frame(&mut r, usize::MAX).map_err(io_err)? {
        let out = f(decode_png(&frame)?)?;
        write_frame(&mut w, &encode_png(&out)?).map_err(io_err)?;
    }
    Ok(())
}
