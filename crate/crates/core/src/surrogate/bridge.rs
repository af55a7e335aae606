//! Client side of the external-surrogate protocol.
//!
//! The worker reads one JSON request per line on stdin and answers with one
//! JSON object per line on stdout:
//!
//! ```text
//! -> {"op":"hello","version":1}                      <- {"ok":true}
//! -> {"op":"fit","rows":[{"encoding":"...","target":0.73}]}
//!                                                     <- {"ok":true}
//! -> {"op":"predict","encodings":["..."]}             <- {"ok":true,"predictions":[0.61]}
//! -> {"op":"shutdown"}                                <- {"ok":true}
//! ```
//!
//! Failures are reported as `{"ok":false,"error":"..."}`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

const STDERR_CAP: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeTimeouts {
    pub hello_secs: u64,
    pub fit_secs: u64,
    pub predict_secs: u64,
}

impl Default for BridgeTimeouts {
    fn default() -> Self {
        BridgeTimeouts {
            hello_secs: 60,
            fit_secs: 600,
            predict_secs: 60,
        }
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to start worker `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("worker reported an error: {0}")]
    Worker(String),
    #[error("worker exited unexpectedly{}", fmt_diagnostics(.diagnostics))]
    Crashed { diagnostics: String },
    #[error("worker did not answer `{op}` within {secs} s")]
    Timeout { op: &'static str, secs: u64 },
    #[error("connection is unusable after an earlier failure")]
    Broken,
}

fn fmt_diagnostics(d: &str) -> String {
    if d.trim().is_empty() {
        String::new()
    } else {
        format!(": {}", d.trim())
    }
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request<'a> {
    Hello { version: u32 },
    Fit { rows: Vec<FitRow<'a>> },
    Predict { encodings: &'a [String] },
    Shutdown,
}

#[derive(Serialize)]
struct FitRow<'a> {
    encoding: &'a str,
    target: f64,
}

#[derive(Deserialize)]
struct Response {
    ok: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    predictions: Option<Vec<f64>>,
    #[serde(default)]
    version: Option<u32>,
}

/// A handshaken connection to one worker. Requests are strictly serial.
pub struct BridgeClient {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    stderr: Option<Arc<Mutex<String>>>,
    timeouts: BridgeTimeouts,
    broken: bool,
    closed: bool,
}

impl BridgeClient {
    /// Spawns `command` (program followed by arguments) and performs the handshake.
    pub fn spawn(command: &[String], timeouts: BridgeTimeouts) -> Result<Self, BridgeError> {
        let display = command.join(" ");
        let (program, args) = command.split_first().ok_or_else(|| BridgeError::Spawn {
            command: display.clone(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: display,
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_buf = Arc::new(Mutex::new(String::new()));
        if let Some(mut stderr) = child.stderr.take() {
            let buf = Arc::clone(&stderr_buf);
            thread::spawn(move || {
                let mut chunk = [0u8; 4096];
                while let Ok(n) = stderr.read(&mut chunk) {
                    if n == 0 {
                        break;
                    }
                    let mut b = buf.lock().unwrap();
                    if b.len() < STDERR_CAP {
                        b.push_str(&String::from_utf8_lossy(&chunk[..n]));
                    }
                }
            });
        }
        let mut client = Self::connect(stdout, stdin, timeouts);
        client.child = Some(child);
        client.stderr = Some(stderr_buf);
        client.handshake()?;
        Ok(client)
    }

    /// Uses an existing pair of streams (e.g. pipes to an in-process worker).
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeouts: BridgeTimeouts,
    ) -> Result<Self, BridgeError> {
        let mut client = Self::connect(reader, writer, timeouts);
        client.handshake()?;
        Ok(client)
    }

    fn connect(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeouts: BridgeTimeouts,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        BridgeClient {
            writer: Box::new(writer),
            lines: rx,
            child: None,
            stderr: None,
            timeouts,
            broken: false,
            closed: false,
        }
    }

    fn handshake(&mut self) -> Result<(), BridgeError> {
        let resp = self.request(
            &Request::Hello {
                version: PROTOCOL_VERSION,
            },
            "hello",
            self.timeouts.hello_secs,
        )?;
        match resp.version {
            Some(v) if v != PROTOCOL_VERSION => {
                self.broken = true;
                Err(BridgeError::Protocol(format!(
                    "worker speaks version {v}, expected {PROTOCOL_VERSION}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn diagnostics(&mut self) -> String {
        let mut out = String::new();
        if let Some(child) = self.child.as_mut() {
            let deadline = Instant::now() + Duration::from_millis(500);
            loop {
                match child.try_wait() {
                    Ok(Some(status)) => {
                        out.push_str(&format!("{status}"));
                        break;
                    }
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => break,
                }
            }
            // give the stderr reader a moment to drain
            thread::sleep(Duration::from_millis(20));
        }
        if let Some(buf) = &self.stderr {
            let err = buf.lock().unwrap();
            if !err.trim().is_empty() {
                if !out.is_empty() {
                    out.push_str("; ");
                }
                out.push_str("stderr: ");
                out.push_str(err.trim());
            }
        }
        out
    }

    fn request(&mut self, req: &Request<'_>, op: &'static str, timeout_secs: u64) -> Result<Response, BridgeError> {
        if self.broken {
            return Err(BridgeError::Broken);
        }
        let mut line = serde_json::to_string(req).expect("requests serialize");
        line.push('\n');
        if self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .is_err()
        {
            self.broken = true;
            return Err(BridgeError::Crashed {
                diagnostics: self.diagnostics(),
            });
        }
        let received = self.lines.recv_timeout(Duration::from_secs(timeout_secs));
        let text = match received {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => {
                self.broken = true;
                return Err(BridgeError::Protocol(format!("reading response: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                return Err(BridgeError::Timeout { op, secs: timeout_secs });
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                return Err(BridgeError::Crashed {
                    diagnostics: self.diagnostics(),
                });
            }
        };
        let resp: Response = serde_json::from_str(&text).map_err(|e| {
            self.broken = true;
            BridgeError::Protocol(format!("malformed response to `{op}`: {e}: {text}"))
        })?;
        if !resp.ok {
            return Err(BridgeError::Worker(
                resp.error.unwrap_or_else(|| "unspecified error".into()),
            ));
        }
        Ok(resp)
    }

    /// Sends training rows; returns once the worker acknowledges.
    pub fn fit(&mut self, rows: &[(String, f64)]) -> Result<(), BridgeError> {
        let rows = rows
            .iter()
            .map(|(encoding, target)| FitRow {
                encoding,
                target: *target,
            })
            .collect();
        self.request(&Request::Fit { rows }, "fit", self.timeouts.fit_secs)?;
        Ok(())
    }

    /// One finite prediction per encoding, in order.
    pub fn predict(&mut self, encodings: &[String]) -> Result<Vec<f64>, BridgeError> {
        if encodings.is_empty() {
            return Ok(Vec::new());
        }
        let resp = self.request(&Request::Predict { encodings }, "predict", self.timeouts.predict_secs)?;
        let preds = resp
            .predictions
            .ok_or_else(|| BridgeError::Protocol("predict response has no `predictions`".into()))?;
        if preds.len() != encodings.len() {
            self.broken = true;
            return Err(BridgeError::Protocol(format!(
                "expected {} predictions, got {}",
                encodings.len(),
                preds.len()
            )));
        }
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(BridgeError::Protocol("non-finite prediction".into()));
        }
        Ok(preds)
    }

    /// Asks the worker to exit and reaps it.
    pub fn shutdown(mut self) -> Result<(), BridgeError> {
        self.close()
    }

    fn close(&mut self) -> Result<(), BridgeError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let result = if self.broken {
            Ok(())
        } else {
            self.request(&Request::Shutdown, "shutdown", 5).map(|_| ())
        };
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(5);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return result;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
        result
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        let _ = self.close();
    }
}
