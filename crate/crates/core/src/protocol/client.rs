// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adapter connections and the connection pool.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use log::debug;

use super::{Frame, PROTOCOL_VERSION};
use crate::backends::{Capabilities, CfgSetting, ConditionSpec};
use crate::error::{FslError, Result};
use crate::schedule::StepPosition;
use crate::tensor::LatentTensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Reads `FSL_TIMEOUT_SECS`, falling back to 120 s.
pub fn timeout_from_env() -> Duration {
    std::env::var("FSL_TIMEOUT_SECS")
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|s| *s > 0.0 && s.is_finite())
        .map(Duration::from_secs_f64)
        .unwrap_or(DEFAULT_TIMEOUT)
}

/// Where an adapter lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    /// Program and arguments; the adapter speaks on its stdin/stdout.
    Command(Vec<String>),
}

impl Endpoint {
    /// Accepts `cmd:PROGRAM [ARGS..]`, `tcp:HOST:PORT`, `external:HOST:PORT`
    /// or a bare `HOST:PORT`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if parts.is_empty() {
                return Err(FslError::BadConfig("empty adapter command".into()));
            }
            return Ok(Endpoint::Command(parts));
        }
        let addr = s
            .strip_prefix("tcp:")
            .or_else(|| s.strip_prefix("external:"))
            .unwrap_or(s);
        if addr.is_empty() || !addr.contains(':') {
            return Err(FslError::BadConfig(format!(
                "`{s}` is not an adapter address"
            )));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Command(parts) => write!(f, "cmd:{}", parts.join(" ")),
        }
    }
}

/// What the adapter announced in its `hello_ack`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterInfo {
    pub version: String,
    pub uncond_prompt: Option<String>,
    pub latent_shape: Option<Vec<usize>>,
    pub capabilities: Option<Capabilities>,
}

/// One handshaken adapter connection with at most one request in flight.
pub struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    next_id: u64,
    timeout: Duration,
    info: AdapterInfo,
    /// Number of pool registrations already replayed on this connection.
    synced: usize,
    broken: bool,
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => {
                    let _ = tx.send(Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "adapter closed the connection",
                    )));
                    break;
                }
                Ok(_) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl Connection {
    /// Connects (or launches) and performs the `hello` handshake.
    pub fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let mut conn = match endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| FslError::Transport(format!("cannot resolve {addr}: {e}")))?
                    .next()
                    .ok_or_else(|| FslError::Transport(format!("no address for {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)
                    .map_err(|e| FslError::Transport(format!("connect {addr}: {e}")))?;
                let _ = stream.set_nodelay(true);
                let read_half = stream
                    .try_clone()
                    .map_err(|e| FslError::Transport(e.to_string()))?;
                let write_half = stream
                    .try_clone()
                    .map_err(|e| FslError::Transport(e.to_string()))?;
                Connection {
                    writer: Box::new(write_half),
                    lines: spawn_reader(read_half),
                    child: None,
                    tcp: Some(stream),
                    next_id: 1,
                    timeout,
                    info: AdapterInfo::default(),
                    synced: 0,
                    broken: false,
                }
            }
            Endpoint::Command(parts) => {
                let mut child = Command::new(&parts[0])
                    .args(&parts[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| {
                        FslError::Transport(format!("cannot launch `{}`: {e}", parts[0]))
                    })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    tcp: None,
                    next_id: 1,
                    timeout,
                    info: AdapterInfo::default(),
                    synced: 0,
                    broken: false,
                }
            }
        };
        conn.handshake()?;
        Ok(conn)
    }

    fn handshake(&mut self) -> Result<()> {
        self.send(&Frame::Hello {
            version: PROTOCOL_VERSION.to_string(),
        })?;
        match self.recv()? {
            Frame::HelloAck {
                version,
                uncond_prompt,
                latent_shape,
                capabilities,
            } => {
                if version != PROTOCOL_VERSION {
                    return Err(FslError::Protocol(format!(
                        "adapter speaks `{version}`, expected `{PROTOCOL_VERSION}`"
                    )));
                }
                self.info = AdapterInfo {
                    version,
                    uncond_prompt,
                    latent_shape,
                    capabilities,
                };
                debug!("handshake ok: {:?}", self.info);
                Ok(())
            }
            Frame::Error { message, .. } => Err(FslError::RemoteFailure(message)),
            other => Err(FslError::Protocol(format!(
                "expected hello_ack, got {other:?}"
            ))),
        }
    }

    pub fn info(&self) -> &AdapterInfo {
        &self.info
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        self.send_raw(&frame.to_line())
    }

    /// Writes one already-encoded line; used to probe adapters with frames
    /// the typed encoder refuses to produce.
    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        let res = self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush());
        res.map_err(|e| {
            self.broken = true;
            FslError::Transport(e.to_string())
        })
    }

    pub fn recv(&mut self) -> Result<Frame> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Frame::parse(&line).inspect_err(|_| self.broken = true),
            Ok(Err(e)) => {
                self.broken = true;
                Err(FslError::Transport(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                // a late reply would desynchronise the stream
                self.broken = true;
                Err(FslError::Timeout(self.timeout.as_secs_f64()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(FslError::Transport("adapter reader stopped".into()))
            }
        }
    }

    pub fn next_request_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Sends a request frame built around a fresh id and waits for its answer.
    pub fn call(&mut self, build: impl FnOnce(u64) -> Frame) -> Result<Frame> {
        let id = self.next_request_id();
        self.send(&build(id))?;
        let reply = self.recv()?;
        if reply.request_id() != Some(id) {
            if let Frame::Error {
                message,
                request_id: None,
            } = &reply
            {
                return Err(FslError::RemoteFailure(message.clone()));
            }
            self.broken = true;
            return Err(FslError::Protocol(format!(
                "expected reply to request {id}, got {:?}",
                reply.request_id()
            )));
        }
        match reply {
            Frame::Error { message, .. } => Err(FslError::RemoteFailure(message)),
            other => Ok(other),
        }
    }

    pub fn register(&mut self, id: &str, spec: &ConditionSpec) -> Result<()> {
        let (text, embedding) = match spec {
            ConditionSpec::Text(t) => (Some(t.clone()), None),
            ConditionSpec::Embedding(e) => (None, Some(e.values().to_vec())),
        };
        self.send(&Frame::RegisterCondition {
            id: id.to_string(),
            text,
            embedding,
        })
    }

    pub fn epsilon(
        &mut self,
        latent: &LatentTensor,
        condition_id: &str,
        step: StepPosition,
        cfg: CfgSetting,
    ) -> Result<LatentTensor> {
        let reply = self.call(|request_id| Frame::Epsilon {
            request_id,
            tensor: latent.to_wire(),
            condition_id: condition_id.to_string(),
            step,
            cfg,
        })?;
        match reply {
            Frame::EpsilonResult { tensor, .. } => {
                let out = LatentTensor::from_wire(&tensor)
                    .map_err(|e| FslError::Protocol(format!("bad epsilon tensor: {e}")))?;
                if out.shape() != latent.shape() {
                    return Err(FslError::Protocol(format!(
                        "epsilon shape {:?} differs from latent shape {:?}",
                        out.shape(),
                        latent.shape()
                    )));
                }
                Ok(out)
            }
            other => Err(FslError::Protocol(format!(
                "expected epsilon_result, got {other:?}"
            ))),
        }
    }

    pub fn align(&mut self, sample: &LatentTensor, text: &str) -> Result<(f64, f64)> {
        let reply = self.call(|request_id| Frame::Align {
            request_id,
            tensor: Some(sample.to_wire()),
            sample_ref: None,
            text: text.to_string(),
        })?;
        match reply {
            Frame::AlignResult { score, a_max, .. } => {
                if !score.is_finite() || !(a_max.is_finite() && a_max > 0.0) {
                    return Err(FslError::Protocol(format!(
                        "non-finite alignment (score {score}, a_max {a_max})"
                    )));
                }
                Ok((score, a_max))
            }
            other => Err(FslError::Protocol(format!(
                "expected align_result, got {other:?}"
            ))),
        }
    }

    pub fn distance(&mut self, a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
        let reply = self.call(|request_id| Frame::Distance {
            request_id,
            tensor_a: a.to_wire(),
            tensor_b: b.to_wire(),
        })?;
        match reply {
            Frame::DistanceResult { score, .. } => {
                if !score.is_finite() {
                    return Err(FslError::Protocol(format!("non-finite distance {score}")));
                }
                Ok(score)
            }
            other => Err(FslError::Protocol(format!(
                "expected distance_result, got {other:?}"
            ))),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(tcp) = &self.tcp {
            let _ = tcp.shutdown(Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct PoolState {
    idle: Vec<Connection>,
    open: usize,
}

/// A bounded pool of connections to one adapter.
///
/// Condition registrations are remembered and replayed on every connection
/// before it serves a request.
pub struct ProtocolClient {
    endpoint: Endpoint,
    timeout: Duration,
    max_connections: usize,
    state: Mutex<PoolState>,
    available: Condvar,
    registrations: RwLock<Vec<(String, ConditionSpec)>>,
    info: AdapterInfo,
}

impl ProtocolClient {
    /// Opens the first connection eagerly so handshake failures surface here.
    pub fn connect(endpoint: Endpoint, timeout: Duration, max_connections: usize) -> Result<Self> {
        let first = Connection::open(&endpoint, timeout)?;
        let info = first.info().clone();
        Ok(Self {
            endpoint,
            timeout,
            max_connections: max_connections.max(1),
            state: Mutex::new(PoolState {
                idle: vec![first],
                open: 1,
            }),
            available: Condvar::new(),
            registrations: RwLock::new(Vec::new()),
            info,
        })
    }

    pub fn info(&self) -> &AdapterInfo {
        &self.info
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Remembers a registration; it is sent lazily on each connection.
    pub fn register(&self, id: &str, spec: &ConditionSpec) {
        let mut regs = self
            .registrations
            .write()
            .expect("registration lock poisoned");
        if !regs.iter().any(|(i, _)| i == id) {
            regs.push((id.to_string(), spec.clone()));
        }
    }

    fn checkout(&self) -> Result<Connection> {
        let mut state = self.state.lock().expect("pool lock poisoned");
        loop {
            if let Some(conn) = state.idle.pop() {
                return Ok(conn);
            }
            if state.open < self.max_connections {
                state.open += 1;
                drop(state);
                return Connection::open(&self.endpoint, self.timeout).inspect_err(|_| {
                    self.state.lock().expect("pool lock poisoned").open -= 1;
                    self.available.notify_one();
                });
            }
            state = self.available.wait(state).expect("pool lock poisoned");
        }
    }

    fn checkin(&self, conn: Connection) {
        let mut state = self.state.lock().expect("pool lock poisoned");
        if conn.is_broken() {
            state.open -= 1;
        } else {
            state.idle.push(conn);
        }
        drop(state);
        self.available.notify_one();
    }

    /// Runs `f` on a pooled connection that has all registrations applied.
    pub fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T>) -> Result<T> {
        let mut conn = self.checkout()?;
        let result = (|| {
            let regs = self
                .registrations
                .read()
                .expect("registration lock poisoned");
            while conn.synced < regs.len() {
                let (id, spec) = &regs[conn.synced];
                conn.register(id, spec)?;
                conn.synced += 1;
            }
            drop(regs);
            f(&mut conn)
        })();
        self.checkin(conn);
        result
    }
}
