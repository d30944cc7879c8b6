//! Lockstep displacement→force exchange over TCP.
//!
//! Every frame is a 14-byte header followed by a payload:
//!
//! ```text
//! 0..4   magic "DDHS"
//! 4      version (1)
//! 5      kind
//! 6..10  step, u32 little-endian
//! 10..14 payload length in bytes, u32 little-endian
//! 14..   payload: f64 little-endian values, or UTF-8 text for ERR
//! ```
//!
//! The client numbers its requests 0, 1, 2, ... starting with HELLO and the
//! server echoes the step of the request it answers. SNAPSHOT, RESTORE and BYE
//! are acknowledged with an empty frame of the same kind. There is never more
//! than one unanswered request on a connection.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::pisindy::{PiSession, TrainedPiModel};
use crate::provider::{BraceProvider, ProviderError};

pub const MAGIC: [u8; 4] = *b"DDHS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {got}")]
    TruncatedFrame { needed: usize, got: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed payload: {0}")]
    MalformedPayload(&'static str),
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("remote error: {0}")]
    Remote(String),
    #[error("unexpected {got} reply to {expected}")]
    UnexpectedReply { expected: MessageKind, got: MessageKind },
    #[error("reply step {got} does not match request step {sent}")]
    StepMismatch { sent: u32, got: u32 },
    #[error("bad reply payload: {0}")]
    BadReply(String),
    #[error("cannot resolve endpoint {0}")]
    Endpoint(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

impl From<CouplingError> for ProviderError {
    fn from(e: CouplingError) -> Self {
        ProviderError::Fault(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    HelloAck = 2,
    Disp = 3,
    Force = 4,
    Snapshot = 5,
    Restore = 6,
    Bye = 7,
    Err = 8,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::Hello,
        MessageKind::HelloAck,
        MessageKind::Disp,
        MessageKind::Force,
        MessageKind::Snapshot,
        MessageKind::Restore,
        MessageKind::Bye,
        MessageKind::Err,
    ];

    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        Self::ALL
            .get((b as usize).wrapping_sub(1))
            .copied()
            .ok_or(WireError::UnknownKind(b))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::HelloAck => "HELLO_ACK",
            MessageKind::Disp => "DISP",
            MessageKind::Force => "FORCE",
            MessageKind::Snapshot => "SNAPSHOT",
            MessageKind::Restore => "RESTORE",
            MessageKind::Bye => "BYE",
            MessageKind::Err => "ERR",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One protocol frame. ERR carries text; every other kind carries values.
///
/// Equality compares values bit for bit, so NaN payloads and signed zeros
/// survive a round trip check.
#[derive(Debug, Clone)]
pub struct CouplingMessage {
    kind: MessageKind,
    step: u32,
    values: Vec<f64>,
    text: String,
}

impl CouplingMessage {
    /// A value-carrying message. Panics if `kind` is ERR; use [`Self::error`].
    pub fn new(kind: MessageKind, step: u32, values: Vec<f64>) -> Self {
        assert!(kind != MessageKind::Err, "ERR messages carry text");
        Self {
            kind,
            step,
            values,
            text: String::new(),
        }
    }

    pub fn error(step: u32, text: impl Into<String>) -> Self {
        Self {
            kind: MessageKind::Err,
            step,
            values: Vec::new(),
            text: text.into(),
        }
    }

    pub fn hello(step: u32, dof: u32) -> Self {
        Self::new(MessageKind::Hello, step, vec![dof as f64])
    }

    pub fn disp(step: u32, x: f64) -> Self {
        Self::new(MessageKind::Disp, step, vec![x])
    }

    pub fn force(step: u32, r: f64) -> Self {
        Self::new(MessageKind::Force, step, vec![r])
    }

    pub fn kind(&self) -> MessageKind {
        self.kind
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Error text; empty for non-ERR messages.
    pub fn text(&self) -> &str {
        &self.text
    }

    fn payload_len(&self) -> usize {
        match self.kind {
            MessageKind::Err => self.text.len(),
            _ => 8 * self.values.len(),
        }
    }
}

impl PartialEq for CouplingMessage {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.step == other.step
            && self.text == other.text
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for CouplingMessage {}

fn header(msg: &CouplingMessage) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4] = VERSION;
    h[5] = msg.kind as u8;
    h[6..10].copy_from_slice(&msg.step.to_le_bytes());
    h[10..14].copy_from_slice(&(msg.payload_len() as u32).to_le_bytes());
    h
}

pub fn encode_frame(msg: &CouplingMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload_len());
    out.extend_from_slice(&header(msg));
    match msg.kind {
        MessageKind::Err => out.extend_from_slice(msg.text.as_bytes()),
        _ => {
            for v in &msg.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Header {
    kind: MessageKind,
    step: u32,
    len: usize,
}

fn parse_header(h: &[u8]) -> Result<Header, WireError> {
    if h.len() >= 4 && h[..4] != MAGIC {
        return Err(WireError::BadMagic([h[0], h[1], h[2], h[3]]));
    }
    if h.len() < HEADER_LEN {
        return Err(WireError::TruncatedFrame {
            needed: HEADER_LEN,
            got: h.len(),
        });
    }
    if h[4] != VERSION {
        return Err(WireError::UnsupportedVersion(h[4]));
    }
    let kind = MessageKind::from_byte(h[5])?;
    let step = u32::from_le_bytes(h[6..10].try_into().unwrap());
    let len = u32::from_le_bytes(h[10..14].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(len));
    }
    Ok(Header { kind, step, len })
}

fn parse_payload(h: Header, payload: &[u8]) -> Result<CouplingMessage, WireError> {
    if h.kind == MessageKind::Err {
        let text = std::str::from_utf8(payload)
            .map_err(|_| WireError::MalformedPayload("ERR text is not UTF-8"))?;
        return Ok(CouplingMessage::error(h.step, text));
    }
    if payload.len() % 8 != 0 {
        return Err(WireError::MalformedPayload("length is not a multiple of 8"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(CouplingMessage::new(h.kind, h.step, values))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_frame(bytes: &[u8]) -> Result<CouplingMessage, WireError> {
    let h = parse_header(bytes)?;
    let total = HEADER_LEN + h.len;
    if bytes.len() < total {
        return Err(WireError::TruncatedFrame {
            needed: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(WireError::MalformedPayload("trailing bytes after frame"));
    }
    parse_payload(h, &bytes[HEADER_LEN..])
}

/// Hex dump of one frame with the header fields separated.
pub fn hex_frame(bytes: &[u8]) -> String {
    let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    if bytes.len() < HEADER_LEN {
        return hex(bytes);
    }
    let mut s = format!(
        "{} {} {} {} {}",
        hex(&bytes[..4]),
        hex(&bytes[4..5]),
        hex(&bytes[5..6]),
        hex(&bytes[6..10]),
        hex(&bytes[10..14])
    );
    if bytes.len() > HEADER_LEN {
        s.push(' ');
        s.push_str(&hex(&bytes[HEADER_LEN..]));
    }
    s
}

/// Shared sink for hex transcripts. Lines look like `tx 44444853 01 03 ...`.
///
/// Several server workers may share one sink; lines are written whole but
/// sessions interleave.
#[derive(Clone)]
pub struct Transcript(Arc<Mutex<Box<dyn Write + Send>>>);

impl Transcript {
    pub fn new(sink: impl Write + Send + 'static) -> Self {
        Self(Arc::new(Mutex::new(Box::new(sink))))
    }

    pub fn create(path: &std::path::Path) -> io::Result<Self> {
        Ok(Self::new(io::BufWriter::new(std::fs::File::create(path)?)))
    }

    fn record(&self, dir: &str, bytes: &[u8]) {
        let mut w = self.0.lock().unwrap_or_else(|p| p.into_inner());
        let _ = writeln!(w, "{dir} {}", hex_frame(bytes));
        let _ = w.flush();
    }
}

impl fmt::Debug for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Transcript")
    }
}

fn send(
    stream: &mut TcpStream,
    msg: &CouplingMessage,
    transcript: Option<&Transcript>,
) -> io::Result<()> {
    let bytes = encode_frame(msg);
    if let Some(t) = transcript {
        t.record("tx", &bytes);
    }
    stream.write_all(&bytes)?;
    stream.flush()
}

enum Fill {
    Done,
    /// End of stream after this many bytes of the buffer.
    Eof(usize),
    Cancelled,
}

/// `read_exact` that tolerates read timeouts, polling `cancel` on each one.
fn fill(stream: &mut TcpStream, buf: &mut [u8], cancel: &dyn Fn() -> bool) -> io::Result<Fill> {
    let mut got = 0;
    while got < buf.len() {
        match stream.read(&mut buf[got..]) {
            Ok(0) => return Ok(Fill::Eof(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e)
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                if cancel() {
                    return Ok(Fill::Cancelled);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Fill::Done)
}

enum Incoming {
    Message(CouplingMessage),
    Closed,
    Cancelled,
}

fn receive(
    stream: &mut TcpStream,
    transcript: Option<&Transcript>,
    cancel: &dyn Fn() -> bool,
) -> Result<Incoming, CouplingError> {
    let mut head = [0u8; HEADER_LEN];
    match fill(stream, &mut head, cancel)? {
        Fill::Done => {}
        Fill::Eof(0) => return Ok(Incoming::Closed),
        Fill::Eof(n) => {
            return Err(WireError::TruncatedFrame {
                needed: HEADER_LEN,
                got: n,
            }
            .into())
        }
        Fill::Cancelled => return Ok(Incoming::Cancelled),
    }
    let record = |bytes: &[u8]| {
        if let Some(t) = transcript {
            t.record("rx", bytes);
        }
    };
    let h = match parse_header(&head) {
        Ok(h) => h,
        Err(e) => {
            record(&head);
            return Err(e.into());
        }
    };
    let mut frame = vec![0u8; HEADER_LEN + h.len];
    frame[..HEADER_LEN].copy_from_slice(&head);
    match fill(stream, &mut frame[HEADER_LEN..], cancel)? {
        Fill::Done => {}
        Fill::Eof(n) => {
            return Err(WireError::TruncatedFrame {
                needed: HEADER_LEN + h.len,
                got: HEADER_LEN + n,
            }
            .into())
        }
        Fill::Cancelled => return Ok(Incoming::Cancelled),
    }
    record(&frame);
    Ok(Incoming::Message(parse_payload(h, &frame[HEADER_LEN..])?))
}

/// What the server does after handling one request.
#[derive(Debug, PartialEq)]
pub enum Reply {
    Continue(CouplingMessage),
    /// Send the message, then close the connection.
    Close(CouplingMessage),
}

/// Server-side protocol state for one connection.
#[derive(Debug)]
pub struct ServerSession {
    session: PiSession,
    dof: Option<u32>,
    last_step: Option<u32>,
    initialized: bool,
}

impl ServerSession {
    pub fn new(model: TrainedPiModel) -> Self {
        Self {
            session: PiSession::new(model),
            dof: None,
            last_step: None,
            initialized: false,
        }
    }

    /// The reply to a frame that failed to decode.
    pub fn reject(&self, err: &WireError) -> Reply {
        Reply::Close(CouplingMessage::error(self.last_step.unwrap_or(0), err.to_string()))
    }

    pub fn handle(&mut self, msg: &CouplingMessage) -> Reply {
        let step = msg.step();
        let fail = |text: String| Reply::Close(CouplingMessage::error(step, text));
        if self.last_step.is_some_and(|last| step <= last) {
            return fail("out-of-order step".into());
        }
        self.last_step = Some(step);

        if self.dof.is_none() && msg.kind() != MessageKind::Hello {
            return fail(format!("expected HELLO, got {}", msg.kind()));
        }
        match msg.kind() {
            MessageKind::Hello => {
                if self.dof.is_some() {
                    return fail("duplicate HELLO".into());
                }
                match msg.values() {
                    [d] if *d == 1.0 => {
                        self.dof = Some(1);
                        Reply::Continue(CouplingMessage::new(MessageKind::HelloAck, step, vec![1.0]))
                    }
                    _ => fail(format!("unsupported dof {:?}", msg.values())),
                }
            }
            MessageKind::Disp => {
                let &[x] = msg.values() else {
                    return fail(format!("DISP carries {} values, expected 1", msg.values().len()));
                };
                let r = if self.initialized {
                    self.session.step(x)
                } else {
                    self.initialized = true;
                    self.session.init(x)
                };
                match r {
                    Ok(f) => Reply::Continue(CouplingMessage::force(step, f)),
                    Err(e) => fail(e.to_string()),
                }
            }
            MessageKind::Snapshot | MessageKind::Restore => {
                let r = if msg.kind() == MessageKind::Snapshot {
                    self.session.snapshot()
                } else {
                    self.session.restore()
                };
                match r {
                    Ok(()) => Reply::Continue(CouplingMessage::new(msg.kind(), step, Vec::new())),
                    Err(e) => fail(e.to_string()),
                }
            }
            MessageKind::Bye => Reply::Close(CouplingMessage::new(MessageKind::Bye, step, Vec::new())),
            other => fail(format!("unexpected {other} from client")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Sessions served concurrently, each with its own model state.
    pub workers: usize,
    /// Stop after this many sessions have finished.
    pub max_sessions: Option<usize>,
    /// Close a session after this long without a request.
    pub idle_timeout: Duration,
    pub transcript: Option<Transcript>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            max_sessions: None,
            idle_timeout: Duration::from_secs(300),
            transcript: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub sessions: usize,
    pub failed_sessions: usize,
}

/// A bound coupling server. `run` blocks until shutdown or `max_sessions`.
pub struct ModelServer {
    listener: TcpListener,
    model: TrainedPiModel,
    opts: ServerOptions,
    shutdown: Arc<AtomicBool>,
}

impl ModelServer {
    pub fn bind(
        model: TrainedPiModel,
        endpoint: &str,
        opts: ServerOptions,
    ) -> Result<Self, CouplingError> {
        model
            .validate()
            .map_err(|e| CouplingError::InvalidModel(e.to_string()))?;
        let listener = TcpListener::bind(endpoint)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            model,
            opts,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Setting the flag stops accepting, lets in-flight requests finish and
    /// closes idle sessions.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    pub fn run(self) -> Result<ServeStats, CouplingError> {
        let mut stats = ServeStats::default();
        let mut started = 0usize;
        let mut workers: Vec<thread::JoinHandle<bool>> = Vec::new();
        let workers_max = self.opts.workers.max(1);
        loop {
            let finished: Vec<_> = {
                let (done, live): (Vec<_>, Vec<_>) =
                    workers.into_iter().partition(|h| h.is_finished());
                workers = live;
                done
            };
            for h in finished {
                stats.sessions += 1;
                if !h.join().unwrap_or(false) {
                    stats.failed_sessions += 1;
                }
            }
            let stopping = self.shutdown.load(Ordering::SeqCst);
            let exhausted = self.opts.max_sessions.is_some_and(|n| started >= n);
            if stopping || exhausted {
                if workers.is_empty() {
                    break;
                }
                thread::sleep(POLL);
                continue;
            }
            if workers.len() >= workers_max {
                thread::sleep(POLL);
                continue;
            }
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    started += 1;
                    log::info!("session {started} from {peer}");
                    let model = self.model.clone();
                    let opts = self.opts.clone();
                    let shutdown = Arc::clone(&self.shutdown);
                    let run = move || match serve_connection(stream, model, &opts, &shutdown) {
                        Ok(()) => true,
                        Err(e) => {
                            log::warn!("session from {peer} ended with error: {e}");
                            false
                        }
                    };
                    if workers_max == 1 {
                        stats.sessions += 1;
                        if !run() {
                            stats.failed_sessions += 1;
                        }
                    } else {
                        workers.push(thread::spawn(run));
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        log::info!("server stopped after {} sessions", stats.sessions);
        Ok(stats)
    }
}

/// Binds `endpoint` and serves `model` until shutdown.
pub fn serve_model(
    model: TrainedPiModel,
    endpoint: &str,
    opts: ServerOptions,
) -> Result<ServeStats, CouplingError> {
    ModelServer::bind(model, endpoint, opts)?.run()
}

fn serve_connection(
    mut stream: TcpStream,
    model: TrainedPiModel,
    opts: &ServerOptions,
    shutdown: &AtomicBool,
) -> Result<(), CouplingError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let transcript = opts.transcript.as_ref();
    let mut session = ServerSession::new(model);
    loop {
        let idle_since = Instant::now();
        let cancel = || shutdown.load(Ordering::SeqCst) || idle_since.elapsed() > opts.idle_timeout;
        let reply = match receive(&mut stream, transcript, &cancel) {
            Ok(Incoming::Message(msg)) => session.handle(&msg),
            Ok(Incoming::Closed) => return Ok(()),
            Ok(Incoming::Cancelled) => {
                log::info!("closing idle session");
                let _ = stream.shutdown(Shutdown::Both);
                return Ok(());
            }
            Err(CouplingError::Wire(e)) => session.reject(&e),
            Err(e) => return Err(e),
        };
        match reply {
            Reply::Continue(m) => send(&mut stream, &m, transcript)?,
            Reply::Close(m) => {
                send(&mut stream, &m, transcript)?;
                let _ = stream.shutdown(Shutdown::Write);
                return if m.kind() == MessageKind::Err {
                    Err(CouplingError::Remote(m.text().to_string()))
                } else {
                    Ok(())
                };
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Connect, read and write timeout.
    pub timeout: Duration,
    pub transcript: Option<Transcript>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            transcript: None,
        }
    }
}

/// Brace provider backed by a coupling server.
///
/// Each provider call is one request/response round trip. The first `step`
/// after `init` is the second DISP of the session. Dropping the provider
/// sends BYE.
pub struct RemoteBrace {
    stream: TcpStream,
    next_step: u32,
    initialized: bool,
    open: bool,
    transcript: Option<Transcript>,
}

impl RemoteBrace {
    /// Connects and performs the HELLO handshake.
    pub fn connect(endpoint: &str, opts: ClientOptions) -> Result<Self, CouplingError> {
        let addrs: Vec<SocketAddr> = endpoint
            .to_socket_addrs()
            .map_err(|_| CouplingError::Endpoint(endpoint.to_string()))?
            .collect();
        let mut last_err = None;
        let mut stream = None;
        for addr in &addrs {
            match TcpStream::connect_timeout(addr, opts.timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let stream = match (stream, last_err) {
            (Some(s), _) => s,
            (None, Some(e)) => return Err(e.into()),
            (None, None) => return Err(CouplingError::Endpoint(endpoint.to_string())),
        };
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(opts.timeout))?;
        stream.set_write_timeout(Some(opts.timeout))?;
        let mut client = Self {
            stream,
            next_step: 0,
            initialized: false,
            open: true,
            transcript: opts.transcript,
        };
        let ack = client.request(MessageKind::Hello, vec![1.0], MessageKind::HelloAck)?;
        if ack.values() != [1.0] {
            return Err(CouplingError::BadReply(format!("HELLO_ACK {:?}", ack.values())));
        }
        Ok(client)
    }

    fn request(
        &mut self,
        kind: MessageKind,
        values: Vec<f64>,
        expected: MessageKind,
    ) -> Result<CouplingMessage, CouplingError> {
        if !self.open {
            return Err(CouplingError::Closed);
        }
        let step = self.next_step;
        self.next_step = step
            .checked_add(1)
            .ok_or(CouplingError::BadReply("step counter exhausted".into()))?;
        let outcome = self.exchange(&CouplingMessage::new(kind, step, values), expected);
        if outcome.is_err() {
            self.open = false;
        }
        outcome
    }

    fn exchange(
        &mut self,
        msg: &CouplingMessage,
        expected: MessageKind,
    ) -> Result<CouplingMessage, CouplingError> {
        send(&mut self.stream, msg, self.transcript.as_ref())?;
        let reply = match receive(&mut self.stream, self.transcript.as_ref(), &|| true)? {
            Incoming::Message(m) => m,
            Incoming::Closed => return Err(CouplingError::Closed),
            Incoming::Cancelled => {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "no reply before timeout").into())
            }
        };
        if reply.kind() == MessageKind::Err {
            return Err(CouplingError::Remote(reply.text().to_string()));
        }
        if reply.step() != msg.step() {
            return Err(CouplingError::StepMismatch {
                sent: msg.step(),
                got: reply.step(),
            });
        }
        if reply.kind() != expected {
            return Err(CouplingError::UnexpectedReply {
                expected,
                got: reply.kind(),
            });
        }
        Ok(reply)
    }

    fn disp(&mut self, x: f64) -> Result<f64, CouplingError> {
        let reply = self.request(MessageKind::Disp, vec![x], MessageKind::Force)?;
        match reply.values() {
            &[f] => Ok(f),
            v => Err(CouplingError::BadReply(format!("FORCE carries {} values", v.len()))),
        }
    }

    /// Sends BYE and waits for the acknowledgement.
    pub fn close(mut self) -> Result<(), CouplingError> {
        self.request(MessageKind::Bye, Vec::new(), MessageKind::Bye)?;
        self.open = false;
        Ok(())
    }
}

impl Drop for RemoteBrace {
    fn drop(&mut self) {
        if self.open {
            let _ = self.request(MessageKind::Bye, Vec::new(), MessageKind::Bye);
        }
    }
}

impl BraceProvider for RemoteBrace {
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError> {
        if self.initialized {
            return Err(ProviderError::ProtocolMisuse("remote session already initialised"));
        }
        let f = self.disp(x0)?;
        self.initialized = true;
        Ok(f)
    }

    fn step(&mut self, x: f64) -> Result<f64, ProviderError> {
        if !self.initialized {
            return Err(ProviderError::ProtocolMisuse("step before init"));
        }
        Ok(self.disp(x)?)
    }

    fn snapshot(&mut self) -> Result<(), ProviderError> {
        self.request(MessageKind::Snapshot, Vec::new(), MessageKind::Snapshot)?;
        Ok(())
    }

    fn restore(&mut self) -> Result<(), ProviderError> {
        self.request(MessageKind::Restore, Vec::new(), MessageKind::Restore)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model() -> TrainedPiModel {
        TrainedPiModel {
            schema_version: crate::pisindy::SCHEMA_VERSION,
            m: 2,
            lambda: 0.1,
            x_max_train: 3.0,
            nrmse_train: 0.0,
            linear_weight: 0.0,
            constant: 0.0,
            thresholds: vec![1.0, 2.0],
            weights: vec![0.0, 0.0],
        }
    }

    #[test]
    fn force_frame_bytes() {
        let bytes = encode_frame(&CouplingMessage::force(1, 1.0));
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..6], b"DDHS\x01\x04");
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[8, 0, 0, 0]);
        assert_eq!(&bytes[14..], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
        assert_eq!(decode_frame(&bytes).unwrap(), CouplingMessage::force(1, 1.0));
    }

    #[test]
    fn decode_errors() {
        let mut bytes = encode_frame(&CouplingMessage::disp(3, 2.5));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_frame(&bad), Err(WireError::BadMagic(m)) if &m == b"XXXX"));
        bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_frame(&bad), Err(WireError::UnsupportedVersion(2))));
        bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(decode_frame(&bad), Err(WireError::UnknownKind(9))));
        assert!(matches!(
            decode_frame(&bytes[..10]),
            Err(WireError::TruncatedFrame { needed: 14, got: 10 })
        ));
        assert!(matches!(
            decode_frame(&bytes[..20]),
            Err(WireError::TruncatedFrame { needed: 22, got: 20 })
        ));
        bytes.push(0);
        assert!(matches!(decode_frame(&bytes), Err(WireError::MalformedPayload(_))));
        bad = encode_frame(&CouplingMessage::new(MessageKind::Disp, 0, vec![]));
        bad[10] = 3;
        bad.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(decode_frame(&bad), Err(WireError::MalformedPayload(_))));
    }

    #[test]
    fn error_text_round_trip() {
        let m = CouplingMessage::error(7, "out-of-order step");
        let bytes = encode_frame(&m);
        assert_eq!(&bytes[HEADER_LEN..], b"out-of-order step");
        assert_eq!(decode_frame(&bytes).unwrap(), m);
    }

    #[test]
    fn nan_and_signed_zero_compare_bitwise() {
        let m = CouplingMessage::new(MessageKind::Disp, 0, vec![f64::NAN, -0.0]);
        assert_eq!(decode_frame(&encode_frame(&m)).unwrap(), m);
        assert_ne!(m, CouplingMessage::new(MessageKind::Disp, 0, vec![f64::NAN, 0.0]));
    }

    #[test]
    fn session_handshake_and_zero_force() {
        let mut s = ServerSession::new(zero_model());
        assert_eq!(
            s.handle(&CouplingMessage::hello(0, 1)),
            Reply::Continue(CouplingMessage::new(MessageKind::HelloAck, 0, vec![1.0]))
        );
        assert_eq!(
            s.handle(&CouplingMessage::disp(1, 0.0)),
            Reply::Continue(CouplingMessage::force(1, 0.0))
        );
        assert_eq!(
            s.handle(&CouplingMessage::disp(1, 0.5)),
            Reply::Close(CouplingMessage::error(1, "out-of-order step"))
        );
    }

    #[test]
    fn session_rejects_protocol_violations() {
        let mut s = ServerSession::new(zero_model());
        assert!(matches!(s.handle(&CouplingMessage::disp(0, 1.0)), Reply::Close(m) if m.kind() == MessageKind::Err));
        let mut s = ServerSession::new(zero_model());
        assert!(matches!(s.handle(&CouplingMessage::hello(0, 2)), Reply::Close(m) if m.text().contains("dof")));
        let mut s = ServerSession::new(zero_model());
        s.handle(&CouplingMessage::hello(0, 1));
        assert!(matches!(
            s.handle(&CouplingMessage::new(MessageKind::Disp, 1, vec![1.0, 2.0])),
            Reply::Close(_)
        ));
        let mut s = ServerSession::new(zero_model());
        s.handle(&CouplingMessage::hello(0, 1));
        assert!(matches!(
            s.handle(&CouplingMessage::new(MessageKind::Restore, 1, vec![])),
            Reply::Close(m) if m.text().contains("restore")
        ));
        let mut s = ServerSession::new(zero_model());
        s.handle(&CouplingMessage::hello(0, 1));
        assert_eq!(
            s.handle(&CouplingMessage::new(MessageKind::Bye, 5, vec![])),
            Reply::Close(CouplingMessage::new(MessageKind::Bye, 5, vec![]))
        );
    }

    #[test]
    fn hex_dump_layout() {
        assert_eq!(
            hex_frame(&encode_frame(&CouplingMessage::force(1, 1.0))),
            "44444853 01 04 01000000 08000000 000000000000f03f"
        );
    }
}
