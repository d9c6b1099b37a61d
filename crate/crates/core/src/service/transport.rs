//! Network bindings for the controller: plain TCP and WebSocket, both
//! carrying one JSON message per line/frame.
//!
//! The control loop runs on the calling thread and owns the controller.
//! Connection threads parse commands into a bounded queue that the loop
//! drains between ticks. Outbound messages go through a per-client queue;
//! when a client falls behind, the oldest telemetry frames are dropped first
//! and replies are never dropped.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use tungstenite::Message;

use crate::service::controller::Controller;
use crate::service::protocol::{Reply, Request};
use crate::sim::HardwarePort;

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    /// Simulated seconds per wall-clock second.
    pub speedup: f64,
    /// Stop cleanly once the session clock reaches this time.
    pub run_for_ms: Option<u64>,
    pub command_queue: usize,
    /// Telemetry frames buffered per client before the oldest are dropped.
    pub telemetry_backlog: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tcp_addr: SocketAddr::from(([127, 0, 0, 1], 7878)),
            ws_addr: None,
            speedup: 1.0,
            run_for_ms: None,
            command_queue: 64,
            telemetry_backlog: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundPorts {
    pub tcp: SocketAddr,
    pub ws: Option<SocketAddr>,
}

struct Outbox {
    lines: VecDeque<(bool, String)>,
    telemetry: usize,
    closed: bool,
}

/// Outbound queue of one connected client.
struct ClientSink {
    id: u64,
    backlog: usize,
    inner: Mutex<Outbox>,
    ready: Condvar,
}

impl ClientSink {
    fn new(id: u64, backlog: usize) -> Self {
        Self {
            id,
            backlog: backlog.max(1),
            inner: Mutex::new(Outbox {
                lines: VecDeque::new(),
                telemetry: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    fn push(&self, line: String, is_telemetry: bool) {
        let mut q = self.inner.lock().expect("sink lock");
        if q.closed {
            return;
        }
        if is_telemetry {
            if q.telemetry >= self.backlog {
                if let Some(pos) = q.lines.iter().position(|(t, _)| *t) {
                    q.lines.remove(pos);
                    q.telemetry -= 1;
                }
            }
            q.telemetry += 1;
        }
        q.lines.push_back((is_telemetry, line));
        self.ready.notify_one();
    }

    fn pop_all(&self, wait: Duration) -> Option<Vec<String>> {
        let mut q = self.inner.lock().expect("sink lock");
        if q.lines.is_empty() && !q.closed {
            q = self.ready.wait_timeout(q, wait).expect("sink lock").0;
        }
        if q.closed && q.lines.is_empty() {
            return None;
        }
        q.telemetry = 0;
        Some(q.lines.drain(..).map(|(_, l)| l).collect())
    }

    fn close(&self) {
        self.inner.lock().expect("sink lock").closed = true;
        self.ready.notify_all();
    }

    fn is_closed(&self) -> bool {
        self.inner.lock().expect("sink lock").closed
    }
}

struct Inbound {
    client: u64,
    request: Request,
}

/// State shared between the loop and connection threads.
struct Shared {
    shutdown: AtomicBool,
    next_client: AtomicU64,
    active: Mutex<Option<Arc<ClientSink>>>,
    backlog: usize,
}

impl Shared {
    /// Registers a new client, displacing any previous one.
    fn attach(&self) -> Arc<ClientSink> {
        let id = self.next_client.fetch_add(1, Ordering::Relaxed);
        let sink = Arc::new(ClientSink::new(id, self.backlog));
        if let Some(old) = self
            .active
            .lock()
            .expect("client lock")
            .replace(sink.clone())
        {
            info!("client {} replaced by client {id}", old.id);
            old.close();
        }
        sink
    }

    fn active(&self) -> Option<Arc<ClientSink>> {
        self.active.lock().expect("client lock").clone()
    }

    fn detach(&self, id: u64) {
        let mut active = self.active.lock().expect("client lock");
        if active.as_ref().is_some_and(|s| s.id == id) {
            if let Some(s) = active.take() {
                s.close();
            }
        }
    }
}

/// Handle for stopping a running server from another thread.
#[derive(Clone)]
pub struct ShutdownHandle(Arc<Shared>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.shutdown.store(true, Ordering::SeqCst);
    }
}

pub struct Server {
    shared: Arc<Shared>,
    tcp: TcpListener,
    ws: Option<TcpListener>,
    config: ServerConfig,
}

impl Server {
    pub fn bind(config: ServerConfig) -> io::Result<Self> {
        let tcp = TcpListener::bind(config.tcp_addr)?;
        tcp.set_nonblocking(true)?;
        let ws = match config.ws_addr {
            Some(addr) => {
                let l = TcpListener::bind(addr)?;
                l.set_nonblocking(true)?;
                Some(l)
            }
            None => None,
        };
        Ok(Self {
            shared: Arc::new(Shared {
                shutdown: AtomicBool::new(false),
                next_client: AtomicU64::new(1),
                active: Mutex::new(None),
                backlog: config.telemetry_backlog,
            }),
            tcp,
            ws,
            config,
        })
    }

    pub fn ports(&self) -> io::Result<BoundPorts> {
        Ok(BoundPorts {
            tcp: self.tcp.local_addr()?,
            ws: self.ws.as_ref().map(|l| l.local_addr()).transpose()?,
        })
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle(self.shared.clone())
    }

    /// Runs the control loop until shutdown or `run_for_ms`.
    pub fn run<P: HardwarePort>(self, controller: &mut Controller<P>) -> io::Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Inbound>(self.config.command_queue.max(1));
        let mut acceptors = Vec::new();
        {
            let shared = self.shared.clone();
            let tx = tx.clone();
            let listener = self.tcp;
            acceptors.push(thread::spawn(move || {
                accept_loop(listener, shared, tx, false)
            }));
        }
        if let Some(listener) = self.ws {
            let shared = self.shared.clone();
            let tx = tx.clone();
            acceptors.push(thread::spawn(move || {
                accept_loop(listener, shared, tx, true)
            }));
        }
        drop(tx);

        let result = control_loop(controller, &self.shared, &rx, &self.config);
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(sink) = self.shared.active() {
            // let the writer flush what is queued before closing
            let deadline = Instant::now() + Duration::from_millis(200);
            while Instant::now() < deadline
                && !sink.inner.lock().expect("sink lock").lines.is_empty()
            {
                thread::sleep(Duration::from_millis(5));
            }
            sink.close();
        }
        for a in acceptors {
            let _ = a.join();
        }
        result
    }
}

fn control_loop<P: HardwarePort>(
    controller: &mut Controller<P>,
    shared: &Shared,
    rx: &Receiver<Inbound>,
    config: &ServerConfig,
) -> io::Result<()> {
    let tick_s = 1.0 / f64::from(controller.config().tick_hz);
    let period = Duration::from_secs_f64(tick_s / config.speedup.max(1e-6));
    let start = Instant::now();
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        if config.run_for_ms.is_some_and(|t| controller.now_ms() >= t) {
            return Ok(());
        }
        let sink = shared.active();
        while let Ok(inbound) = rx.try_recv() {
            let reply = controller.handle(inbound.request);
            if let Some(s) = sink.as_ref().filter(|s| s.id == inbound.client) {
                for ev in controller.drain_events() {
                    s.push(ev.to_line(), ev.is_telemetry());
                }
                s.push(reply.to_line(), false);
            }
        }
        controller.control_tick();
        let events = controller.drain_events();
        if let Some(s) = &sink {
            for ev in events {
                s.push(ev.to_line(), ev.is_telemetry());
            }
        }
        let deadline = start + period.mul_f64(controller.ticks() as f64);
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    tx: SyncSender<Inbound>,
    websocket: bool,
) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                info!(
                    "{} client connected from {peer}",
                    if websocket { "websocket" } else { "tcp" }
                );
                let shared = shared.clone();
                let tx = tx.clone();
                thread::spawn(move || {
                    let r = if websocket {
                        serve_websocket(stream, &shared, &tx)
                    } else {
                        serve_tcp(stream, &shared, &tx)
                    };
                    if let Err(e) = r {
                        debug!("connection from {peer} ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

/// Parses one inbound line and queues it; parse failures and a full queue are
/// answered directly.
fn enqueue(line: &str, sink: &ClientSink, tx: &SyncSender<Inbound>) {
    let line = line.trim();
    if line.is_empty() {
        return;
    }
    match Request::parse(line) {
        Ok(request) => {
            let id = request.id.clone();
            match tx.try_send(Inbound {
                client: sink.id,
                request,
            }) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => {
                    sink.push(Reply::rejected(id, "command queue full").to_line(), false)
                }
                Err(TrySendError::Disconnected(_)) => sink.close(),
            }
        }
        Err(e) => sink.push(Reply::from(e).to_line(), false),
    }
}

fn serve_tcp(stream: TcpStream, shared: &Arc<Shared>, tx: &SyncSender<Inbound>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    stream.set_nodelay(true)?;
    let sink = shared.attach();
    let mut writer = stream.try_clone()?;
    let writer_sink = sink.clone();
    let writer_thread = thread::spawn(move || {
        while let Some(lines) = writer_sink.pop_all(Duration::from_millis(50)) {
            let mut buf = String::new();
            for l in lines {
                buf.push_str(&l);
                buf.push('\n');
            }
            if !buf.is_empty() && writer.write_all(buf.as_bytes()).is_err() {
                writer_sink.close();
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });

    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let result = loop {
        if shared.shutdown.load(Ordering::SeqCst) || sink.is_closed() {
            break Ok(());
        }
        match reader.read_line(&mut line) {
            Ok(0) => break Ok(()),
            Ok(_) => {
                enqueue(&line, &sink, tx);
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => break Err(e),
        }
    };
    shared.detach(sink.id);
    sink.close();
    let _ = writer_thread.join();
    result
}

fn serve_websocket(
    stream: TcpStream,
    shared: &Arc<Shared>,
    tx: &SyncSender<Inbound>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_mut()
        .set_read_timeout(Some(Duration::from_millis(10)))?;
    let sink = shared.attach();
    let result = loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            break Ok(());
        }
        match sink.pop_all(Duration::ZERO) {
            Some(lines) => {
                if let Some(e) = lines
                    .into_iter()
                    .find_map(|l| ws.send(Message::text(l)).err())
                {
                    break Err(io::Error::other(e.to_string()));
                }
            }
            None => {
                let _ = ws.close(None);
                break Ok(());
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.as_str().lines() {
                    enqueue(line, &sink, tx);
                }
            }
            Ok(Message::Close(_)) => break Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                break Ok(())
            }
            Err(e) => break Err(io::Error::other(e.to_string())),
        }
    };
    shared.detach(sink.id);
    sink.close();
    result
}
