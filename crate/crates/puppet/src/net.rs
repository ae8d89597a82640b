//! Wall-clock transport: the follower as a TCP server, the leader as its
//! client, and the WebSocket gateway for the operator console.
//!
//! Every socket gets its own reader and writer thread; control loops only
//! touch in-memory queues, so a stalled peer never blocks a tick.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{info, warn};
use puppet_core::clock::Nanos;
use puppet_core::{FollowerGains, JointConfig, RobotModel};
use tungstenite::{Message, WebSocket};

use crate::scenario::{ControllerSample, FollowerParams};
use crate::session::{BridgeConfig, FollowerEndpoint, LeaderEndpoint, TICK_HZ, TICK_NS};
use crate::wire::{
    self, DecodeError, FrameBuffer, WireMessage, ERR_DECODE, ERR_MODEL, ERR_VERSION,
    PROTOCOL_VERSION,
};

const POLL: Duration = Duration::from_millis(20);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);
const RECONNECT_EVERY: Duration = Duration::from_millis(500);

type Inbox = Arc<Mutex<VecDeque<WireMessage>>>;

/// A framed TCP connection serviced by background threads.
struct Conn {
    inbox: Inbox,
    tx: Sender<Vec<u8>>,
    alive: Arc<AtomicBool>,
    stream: TcpStream,
}

impl Conn {
    fn spawn(stream: TcpStream, dof: usize, buffered: FrameBuffer, stop: Arc<AtomicBool>) -> io::Result<Conn> {
        stream.set_read_timeout(Some(POLL))?;
        stream.set_nodelay(true)?;
        let inbox: Inbox = Arc::default();
        let alive = Arc::new(AtomicBool::new(true));
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        {
            let mut r = stream.try_clone()?;
            let inbox = inbox.clone();
            let alive = alive.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                let mut fb = buffered;
                let mut chunk = [0u8; 8192];
                while alive.load(Ordering::Relaxed) && !stop.load(Ordering::Relaxed) {
                    match drain_frames(&mut fb, dof) {
                        Ok(msgs) => inbox.lock().unwrap().extend(msgs),
                        Err(e) => {
                            warn!("dropping connection: {e}");
                            break;
                        }
                    }
                    match r.read(&mut chunk) {
                        Ok(0) => break,
                        Ok(n) => fb.push(&chunk[..n]),
                        Err(e) if is_timeout(&e) => {}
                        Err(_) => break,
                    }
                }
                alive.store(false, Ordering::Relaxed);
            });
        }
        {
            let mut w = stream.try_clone()?;
            let alive = alive.clone();
            thread::spawn(move || {
                while let Ok(frame) = rx.recv() {
                    if w.write_all(&frame).is_err() {
                        break;
                    }
                }
                alive.store(false, Ordering::Relaxed);
            });
        }
        Ok(Conn {
            inbox,
            tx,
            alive,
            stream,
        })
    }

    fn is_alive(&self) -> bool {
        self.alive.load(Ordering::Relaxed)
    }

    fn send(&self, msg: &WireMessage) {
        if let Ok(frame) = wire::encode(msg) {
            let _ = self.tx.send(frame);
        }
    }

    fn drain(&self) -> Vec<WireMessage> {
        self.inbox.lock().unwrap().drain(..).collect()
    }

    fn close(&self) {
        self.alive.store(false, Ordering::Relaxed);
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

/// Decodes every complete frame in `fb`. Undecodable frames are skipped;
/// a corrupt length prefix ends the stream.
fn drain_frames(fb: &mut FrameBuffer, dof: usize) -> Result<Vec<WireMessage>, DecodeError> {
    let mut out = Vec::new();
    while let Some(frame) = fb.next_frame()? {
        match wire::decode(&frame, Some(dof)) {
            Ok(m) => out.push(m),
            Err(e) => warn!("ignoring frame: {e}"),
        }
    }
    Ok(out)
}

/// Blocks until one frame arrives or the deadline passes.
fn read_one(stream: &mut TcpStream, fb: &mut FrameBuffer, deadline: Instant) -> io::Result<WireMessage> {
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(frame) = fb.next_frame().map_err(io::Error::other)? {
            return wire::decode(&frame, None).map_err(io::Error::other);
        }
        if Instant::now() > deadline {
            return Err(io::Error::new(io::ErrorKind::TimedOut, "handshake timed out"));
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => fb.push(&chunk[..n]),
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e),
        }
    }
}

fn write_msg(stream: &mut TcpStream, msg: &WireMessage) -> io::Result<()> {
    stream.write_all(&wire::encode(msg).map_err(io::Error::other)?)
}

/// Sleeps until the next tick deadline; after an overrun, re-anchors
/// instead of bursting.
struct Pacer {
    next: Instant,
    period: Duration,
}

impl Pacer {
    fn new() -> Self {
        Pacer {
            next: Instant::now(),
            period: Duration::from_nanos(TICK_NS),
        }
    }

    fn wait(&mut self) {
        self.next += self.period;
        let now = Instant::now();
        if self.next > now {
            thread::sleep(self.next - now);
        } else if now - self.next > 10 * self.period {
            self.next = now;
        }
    }
}

fn elapsed_ns(start: Instant) -> Nanos {
    start.elapsed().as_nanos() as Nanos
}

/// Running background service; dropping it does not stop it, call
/// [`ServiceHandle::shutdown`].
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the service stops on its own.
    pub fn join(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn bind(host: &str, port: u16) -> io::Result<TcpListener> {
    let l = TcpListener::bind((host, port))?;
    l.set_nonblocking(true)?;
    Ok(l)
}

/// Follower handshake: expects `hello` with the matching version and model
/// name, answers with `hello` or an `error` and a close.
fn follower_handshake(mut stream: TcpStream, model: &RobotModel) -> io::Result<(TcpStream, FrameBuffer)> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut fb = FrameBuffer::new();
    let reject = |stream: &mut TcpStream, code, text: String| {
        let _ = write_msg(stream, &WireMessage::Error { code, text: text.clone() });
        Err(io::Error::new(io::ErrorKind::InvalidData, text))
    };
    match read_one(&mut stream, &mut fb, Instant::now() + HANDSHAKE_TIMEOUT) {
        Ok(WireMessage::Hello { version, model_name }) => {
            if version != PROTOCOL_VERSION {
                return reject(&mut stream, ERR_VERSION, format!("protocol version {version} not supported"));
            }
            if model_name != model.name() {
                return reject(&mut stream, ERR_MODEL, format!("model {model_name:?} does not match {:?}", model.name()));
            }
        }
        Ok(other) => return reject(&mut stream, ERR_DECODE, format!("expected hello, got {}", other.type_name())),
        Err(e) => return reject(&mut stream, ERR_DECODE, e.to_string()),
    }
    write_msg(
        &mut stream,
        &WireMessage::Hello {
            version: PROTOCOL_VERSION,
            model_name: model.name().to_string(),
        },
    )?;
    Ok((stream, fb))
}

/// Starts the follower: a 1 kHz control loop that keeps running (holding its
/// last target) whether or not a leader is connected, serving one leader at
/// a time.
pub fn start_follower(
    model: &RobotModel,
    q0: JointConfig,
    params: &FollowerParams,
    host: &str,
    port: u16,
) -> io::Result<ServiceHandle> {
    let bridge = BridgeConfig::default();
    let gains = FollowerGains::new(params.kp.clone(), params.kd.clone())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut endpoint = FollowerEndpoint::new(model, q0, params.alpha, gains, &bridge)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let listener = bind(host, port)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let model = model.clone();
    let stop2 = stop.clone();
    let t = thread::spawn(move || {
        let stop = stop2;
        let (conn_tx, conn_rx) = mpsc::channel::<Conn>();
        {
            let stop = stop.clone();
            let model = model.clone();
            thread::spawn(move || accept_loop(listener, stop, conn_tx, move |s, stop| {
                let (stream, fb) = follower_handshake(s, &model)?;
                Conn::spawn(stream, model.dof(), fb, stop)
            }));
        }
        let start = Instant::now();
        let mut pacer = Pacer::new();
        let mut conn: Option<Conn> = None;
        let mut tick = 0u64;
        while !stop.load(Ordering::Relaxed) {
            if let Ok(c) = conn_rx.try_recv() {
                if let Some(old) = conn.replace(c) {
                    old.close();
                }
                info!("leader connected");
            }
            if let Some(c) = &conn {
                for m in c.drain() {
                    endpoint.receive(&m);
                }
            }
            endpoint.tick();
            let out = endpoint.publish(tick, elapsed_ns(start));
            if let Some(c) = &conn {
                if c.is_alive() {
                    out.iter().for_each(|m| c.send(m));
                } else {
                    info!("leader disconnected");
                    conn = None;
                }
            }
            tick += 1;
            pacer.wait();
        }
        if let Some(c) = conn {
            c.close();
        }
    });
    Ok(ServiceHandle {
        addr,
        stop,
        threads: vec![t],
    })
}

fn accept_loop<T, F>(listener: TcpListener, stop: Arc<AtomicBool>, out: Sender<T>, mut handle: F)
where
    F: FnMut(TcpStream, Arc<AtomicBool>) -> io::Result<T>,
{
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((s, peer)) => match handle(s, stop.clone()) {
                Ok(c) => {
                    if out.send(c).is_err() {
                        return;
                    }
                }
                Err(e) => warn!("rejected {peer}: {e}"),
            },
            Err(e) if is_timeout(&e) => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

/// Connects to a follower and completes the handshake.
fn connect_follower(addr: SocketAddr, model: &RobotModel, stop: Arc<AtomicBool>) -> io::Result<Conn> {
    let mut s = TcpStream::connect_timeout(&addr, Duration::from_millis(200))?;
    s.set_read_timeout(Some(POLL))?;
    write_msg(
        &mut s,
        &WireMessage::Hello {
            version: PROTOCOL_VERSION,
            model_name: model.name().to_string(),
        },
    )?;
    let mut fb = FrameBuffer::new();
    match read_one(&mut s, &mut fb, Instant::now() + HANDSHAKE_TIMEOUT)? {
        WireMessage::Hello { version, .. } if version == PROTOCOL_VERSION => {}
        WireMessage::Error { text, .. } => return Err(io::Error::other(text)),
        other => return Err(io::Error::other(format!("unexpected {}", other.type_name()))),
    }
    Conn::spawn(s, model.dof(), fb, stop)
}

/// Shared state between the leader loop and console clients.
#[derive(Default)]
struct Console {
    input: Option<ControllerSample>,
    realign: usize,
    outboxes: Vec<Arc<Mutex<Option<Vec<String>>>>>,
}

fn console_client(
    mut ws: WebSocket<TcpStream>,
    console: Arc<Mutex<Console>>,
    model_name: String,
    dof: usize,
    stop: Arc<AtomicBool>,
) {
    let outbox: Arc<Mutex<Option<Vec<String>>>> = Arc::default();
    console.lock().unwrap().outboxes.push(outbox.clone());
    let reply = |ws: &mut WebSocket<TcpStream>, m: &WireMessage| {
        let text = String::from_utf8(wire::encode_payload(m).expect("finite")).expect("utf-8");
        ws.send(Message::text(text))
    };
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(t)) => match wire::decode_payload(t.as_bytes(), Some(dof)) {
                Ok(WireMessage::Hello { version, .. }) => {
                    let m = if version == PROTOCOL_VERSION {
                        WireMessage::Hello {
                            version: PROTOCOL_VERSION,
                            model_name: model_name.clone(),
                        }
                    } else {
                        WireMessage::Error {
                            code: ERR_VERSION,
                            text: format!("protocol version {version} not supported"),
                        }
                    };
                    if reply(&mut ws, &m).is_err() {
                        break;
                    }
                }
                Ok(WireMessage::ControllerInput {
                    pose,
                    pressed,
                    trigger,
                    ..
                }) => {
                    console.lock().unwrap().input = Some(ControllerSample {
                        pose: pose.to_pose(),
                        pressed,
                        trigger,
                    });
                }
                Ok(WireMessage::Realign { .. }) => console.lock().unwrap().realign += 1,
                Ok(_) => {}
                Err(e) => {
                    let m = WireMessage::Error {
                        code: ERR_DECODE,
                        text: e.to_string(),
                    };
                    if reply(&mut ws, &m).is_err() {
                        break;
                    }
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
            Err(_) => break,
        }
        let batch = outbox.lock().unwrap().take();
        if let Some(batch) = batch {
            let mut failed = false;
            for text in batch {
                if ws.send(Message::text(text)).is_err() {
                    failed = true;
                    break;
                }
            }
            if failed {
                break;
            }
        }
    }
    console
        .lock()
        .unwrap()
        .outboxes
        .retain(|o| !Arc::ptr_eq(o, &outbox));
    let _ = ws.close(None);
}

fn start_gateway(
    listener: TcpListener,
    console: Arc<Mutex<Console>>,
    model: &RobotModel,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    let name = model.name().to_string();
    let dof = model.dof();
    thread::spawn(move || {
        let (tx, rx) = mpsc::channel::<()>();
        let console2 = console.clone();
        accept_loop(listener, stop.clone(), tx, move |s, stop| {
            s.set_nonblocking(false)?;
            s.set_nodelay(true)?;
            let ws = tungstenite::accept(s).map_err(|e| io::Error::other(e.to_string()))?;
            ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
            let console = console2.clone();
            let name = name.clone();
            thread::spawn(move || console_client(ws, console, name, dof, stop));
            Ok(())
        });
        drop(rx);
    })
}

pub struct ServeConfig {
    pub model: RobotModel,
    pub host: String,
    /// Follower port; 0 picks a free one when the follower is spawned here.
    pub port: u16,
    pub ui_port: u16,
    /// Run the follower in-process instead of connecting to an external one.
    pub spawn_follower: bool,
    pub follower: FollowerParams,
    pub initial_q: JointConfig,
}

pub struct ServeHandle {
    pub follower_addr: SocketAddr,
    pub ui_addr: SocketAddr,
    leader: ServiceHandle,
    follower: Option<ServiceHandle>,
}

impl ServeHandle {
    pub fn shutdown(self) {
        self.leader.shutdown();
        if let Some(f) = self.follower {
            f.shutdown();
        }
    }

    pub fn join(self) {
        self.leader.join();
        if let Some(f) = self.follower {
            f.join();
        }
    }
}

/// Interactive mode: the leader loop on the wall clock, connected to a
/// follower and serving the console gateway.
pub fn serve(cfg: ServeConfig) -> io::Result<ServeHandle> {
    let follower = if cfg.spawn_follower {
        Some(start_follower(&cfg.model, cfg.initial_q.clone(), &cfg.follower, &cfg.host, cfg.port)?)
    } else {
        None
    };
    let follower_addr = match &follower {
        Some(f) => f.addr,
        None => (cfg.host.as_str(), cfg.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "unresolvable follower host"))?,
    };
    let ui = bind(&cfg.host, cfg.ui_port)?;
    let ui_addr = ui.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let console: Arc<Mutex<Console>> = Arc::default();
    let gateway = start_gateway(ui, console.clone(), &cfg.model, stop.clone());
    let model = cfg.model;
    let q0 = cfg.initial_q;
    let stop2 = stop.clone();
    let leader = thread::spawn(move || leader_loop(model, q0, follower_addr, console, stop2));
    Ok(ServeHandle {
        follower_addr,
        ui_addr,
        leader: ServiceHandle {
            addr: ui_addr,
            stop,
            threads: vec![leader, gateway],
        },
        follower,
    })
}

fn spawn_connector(addr: SocketAddr, model: RobotModel, stop: Arc<AtomicBool>) -> Receiver<Conn> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match connect_follower(addr, &model, stop.clone()) {
                Ok(c) => {
                    info!("connected to follower at {addr}");
                    let _ = tx.send(c);
                    return;
                }
                Err(e) => {
                    warn!("follower at {addr}: {e}");
                    thread::sleep(RECONNECT_EVERY);
                }
            }
        }
    });
    rx
}

fn leader_loop(
    model: RobotModel,
    q0: JointConfig,
    addr: SocketAddr,
    console: Arc<Mutex<Console>>,
    stop: Arc<AtomicBool>,
) {
    let bridge = BridgeConfig::default();
    let start = Instant::now();
    let mut leader = LeaderEndpoint::new(&model, q0.clone(), q0, &bridge, 0).expect("validated model");
    let mut conn: Option<Conn> = None;
    let mut connecting = Some(spawn_connector(addr, model.clone(), stop.clone()));
    let mut synced = false;
    let mut last_follower: Option<String> = None;
    let command_every = TICK_HZ / bridge.publish_rate_hz as u64;
    let mut pacer = Pacer::new();
    let mut tick = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let now = elapsed_ns(start);
        if let Some(rx) = &connecting {
            if let Ok(c) = rx.try_recv() {
                conn = Some(c);
                connecting = None;
            }
        }
        if let Some(c) = &conn {
            for m in c.drain() {
                if let WireMessage::FollowerState { q, .. } = &m {
                    last_follower = wire::encode_payload(&m).ok().and_then(|b| String::from_utf8(b).ok());
                    if !synced {
                        // start aligned with whatever the follower is doing
                        leader.receive(&m, now);
                        leader.realign(now);
                        synced = q.len() == model.dof();
                    }
                }
                leader.receive(&m, now);
            }
        }
        let command = tick % command_every == 0;
        if command {
            let (sample, realigns) = {
                let mut c = console.lock().unwrap();
                (c.input.clone(), std::mem::take(&mut c.realign))
            };
            if realigns > 0 {
                leader.realign(now);
            }
            leader.command(sample.as_ref());
        }
        leader.step(now);
        let out = leader.publish(tick, now);
        match &conn {
            Some(c) if c.is_alive() && synced => out.iter().for_each(|m| c.send(m)),
            Some(c) if !c.is_alive() => {
                warn!("follower connection lost");
                conn = None;
                connecting = Some(spawn_connector(addr, model.clone(), stop.clone()));
            }
            _ => {}
        }
        for e in leader.take_events() {
            info!("gate {:?} at {} ns: {:?}", e.kind, e.t, e.cause);
        }
        if command {
            let status = wire::encode_payload(&leader.status(now))
                .ok()
                .and_then(|b| String::from_utf8(b).ok());
            let batch: Vec<String> = status.into_iter().chain(last_follower.clone()).collect();
            for o in &console.lock().unwrap().outboxes {
                *o.lock().unwrap() = Some(batch.clone());
            }
        }
        tick += 1;
        pacer.wait();
    }
    if let Some(c) = conn {
        c.close();
    }
}
