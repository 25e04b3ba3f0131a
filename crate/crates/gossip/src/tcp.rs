//! Plain TCP transport: one framed stream per peer pair. The peer with the
//! lower id dials and redials with exponential backoff; the other side
//! accepts. A single engine thread owns the [`GossipEngine`]; socket
//! readers feed it through a channel.

use std::collections::HashMap;
use std::io::{self, BufRead};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::wire::{read_frame, write_frame, Frame};
use crate::{GossipConfig, GossipEngine, GossipError, GossipMessage, MessageId, PeerId, ReceiveBuffer};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);
const ACCEPT_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq)]
pub struct PeerAddr {
    pub id: PeerId,
    pub addr: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PeersFileError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parse a peers file: one `peer_id host:port` per line; blank lines and
/// `#` comments are skipped.
pub fn parse_peers(text: &str) -> Result<Vec<PeerAddr>, PeersFileError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PeersFileError::Format { line: i + 1, message };
        let mut parts = line.split_whitespace();
        let (Some(id), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `peer_id host:port`, got {line:?}")));
        };
        let id: PeerId = id.parse().map_err(|e| err(format!("{e}")))?;
        if !addr.contains(':') {
            return Err(err(format!("address {addr:?} has no port")));
        }
        out.push(PeerAddr {
            id,
            addr: addr.to_string(),
        });
    }
    Ok(out)
}

pub fn read_peers_file(path: &Path) -> Result<Vec<PeerAddr>, PeersFileError> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    for line in io::BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_peers(&text)
}

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub local: PeerId,
    pub listen: SocketAddr,
    pub peers: Vec<PeerAddr>,
    pub gossip: GossipConfig,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
    pub seed: u64,
}

impl TcpConfig {
    pub fn new(local: PeerId, listen: SocketAddr, peers: Vec<PeerAddr>) -> Self {
        TcpConfig {
            local,
            listen,
            peers,
            gossip: GossipConfig::default(),
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(30),
            seed: 0,
        }
    }
}

/// Delay before reconnect attempt `attempt` (0-based).
pub fn backoff(base: Duration, cap: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(31)).min(cap)
}

enum Command {
    Publish {
        topic: String,
        payload: Vec<u8>,
        reply: Sender<Result<MessageId, GossipError>>,
    },
    Subscribe(String),
    Connected {
        peer: PeerId,
        conn: u64,
        stream: TcpStream,
    },
    Inbound {
        peer: PeerId,
        frame: Frame,
    },
    Disconnected {
        peer: PeerId,
        conn: u64,
    },
    Shutdown,
}

pub struct TcpNode {
    local: PeerId,
    local_addr: SocketAddr,
    commands: Sender<Command>,
    buffer: Arc<ReceiveBuffer>,
    running: Arc<AtomicBool>,
    engine_thread: Option<JoinHandle<()>>,
}

impl TcpNode {
    /// Bind, start the engine, accept loop and dialers.
    pub fn start(config: TcpConfig) -> Result<TcpNode, GossipError> {
        config.gossip.validate()?;
        let listener = TcpListener::bind(config.listen).map_err(|e| GossipError::Config(format!("bind {}: {e}", config.listen)))?;
        let local_addr = listener.local_addr().map_err(|e| GossipError::Config(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| GossipError::Config(e.to_string()))?;
        let engine = GossipEngine::new(config.local, config.gossip.clone(), config.seed);
        let buffer = engine.buffer();
        let running = Arc::new(AtomicBool::new(true));
        let conn_ids = Arc::new(AtomicU64::new(0));
        let (tx, rx) = mpsc::channel();

        let engine_thread = {
            let running = Arc::clone(&running);
            thread::spawn(move || engine_loop(engine, rx, running))
        };
        {
            let (tx, running, conn_ids, local) = (tx.clone(), Arc::clone(&running), Arc::clone(&conn_ids), config.local);
            thread::spawn(move || accept_loop(listener, local, tx, running, conn_ids));
        }
        for peer in config.peers.iter().filter(|p| config.local < p.id) {
            let (tx, running, conn_ids) = (tx.clone(), Arc::clone(&running), Arc::clone(&conn_ids));
            let (peer, local, base, cap) = (peer.clone(), config.local, config.backoff_base, config.backoff_cap);
            thread::spawn(move || dial_loop(peer, local, base, cap, tx, running, conn_ids));
        }
        Ok(TcpNode {
            local: config.local,
            local_addr,
            commands: tx,
            buffer,
            running,
            engine_thread: Some(engine_thread),
        })
    }

    pub fn local(&self) -> PeerId {
        self.local
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn subscribe(&self, topic: &str) -> Result<(), GossipError> {
        self.commands
            .send(Command::Subscribe(topic.to_string()))
            .map_err(|_| GossipError::TransportDown)
    }

    /// Hands the payload to the engine thread and returns its message id.
    pub fn publish(&self, topic: &str, payload: Vec<u8>) -> Result<MessageId, GossipError> {
        let (reply, answer) = mpsc::channel();
        self.commands
            .send(Command::Publish {
                topic: topic.to_string(),
                payload,
                reply,
            })
            .map_err(|_| GossipError::TransportDown)?;
        answer.recv().map_err(|_| GossipError::TransportDown)?
    }

    pub fn drain(&self) -> Vec<GossipMessage> {
        self.buffer.drain()
    }

    pub fn shutdown(&mut self) {
        self.running.store(false, Ordering::SeqCst);
        let _ = self.commands.send(Command::Shutdown);
        if let Some(t) = self.engine_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpNode {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn engine_loop(mut engine: GossipEngine, rx: Receiver<Command>, running: Arc<AtomicBool>) {
    let start = Instant::now();
    let heartbeat = engine.config().heartbeat();
    let mut next_beat = start + heartbeat;
    let mut writers: HashMap<PeerId, (u64, TcpStream)> = HashMap::new();

    let send_all = |writers: &mut HashMap<PeerId, (u64, TcpStream)>, engine: &mut GossipEngine, out: Vec<crate::Outbound>| {
        for o in out {
            let Some((_, stream)) = writers.get_mut(&o.to) else {
                continue;
            };
            if let Err(e) = write_frame(stream, &o.frame) {
                log::warn!("tcp: send to {} failed: {e}", o.to.short());
                let _ = stream.shutdown(std::net::Shutdown::Both);
                writers.remove(&o.to);
                engine.remove_peer(&o.to);
            }
        }
    };

    while running.load(Ordering::SeqCst) {
        let wait = next_beat.saturating_duration_since(Instant::now());
        let cmd = match rx.recv_timeout(wait) {
            Ok(c) => Some(c),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let now = start.elapsed();
        let out = match cmd {
            None => {
                next_beat += heartbeat;
                engine.heartbeat(now)
            }
            Some(Command::Shutdown) => break,
            Some(Command::Publish { topic, payload, reply }) => match engine.publish(&topic, payload, now) {
                Ok((id, out)) => {
                    let _ = reply.send(Ok(id));
                    out
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                    Vec::new()
                }
            },
            Some(Command::Subscribe(topic)) => engine.subscribe(&topic),
            Some(Command::Connected { peer, conn, stream }) => {
                if let Some((_, old)) = writers.insert(peer, (conn, stream)) {
                    let _ = old.shutdown(std::net::Shutdown::Both);
                }
                engine.remove_peer(&peer);
                engine.add_peer(peer)
            }
            Some(Command::Inbound { peer, frame }) => engine.handle(peer, frame, now),
            Some(Command::Disconnected { peer, conn }) => {
                if writers.get(&peer).is_some_and(|(c, _)| *c == conn) {
                    writers.remove(&peer);
                    engine.remove_peer(&peer);
                }
                Vec::new()
            }
        };
        send_all(&mut writers, &mut engine, out);
    }
    for (_, (_, s)) in writers {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
}

fn handshake(stream: &mut TcpStream, local: PeerId) -> io::Result<PeerId> {
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    write_frame(stream, &Frame::Hello { peer: local }).map_err(io::Error::other)?;
    match read_frame(stream).map_err(io::Error::other)? {
        Some(Frame::Hello { peer }) => {
            stream.set_read_timeout(None)?;
            Ok(peer)
        }
        other => Err(io::Error::other(format!("expected hello, got {other:?}"))),
    }
}

/// Forward frames from a connected stream until it closes.
fn pump(mut stream: TcpStream, peer: PeerId, conn: u64, tx: &Sender<Command>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(frame)) => {
                if tx.send(Command::Inbound { peer, frame }).is_err() {
                    return;
                }
            }
            Ok(None) => break,
            Err(e) => {
                log::debug!("tcp: stream from {} closed: {e}", peer.short());
                break;
            }
        }
    }
    let _ = tx.send(Command::Disconnected { peer, conn });
}

fn register(stream: &TcpStream, peer: PeerId, tx: &Sender<Command>, conn_ids: &AtomicU64) -> Option<u64> {
    let conn = conn_ids.fetch_add(1, Ordering::SeqCst);
    let writer = stream.try_clone().ok()?;
    tx.send(Command::Connected {
        peer,
        conn,
        stream: writer,
    })
    .ok()?;
    Some(conn)
}

fn accept_loop(listener: TcpListener, local: PeerId, tx: Sender<Command>, running: Arc<AtomicBool>, conn_ids: Arc<AtomicU64>) {
    while running.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, addr)) => {
                let (tx, conn_ids) = (tx.clone(), Arc::clone(&conn_ids));
                thread::spawn(move || {
                    let _ = stream.set_nonblocking(false);
                    match handshake(&mut stream, local) {
                        Ok(peer) if peer != local => {
                            if let Some(conn) = register(&stream, peer, &tx, &conn_ids) {
                                pump(stream, peer, conn, &tx);
                            }
                        }
                        Ok(_) => log::warn!("tcp: {addr} claimed our own id"),
                        Err(e) => log::warn!("tcp: handshake with {addr} failed: {e}"),
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("tcp: accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn dial_loop(peer: PeerAddr, local: PeerId, base: Duration, cap: Duration, tx: Sender<Command>, running: Arc<AtomicBool>, conn_ids: Arc<AtomicU64>) {
    let mut attempt = 0u32;
    while running.load(Ordering::SeqCst) {
        let connected = TcpStream::connect(&peer.addr).and_then(|mut s| handshake(&mut s, local).map(|id| (s, id)));
        match connected {
            Ok((stream, id)) if id == peer.id => {
                attempt = 0;
                let Some(conn) = register(&stream, id, &tx, &conn_ids) else {
                    return;
                };
                pump(stream, id, conn, &tx);
            }
            Ok((_, id)) => log::warn!("tcp: {} answered as {}, expected {}", peer.addr, id.short(), peer.id.short()),
            Err(e) => log::debug!("tcp: dial {} failed: {e}", peer.addr),
        }
        let delay = backoff(base, cap, attempt);
        attempt = attempt.saturating_add(1);
        let until = Instant::now() + delay;
        while running.load(Ordering::SeqCst) && Instant::now() < until {
            thread::sleep(ACCEPT_POLL.min(delay));
        }
    }
}
