//! AXL-compatible localhost HTTP surface and a gossip transport on top of
//! it.
//!
//! [`AxlShim`] stands in for an AXL node: `POST /send` queues bytes for a
//! peer (fire-and-forget), `GET /recv` dequeues inbound bytes, and
//! `GET /topology` describes this node. Shims reach each other through
//! `POST /deliver`. [`AxlNode`] runs the gossip engine against any server
//! with that surface, so a real AXL binary can replace the shim.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Read;
use std::net::{Ipv6Addr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::wire::{Frame, MAX_FRAME_LEN};
use crate::{GossipConfig, GossipEngine, GossipError, GossipMessage, MessageId, PeerId, ReceiveBuffer};

pub const DESTINATION_HEADER: &str = "X-Destination-Peer-Id";
pub const FROM_HEADER: &str = "X-From-Peer-Id";
pub const DEFAULT_PORT: u16 = 9002;

const RECV_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, thiserror::Error)]
pub enum AxlError {
    #[error("cannot start shim on {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("HTTP request failed: {0}")]
    Http(String),
    #[error("unexpected status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyPeer {
    pub public_key: PeerId,
    pub addr: String,
}

/// Body of `GET /topology`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub our_ipv6: String,
    pub our_public_key: PeerId,
    pub peers: Vec<TopologyPeer>,
}

/// Stable address in 200::/7 derived from the identity, in the style of an
/// overlay address. Nothing routes to it.
pub fn synthetic_ipv6(id: &PeerId) -> Ipv6Addr {
    let mut bytes = [0u8; 16];
    bytes[0] = 0x02;
    bytes[1..].copy_from_slice(&id.as_bytes()[..15]);
    Ipv6Addr::from(bytes)
}

struct ShimState {
    local: PeerId,
    inbox: Mutex<VecDeque<(PeerId, Vec<u8>)>>,
    peers: Mutex<HashMap<PeerId, String>>,
}

/// Localhost stand-in for an AXL node.
pub struct AxlShim {
    state: Arc<ShimState>,
    server: Arc<Server>,
    addr: SocketAddr,
    running: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl AxlShim {
    /// Bind `listen` (port 0 picks a free one) and serve until dropped.
    pub fn start(local: PeerId, listen: &str) -> Result<AxlShim, AxlError> {
        let bind_err = |message: String| AxlError::Bind {
            addr: listen.to_string(),
            message,
        };
        let server = Arc::new(Server::http(listen).map_err(|e| bind_err(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| bind_err("not an IP listener".into()))?;
        let state = Arc::new(ShimState {
            local,
            inbox: Mutex::new(VecDeque::new()),
            peers: Mutex::new(HashMap::new()),
        });
        let running = Arc::new(AtomicBool::new(true));
        let (out_tx, out_rx) = mpsc::channel::<(String, Vec<u8>)>();

        let serve = {
            let (state, server, out_tx) = (Arc::clone(&state), Arc::clone(&server), out_tx);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle_request(&state, &out_tx, request);
                }
            })
        };
        let forward = {
            let local = state.local;
            thread::spawn(move || forward_loop(local, out_rx))
        };
        Ok(AxlShim {
            state,
            server,
            addr,
            running,
            threads: vec![serve, forward],
        })
    }

    pub fn local(&self) -> PeerId {
        self.state.local
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Route for `/send` to `peer`: the base URL of its shim.
    pub fn add_peer(&self, peer: PeerId, url: &str) {
        self.state
            .peers
            .lock()
            .expect("peer table lock")
            .insert(peer, url.trim_end_matches('/').to_string());
    }

    pub fn shutdown(&mut self) {
        if !self.running.swap(false, Ordering::SeqCst) {
            return;
        }
        self.server.unblock();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for AxlShim {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn header(request: &Request, name: &str) -> Option<String> {
    request
        .headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str().to_string())
}

fn text(status: u16, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body).with_status_code(status)
}

fn read_body(request: &mut Request) -> Result<Vec<u8>, u16> {
    if request.body_length().is_some_and(|n| n > MAX_FRAME_LEN) {
        return Err(413);
    }
    let mut body = Vec::new();
    request
        .as_reader()
        .take(MAX_FRAME_LEN as u64 + 1)
        .read_to_end(&mut body)
        .map_err(|_| 400u16)?;
    if body.len() > MAX_FRAME_LEN {
        return Err(413);
    }
    Ok(body)
}

fn peer_header(request: &Request, name: &str) -> Result<PeerId, String> {
    let value = header(request, name).ok_or_else(|| format!("missing {name}"))?;
    value.parse().map_err(|e| format!("{name}: {e}"))
}

fn handle_request(state: &ShimState, out: &Sender<(String, Vec<u8>)>, mut request: Request) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let response = match (request.method().clone(), path.as_str()) {
        (Method::Post, "/send") => match peer_header(&request, DESTINATION_HEADER) {
            Err(e) => text(400, &e),
            Ok(dest) => match read_body(&mut request) {
                Err(status) => text(status, "bad body"),
                Ok(body) if dest == state.local => {
                    state.inbox.lock().expect("inbox lock").push_back((state.local, body));
                    text(200, "")
                }
                Ok(body) => match state.peers.lock().expect("peer table lock").get(&dest) {
                    None => text(404, "unknown destination peer"),
                    Some(url) => {
                        let _ = out.send((format!("{url}/deliver"), body));
                        text(200, "")
                    }
                },
            },
        },
        (Method::Post, "/deliver") => match peer_header(&request, FROM_HEADER) {
            Err(e) => text(400, &e),
            Ok(from) => match read_body(&mut request) {
                Err(status) => text(status, "bad body"),
                Ok(body) => {
                    state.inbox.lock().expect("inbox lock").push_back((from, body));
                    text(200, "")
                }
            },
        },
        (Method::Get, "/recv") => match state.inbox.lock().expect("inbox lock").pop_front() {
            None => Response::from_data(Vec::new()).with_status_code(204),
            Some((from, body)) => Response::from_data(body).with_status_code(200).with_header(
                Header::from_bytes(FROM_HEADER.as_bytes(), from.to_string().as_bytes()).expect("ascii header"),
            ),
        },
        (Method::Get, "/topology") => {
            let mut peers: Vec<TopologyPeer> = state
                .peers
                .lock()
                .expect("peer table lock")
                .iter()
                .map(|(id, url)| TopologyPeer {
                    public_key: *id,
                    addr: url.clone(),
                })
                .collect();
            peers.sort_by_key(|p| p.public_key);
            let topology = Topology {
                our_ipv6: synthetic_ipv6(&state.local).to_string(),
                our_public_key: state.local,
                peers,
            };
            let body = serde_json::to_vec(&topology).expect("topology serializes");
            Response::from_data(body)
                .with_status_code(200)
                .with_header(Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("ascii header"))
        }
        _ => text(404, "not found"),
    };
    if let Err(e) = request.respond(response) {
        log::debug!("axl shim: response failed: {e}");
    }
}

fn forward_loop(local: PeerId, rx: Receiver<(String, Vec<u8>)>) {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(5)))
        .http_status_as_error(false)
        .build()
        .into();
    let from = local.to_string();
    for (url, body) in rx {
        match agent.post(&url).header(FROM_HEADER, &from).send(&body[..]) {
            Ok(r) if r.status().as_u16() == 200 => {}
            Ok(r) => log::warn!("axl shim: {url} answered {}", r.status()),
            Err(e) => log::warn!("axl shim: delivery to {url} failed: {e}"),
        }
    }
}

/// Client for an AXL-style local API.
#[derive(Clone)]
pub struct AxlClient {
    base: String,
    agent: ureq::Agent,
}

impl AxlClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        AxlClient {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn send(&self, dest: &PeerId, bytes: &[u8]) -> Result<(), AxlError> {
        let mut r = self
            .agent
            .post(&format!("{}/send", self.base))
            .header(DESTINATION_HEADER, &dest.to_string())
            .send(bytes)
            .map_err(|e| AxlError::Http(e.to_string()))?;
        let status = r.status().as_u16();
        if status != 200 {
            let body = r.body_mut().read_to_string().unwrap_or_default();
            return Err(AxlError::Status { status, body });
        }
        Ok(())
    }

    /// One inbound message, or `None` when the queue is empty.
    pub fn recv(&self) -> Result<Option<(PeerId, Vec<u8>)>, AxlError> {
        let mut r = self
            .agent
            .get(&format!("{}/recv", self.base))
            .call()
            .map_err(|e| AxlError::Http(e.to_string()))?;
        match r.status().as_u16() {
            204 => Ok(None),
            200 => {
                let from = r
                    .headers()
                    .get(FROM_HEADER)
                    .and_then(|v| v.to_str().ok())
                    .ok_or_else(|| AxlError::Malformed(format!("missing {FROM_HEADER}")))?
                    .parse::<PeerId>()
                    .map_err(|e| AxlError::Malformed(e.to_string()))?;
                let body = r
                    .body_mut()
                    .with_config()
                    .limit(MAX_FRAME_LEN as u64 + 1)
                    .read_to_vec()
                    .map_err(|e| AxlError::Http(e.to_string()))?;
                Ok(Some((from, body)))
            }
            status => Err(AxlError::Status {
                status,
                body: r.body_mut().read_to_string().unwrap_or_default(),
            }),
        }
    }

    pub fn topology(&self) -> Result<Topology, AxlError> {
        let mut r = self
            .agent
            .get(&format!("{}/topology", self.base))
            .call()
            .map_err(|e| AxlError::Http(e.to_string()))?;
        let status = r.status().as_u16();
        if status != 200 {
            return Err(AxlError::Status {
                status,
                body: r.body_mut().read_to_string().unwrap_or_default(),
            });
        }
        r.body_mut().read_json().map_err(|e| AxlError::Malformed(e.to_string()))
    }
}

enum Command {
    Publish {
        topic: String,
        payload: Vec<u8>,
        reply: Sender<Result<MessageId, GossipError>>,
    },
    Subscribe(String),
    Shutdown,
}

/// Gossip engine driven through an AXL-style API. Frames travel as
/// `/send` bodies without the stream length prefix.
pub struct AxlNode {
    local: PeerId,
    commands: Sender<Command>,
    buffer: Arc<ReceiveBuffer>,
    thread: Option<JoinHandle<()>>,
}

impl AxlNode {
    /// Reads identity and peers from `/topology`, then starts polling.
    pub fn start(base_url: &str, gossip: GossipConfig, seed: u64) -> Result<AxlNode, GossipError> {
        gossip.validate()?;
        let client = AxlClient::new(base_url);
        let topology = client.topology().map_err(|e| {
            log::warn!("axl: topology query failed: {e}");
            GossipError::TransportDown
        })?;
        let local = topology.our_public_key;
        let engine = GossipEngine::new(local, gossip, seed);
        let buffer = engine.buffer();
        let peers: Vec<PeerId> = topology.peers.iter().map(|p| p.public_key).collect();
        let (tx, rx) = mpsc::channel();
        let thread = thread::spawn(move || axl_loop(engine, client, peers, rx));
        Ok(AxlNode {
            local,
            commands: tx,
            buffer,
            thread: Some(thread),
        })
    }

    pub fn local(&self) -> PeerId {
        self.local
    }

    pub fn subscribe(&self, topic: &str) -> Result<(), GossipError> {
        self.commands
            .send(Command::Subscribe(topic.to_string()))
            .map_err(|_| GossipError::TransportDown)
    }

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
        let _ = self.commands.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for AxlNode {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn axl_loop(mut engine: GossipEngine, client: AxlClient, peers: Vec<PeerId>, rx: Receiver<Command>) {
    let start = Instant::now();
    let heartbeat = engine.config().heartbeat();
    let mut next_beat = start + heartbeat;
    // Peers whose subscription announcement has not gone through yet.
    let mut unannounced: HashSet<PeerId> = peers.into_iter().collect();

    let send = |engine: &mut GossipEngine, unannounced: &mut HashSet<PeerId>, out: Vec<crate::Outbound>| {
        for o in out {
            if let Err(e) = client.send(&o.to, &o.frame.encode_body()) {
                log::warn!("axl: send to {} failed: {e}", o.to.short());
                engine.remove_peer(&o.to);
                unannounced.insert(o.to);
            }
        }
    };

    loop {
        let wait = next_beat.saturating_duration_since(Instant::now()).min(RECV_POLL);
        match rx.recv_timeout(wait) {
            Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
            Ok(Command::Publish { topic, payload, reply }) => match engine.publish(&topic, payload, start.elapsed()) {
                Ok((id, out)) => {
                    let _ = reply.send(Ok(id));
                    send(&mut engine, &mut unannounced, out);
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                }
            },
            Ok(Command::Subscribe(topic)) => {
                let out = engine.subscribe(&topic);
                send(&mut engine, &mut unannounced, out);
            }
            Err(RecvTimeoutError::Timeout) => {}
        }

        loop {
            match client.recv() {
                Ok(Some((from, bytes))) => match Frame::decode_body(&bytes) {
                    Ok(frame) => {
                        let out = engine.handle(from, frame, start.elapsed());
                        send(&mut engine, &mut unannounced, out);
                    }
                    Err(e) => log::warn!("axl: bad frame from {}: {e}", from.short()),
                },
                Ok(None) => break,
                Err(e) => {
                    log::warn!("axl: recv failed: {e}");
                    break;
                }
            }
        }

        if Instant::now() >= next_beat {
            next_beat += heartbeat;
            let pending: Vec<PeerId> = unannounced.drain().collect();
            for peer in pending {
                let out = engine.add_peer(peer);
                send(&mut engine, &mut unannounced, out);
            }
            let out = engine.heartbeat(start.elapsed());
            send(&mut engine, &mut unannounced, out);
        }
    }
}
