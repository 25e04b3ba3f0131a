use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use dei_gossip::axl::{AxlClient, AxlNode, AxlShim};
use dei_gossip::tcp::{PeerAddr, TcpConfig, TcpNode};
use dei_gossip::{GossipConfig, GossipError, GossipMessage, PeerId};

const T: &str = "dei/champions";

fn fast_gossip() -> GossipConfig {
    GossipConfig {
        heartbeat_secs: 0.1,
        ..Default::default()
    }
}

fn wait_for(mut f: impl FnMut() -> bool, limit: Duration) -> bool {
    let until = Instant::now() + limit;
    while Instant::now() < until {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(20));
    }
    f()
}

fn free_addr() -> SocketAddr {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap()
}

#[test]
fn tcp_nodes_exchange_messages() {
    let ids: Vec<PeerId> = (0..3).map(|k| PeerId::from_label(&format!("tcp{k}"))).collect();
    let addrs: Vec<SocketAddr> = (0..3).map(|_| free_addr()).collect();
    let mut nodes: Vec<TcpNode> = (0..3)
        .map(|i| {
            let peers = (0..3)
                .filter(|&j| j != i)
                .map(|j| PeerAddr {
                    id: ids[j],
                    addr: addrs[j].to_string(),
                })
                .collect();
            let mut cfg = TcpConfig::new(ids[i], addrs[i], peers);
            cfg.gossip = fast_gossip();
            cfg.backoff_base = Duration::from_millis(50);
            cfg.seed = i as u64;
            let node = TcpNode::start(cfg).unwrap();
            node.subscribe(T).unwrap();
            node
        })
        .collect();

    thread::sleep(Duration::from_millis(500));
    let id = nodes[0].publish(T, b"champion".to_vec()).unwrap();
    let mut got: Vec<Vec<GossipMessage>> = vec![Vec::new(); 3];
    let all = wait_for(
        || {
            for (k, n) in nodes.iter().enumerate() {
                got[k].extend(n.drain());
            }
            got[1].len() == 1 && got[2].len() == 1
        },
        Duration::from_secs(10),
    );
    assert!(all, "delivery over tcp timed out: {got:?}");
    assert_eq!(got[1][0].id, id);
    assert_eq!(got[2][0].payload, b"champion");
    assert!(got[0].is_empty(), "publisher does not receive its own message");

    nodes[0].shutdown();
    assert!(matches!(nodes[0].publish(T, vec![1]), Err(GossipError::TransportDown)));

    // the survivors still talk
    nodes[1].publish(T, b"again".to_vec()).unwrap();
    assert!(wait_for(|| !nodes[2].drain().is_empty(), Duration::from_secs(10)));
}

#[test]
fn tcp_redials_a_restarted_peer() {
    let (a, b) = {
        let mut ids = [PeerId::from_label("ra"), PeerId::from_label("rb")];
        ids.sort();
        (ids[0], ids[1])
    };
    let (addr_a, addr_b) = (free_addr(), free_addr());
    let cfg = |me: PeerId, at: SocketAddr, other: PeerId, other_at: SocketAddr| {
        let mut c = TcpConfig::new(
            me,
            at,
            vec![PeerAddr {
                id: other,
                addr: other_at.to_string(),
            }],
        );
        c.gossip = fast_gossip();
        c.backoff_base = Duration::from_millis(50);
        c.backoff_cap = Duration::from_millis(400);
        c
    };
    // a has the lower id and dials
    let node_a = TcpNode::start(cfg(a, addr_a, b, addr_b)).unwrap();
    node_a.subscribe(T).unwrap();
    let mut node_b = TcpNode::start(cfg(b, addr_b, a, addr_a)).unwrap();
    node_b.subscribe(T).unwrap();
    thread::sleep(Duration::from_millis(400));
    node_a.publish(T, b"one".to_vec()).unwrap();
    assert!(wait_for(|| !node_b.drain().is_empty(), Duration::from_secs(5)));

    node_b.shutdown();
    drop(node_b);
    thread::sleep(Duration::from_millis(300));
    let node_b = TcpNode::start(cfg(b, addr_b, a, addr_a)).unwrap();
    node_b.subscribe(T).unwrap();
    thread::sleep(Duration::from_millis(1500));
    node_a.publish(T, b"two".to_vec()).unwrap();
    assert!(wait_for(
        || node_b.drain().iter().any(|m| m.payload == b"two"),
        Duration::from_secs(5)
    ));
}

#[test]
fn axl_shim_recv_send_and_topology() {
    let a = PeerId::from_label("axl-a");
    let b = PeerId::from_label("axl-b");
    let shim_a = AxlShim::start(a, "127.0.0.1:0").unwrap();
    let shim_b = AxlShim::start(b, "127.0.0.1:0").unwrap();
    shim_a.add_peer(b, &shim_b.url());
    shim_b.add_peer(a, &shim_a.url());
    let (ca, cb) = (AxlClient::new(&shim_a.url()), AxlClient::new(&shim_b.url()));

    assert_eq!(cb.recv().unwrap(), None);

    let payload: Vec<u8> = (0..=255u8).chain([0, 0, 255]).collect();
    ca.send(&b, &payload).unwrap();
    let mut got = None;
    assert!(wait_for(
        || {
            got = got.take().or_else(|| cb.recv().unwrap());
            got.is_some()
        },
        Duration::from_secs(5)
    ));
    assert_eq!(got.unwrap(), (a, payload.clone()));
    assert_eq!(cb.recv().unwrap(), None);

    // sending to ourselves loops back
    ca.send(&a, b"self").unwrap();
    assert_eq!(ca.recv().unwrap(), Some((a, b"self".to_vec())));

    let topo = ca.topology().unwrap();
    assert_eq!(topo.our_public_key, a);
    assert_eq!(topo.peers.len(), 1);
    assert_eq!(topo.peers[0].public_key, b);
    assert!(topo.our_ipv6.parse::<std::net::Ipv6Addr>().is_ok());
}

#[test]
fn axl_shim_status_codes() {
    let a = PeerId::from_label("axl-c");
    let shim = AxlShim::start(a, "127.0.0.1:0").unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/send", shim.url());
    let short = &a.to_string()[..63];
    let status = |id: &str| {
        agent
            .post(&url)
            .header("X-Destination-Peer-Id", id)
            .send(&b"x"[..])
            .unwrap()
            .status()
            .as_u16()
    };
    assert_eq!(status(short), 400);
    assert_eq!(status(&a.to_string().to_uppercase()), 400);
    assert_eq!(status(&PeerId::from_label("nobody").to_string()), 404);
    assert_eq!(status(&a.to_string()), 200);
    let missing = agent.post(&url).send(&b"x"[..]).unwrap().status().as_u16();
    assert_eq!(missing, 400);

    let mut r = agent.get(&format!("{}/recv", shim.url())).call().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers().get("X-From-Peer-Id").unwrap().to_str().unwrap(), a.to_string());
    assert_eq!(r.body_mut().read_to_vec().unwrap(), b"x");
    let mut r = agent.get(&format!("{}/recv", shim.url())).call().unwrap();
    assert_eq!(r.status().as_u16(), 204);
    assert!(r.body_mut().read_to_vec().unwrap().is_empty());
}

#[test]
fn gossip_runs_over_axl_shims() {
    let ids: Vec<PeerId> = (0..3).map(|k| PeerId::from_label(&format!("mesh{k}"))).collect();
    let shims: Vec<AxlShim> = ids.iter().map(|id| AxlShim::start(*id, "127.0.0.1:0").unwrap()).collect();
    for (i, s) in shims.iter().enumerate() {
        for (j, o) in shims.iter().enumerate() {
            if i != j {
                s.add_peer(ids[j], &o.url());
            }
        }
    }
    let nodes: Vec<AxlNode> = shims
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = AxlNode::start(&s.url(), fast_gossip(), i as u64).unwrap();
            n.subscribe(T).unwrap();
            n
        })
        .collect();
    assert_eq!(nodes[1].local(), ids[1]);
    thread::sleep(Duration::from_millis(800));
    nodes[2].publish(T, b"over axl".to_vec()).unwrap();
    let mut got = [0usize; 3];
    assert!(wait_for(
        || {
            for (k, n) in nodes.iter().enumerate() {
                got[k] += n.drain().len();
            }
            got[0] == 1 && got[1] == 1
        },
        Duration::from_secs(10)
    ));
    assert_eq!(got[2], 0);
}
