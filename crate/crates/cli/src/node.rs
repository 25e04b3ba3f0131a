//! `dei node`: one DRQ node on a real transport, paced by its own operator
//! calls. Peers never wait for each other; whatever arrived since the last
//! round is integrated at the end of the next one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use dei_core::archive::BcGrid;
use dei_core::corpus;
use dei_core::drq::{Champion, ChampionChannel, DrqError, Node, NodeConfig};
use dei_core::mars::MarsConfig;
use dei_core::mutation::Templates;
use dei_gossip::axl::AxlNode;
use dei_gossip::tcp::{read_peers_file, TcpConfig, TcpNode};
use dei_gossip::{GossipConfig, GossipError, GossipMessage};
use serde::{Deserialize, Serialize};

use crate::{input_err, peer_id_arg, CliError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Transport {
    Tcp {
        listen: SocketAddr,
        #[serde(default)]
        peers_file: Option<PathBuf>,
    },
    Axl {
        url: String,
    },
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub node: NodeConfig,
    #[serde(default)]
    pub mars: MarsConfig,
    #[serde(default)]
    pub grid: Option<BcGrid>,
    /// Hex id or a label to derive one from; defaults to the node id. Ignored
    /// by the AXL transport, which takes the shim's key.
    #[serde(default)]
    pub peer_id: Option<String>,
    pub transport: Transport,
    #[serde(default)]
    pub gossip: GossipConfig,
    #[serde(default)]
    pub seeds_dir: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Pause before the first round for the mesh to form, and after the
    /// last one so the final champion gets out.
    #[serde(default = "default_settle")]
    pub settle_secs: f64,
}

fn default_settle() -> f64 {
    2.0
}

impl NodeFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
        let mut f: NodeFile = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut f.out);
        f.seeds_dir.as_mut().map(resolve);
        f.templates_dir.as_mut().map(resolve);
        if let Transport::Tcp {
            peers_file: Some(p), ..
        } = &mut f.transport
        {
            resolve(p);
        }
        if !(f.settle_secs >= 0.0 && f.settle_secs.is_finite()) {
            return Err(input_err(path, "settle_secs must be a finite non-negative number"));
        }
        f.gossip.validate().map_err(|e| input_err(path, e))?;
        Ok(f)
    }
}

enum Link {
    Tcp(TcpNode),
    Axl(AxlNode),
}

struct GossipChannel {
    link: Link,
    topic: String,
}

impl GossipChannel {
    fn shutdown(&mut self) {
        match &mut self.link {
            Link::Tcp(n) => n.shutdown(),
            Link::Axl(n) => n.shutdown(),
        }
    }
}

impl ChampionChannel for GossipChannel {
    fn publish(&mut self, champion: &Champion) -> Result<(), DrqError> {
        let payload = champion.to_payload();
        let r: Result<_, GossipError> = match &self.link {
            Link::Tcp(n) => n.publish(&self.topic, payload),
            Link::Axl(n) => n.publish(&self.topic, payload),
        };
        r.map(|_| ()).map_err(|e| DrqError::Transport(e.to_string()))
    }

    fn drain(&mut self) -> Vec<Champion> {
        let msgs: Vec<GossipMessage> = match &self.link {
            Link::Tcp(n) => n.drain(),
            Link::Axl(n) => n.drain(),
        };
        msgs.into_iter()
            .filter(|m| m.topic == self.topic)
            .filter_map(|m| match Champion::from_payload(&m.payload) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::warn!("dropping payload from {}: {e}", m.sender.short());
                    None
                }
            })
            .collect()
    }
}

fn write_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn run(config: &Path, peers_override: Option<&Path>) -> Result<(), CliError> {
    let f = NodeFile::load(config)?;
    f.mars.validate()?;
    let opts = f.mars.parse_options();
    let seeds = match &f.seeds_dir {
        Some(d) => corpus::load_dir(d, &opts)?,
        None => corpus::seeds(&opts),
    };
    let templates = match &f.templates_dir {
        Some(d) => Templates::load_dir(d).map_err(DrqError::from)?,
        None => Templates::default(),
    };
    let grid = f.grid.clone().unwrap_or_else(|| BcGrid::for_mars(&f.mars));
    let operator = f.node.operator.build(opts, &templates).map_err(DrqError::from)?;
    let mut node = Node::new(f.node.clone(), operator, f.mars.clone(), grid, seeds, &templates)?;

    let link = match &f.transport {
        Transport::Tcp { listen, peers_file } => {
            let local = peer_id_arg(f.peer_id.as_deref().unwrap_or(&f.node.node_id));
            let peers = match peers_override.or(peers_file.as_deref()) {
                Some(p) => read_peers_file(p).map_err(|e| input_err(p, e))?,
                None => Vec::new(),
            };
            let mut tcp = TcpConfig::new(local, *listen, peers);
            tcp.gossip = f.gossip.clone();
            tcp.seed = f.node.rng_seed;
            let n = TcpNode::start(tcp)?;
            log::info!("{} is {} on {}", f.node.node_id, local, n.local_addr());
            Link::Tcp(n)
        }
        Transport::Axl { url } => {
            if peers_override.is_some() {
                return Err(CliError::Usage("--peers applies to the tcp transport only".into()));
            }
            let n = AxlNode::start(url, f.gossip.clone(), f.node.rng_seed)?;
            log::info!("{} is {} via {url}", f.node.node_id, n.local());
            Link::Axl(n)
        }
    };
    let mut channel = GossipChannel {
        link,
        topic: f.node.topic.clone(),
    };
    match &channel.link {
        Link::Tcp(n) => n.subscribe(&channel.topic)?,
        Link::Axl(n) => n.subscribe(&channel.topic)?,
    }
    let settle = Duration::from_secs_f64(f.settle_secs);
    std::thread::sleep(settle);

    fs::create_dir_all(&f.out)?;
    let open = |name: &str| -> Result<BufWriter<File>, CliError> { Ok(BufWriter::new(File::create(f.out.join(name))?)) };
    let mut rounds = open("rounds.jsonl")?;
    let mut calls = open("calls.jsonl")?;
    let mut champions = open("champions.jsonl")?;

    for _ in 0..f.node.rounds {
        let (report, summary, champion) = node.run_round(&mut channel)?;
        for call in &summary.calls {
            write_line(&mut calls, call)?;
        }
        write_line(&mut rounds, &report)?;
        if let Some(c) = &champion {
            write_line(&mut champions, c)?;
        }
        for w in [&mut rounds, &mut calls, &mut champions] {
            w.flush()?;
        }
        node.archive()
            .write_jsonl(BufWriter::new(File::create(f.out.join(format!("archive_r{:03}.jsonl", report.round)))?))?;
        log::info!(
            "{} round {}: coverage {:.3}, QD {:.3}, received {}",
            f.node.node_id,
            report.round,
            report.coverage,
            report.qd_score,
            report.received
        );
    }
    std::thread::sleep(settle);
    channel.shutdown();
    Ok(())
}
