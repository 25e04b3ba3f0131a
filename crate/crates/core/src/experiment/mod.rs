//! Runs the solo, homogeneous and diverse conditions at equal call budget
//! over the simulated network, then scores champions on a held-out corpus
//! and builds merged archives. The run directory layout and file formats
//! are described in docs/EXPERIMENT.md.

mod report;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use dei_gossip::sim::{SimConfig, SimNetwork};
use serde::{Deserialize, Serialize};

use crate::archive::{merge, Archive, ArchiveError, BcGrid};
use crate::corpus::{self, CorpusError};
use crate::drq::{Champion, DrqError, Evaluator, IterationSummary, Node, NodeConfig, RoundReport, DEFAULT_TOPIC};
use crate::mars::{win_tie, MarsConfig, MarsError};
use crate::mutation::{MutationError, OperatorSpec, Templates};
use crate::redcode::Warrior;
use crate::seed::mix;

pub use report::{report, write_report, ConditionRow, MergedRow, Report};

const NETWORK_SALT: u64 = 0x6e65_7477;
const MARS_SALT: u64 = 0x6d61_7273;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("node {node} logged {logged} operator calls, expected {expected}")]
    BudgetMismatch { node: String, logged: u64, expected: u64 },
    #[error("node {node} failed: {source}")]
    Node {
        node: String,
        #[source]
        source: DrqError,
    },
    #[error(transparent)]
    Drq(#[from] DrqError),
    #[error(transparent)]
    Mars(#[from] MarsError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no runs to report")]
    NoRuns,
    #[error("held-out corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Solo,
    Homogeneous,
    Diverse,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Solo => "solo",
            Condition::Homogeneous => "homogeneous",
            Condition::Diverse => "diverse",
        }
    }
}

/// How elites from different nodes are compared when merging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Re-evaluate every elite against the union of all final opponent
    /// pools before merging.
    #[default]
    Rescore,
    /// Compare the fitnesses stored in each archive.
    Stored,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Every node linked to every other.
    #[default]
    Full,
    /// A ring plus `chords` random extra links per node.
    Ring { chords: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub topology: TopologySpec,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    /// Directory of `.red` files for the initial pool; bundled seeds if unset.
    pub seeds_dir: Option<PathBuf>,
    /// Directory of `.red` files for generality; bundled corpus if unset.
    pub heldout_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub operator: OperatorSpec,
    /// Overrides the even split of `budget_per_round`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters_per_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub condition: Condition,
    /// Row label in reports; defaults to the condition name.
    pub label: Option<String>,
    pub rounds: u32,
    /// Operator calls per round summed over all nodes; each node gets
    /// `budget_per_round / nodes` unless it overrides.
    pub budget_per_round: u32,
    pub nodes: Vec<NodeSpec>,
    pub p_new: f64,
    pub champion_window: Option<usize>,
    pub topic: String,
    pub mars: MarsConfig,
    /// Defaults to a 10x10 grid sized for `mars`.
    pub grid: Option<BcGrid>,
    /// One trial per seed.
    pub seeds: Vec<u64>,
    pub corpus: CorpusSpec,
    pub templates_dir: Option<PathBuf>,
    pub network: NetworkSpec,
    pub merge: MergeMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            condition: Condition::Solo,
            label: None,
            rounds: 10,
            budget_per_round: 250,
            nodes: vec![NodeSpec {
                node_id: None,
                operator: OperatorSpec::mock("uniform"),
                iters_per_round: None,
            }],
            p_new: 0.1,
            champion_window: Some(5),
            topic: DEFAULT_TOPIC.into(),
            mars: MarsConfig::default(),
            grid: None,
            seeds: vec![0],
            corpus: CorpusSpec::default(),
            templates_dir: None,
            network: NetworkSpec::default(),
            merge: MergeMode::default(),
        }
    }
}

impl ExperimentConfig {
    /// Read a JSON experiment file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| ExperimentError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.corpus.seeds_dir);
        resolve(&mut cfg.corpus.heldout_dir);
        resolve(&mut cfg.templates_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.condition.as_str().to_string())
    }

    pub fn grid(&self) -> BcGrid {
        self.grid.clone().unwrap_or_else(|| BcGrid::for_mars(&self.mars))
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| n.node_id.clone().unwrap_or_else(|| format!("n{i}")))
            .collect()
    }

    pub fn iters_for(&self, node: usize) -> u32 {
        self.nodes[node]
            .iters_per_round
            .unwrap_or(self.budget_per_round / self.nodes.len().max(1) as u32)
    }

    /// Calls per round over all nodes.
    pub fn calls_per_round(&self) -> u32 {
        (0..self.nodes.len()).map(|i| self.iters_for(i)).sum()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        let n = self.nodes.len();
        if n == 0 {
            return fail("at least one node is required".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one trial seed is required".into());
        }
        let ids = self.node_ids();
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != n {
            return fail("node ids must be unique".into());
        }
        let identities: Vec<String> = self.nodes.iter().map(|s| s.operator.identity()).collect();
        let distinct = {
            let mut d = identities.clone();
            d.sort();
            d.dedup();
            d.len()
        };
        match self.condition {
            Condition::Solo if n != 1 => return fail(format!("solo needs exactly one node, got {n}")),
            Condition::Homogeneous if distinct != 1 => {
                return fail(format!("homogeneous needs one operator identity, got {identities:?}"))
            }
            Condition::Diverse if distinct < 2 => {
                return fail(format!("diverse needs at least two operator identities, got {identities:?}"))
            }
            _ => {}
        }
        let per_round = self.calls_per_round();
        if per_round > self.budget_per_round || self.budget_per_round - per_round >= n as u32 {
            return fail(format!(
                "nodes make {per_round} calls per round, which does not match budget_per_round {} up to rounding",
                self.budget_per_round
            ));
        }
        if (0..n).any(|i| self.iters_for(i) == 0) {
            return fail("every node needs at least one call per round".into());
        }
        self.mars.validate()?;
        self.grid().validate()?;
        self.network
            .sim
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Fraction of `corpus` that `w` beats or ties.
pub fn generality(w: &Warrior, corpus: &[Warrior], cfg: &MarsConfig, seed: u64) -> Result<f64, ExperimentError> {
    if corpus.is_empty() {
        return Err(ExperimentError::EmptyCorpus);
    }
    let mut wins = 0usize;
    for h in corpus {
        if win_tie(w, h, cfg, seed)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / corpus.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralityRecord {
    pub node_id: String,
    pub round: u32,
    pub champion_hash: String,
    pub generality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub round: u32,
    pub coverage: f64,
    pub qd_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub operator: String,
    pub calls: u64,
    pub peak_generality: Option<f64>,
    pub final_coverage: f64,
    pub final_qd_score: f64,
    /// Mean over rounds in which something was received.
    pub mean_niche_novelty: Option<f64>,
    /// Simulated seconds per round.
    pub round_durations: Vec<f64>,
}

/// Contents of `summary.json` for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub name: String,
    pub condition: Condition,
    pub label: String,
    pub trial_seed: u64,
    pub rounds: u32,
    pub nodes: Vec<NodeSummary>,
    /// Merged archive after the final round, stored fitnesses.
    pub merged_coverage: f64,
    pub merged_qd_score: f64,
    /// Final merged archive under the configured merge mode.
    pub merge_mode: MergeMode,
    pub final_merged_qd_score: f64,
    pub calls_total: u64,
    pub heldout_hashes: Vec<String>,
    pub seed_hashes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    End,
    Start,
}

struct NodeLogs {
    dir: PathBuf,
    rounds: BufWriter<File>,
    calls: BufWriter<File>,
    champions: BufWriter<File>,
}

impl NodeLogs {
    fn create(dir: PathBuf) -> Result<Self, ExperimentError> {
        fs::create_dir_all(&dir)?;
        let open = |name: &str| -> Result<BufWriter<File>, ExperimentError> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        Ok(NodeLogs {
            rounds: open("rounds.jsonl")?,
            calls: open("calls.jsonl")?,
            champions: open("champions.jsonl")?,
            dir,
        })
    }
}

fn write_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<(), ExperimentError> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let file = File::open(path).map_err(|e| ExperimentError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExperimentError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn secs(d: u64) -> f64 {
    d as f64 / 1e9
}

/// Everything one trial needs that does not depend on the trial seed.
struct Setup {
    seeds: Vec<Warrior>,
    heldout: Vec<Warrior>,
    templates: Templates,
}

impl Setup {
    fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let opts = cfg.mars.parse_options();
        let seeds = match &cfg.corpus.seeds_dir {
            Some(dir) => corpus::load_dir(dir, &opts)?,
            None => corpus::seeds(&opts),
        };
        let heldout = match &cfg.corpus.heldout_dir {
            Some(dir) => corpus::load_dir(dir, &opts)?,
            None => corpus::heldout(&opts),
        };
        if heldout.is_empty() {
            return Err(ExperimentError::EmptyCorpus);
        }
        let templates = match &cfg.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::default(),
        };
        Ok(Setup {
            seeds,
            heldout,
            templates,
        })
    }
}

/// Run every trial of `cfg` into `out/<name>/` and return the summaries.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrialSummary>, ExperimentError> {
    cfg.validate()?;
    let setup = Setup::load(cfg)?;
    let dir = out.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("experiment.json"), cfg)?;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        summaries.push(run_trial(cfg, &setup, seed, &dir.join(format!("trial-{seed}")))?);
    }
    Ok(summaries)
}

fn run_trial(cfg: &ExperimentConfig, setup: &Setup, trial_seed: u64, dir: &Path) -> Result<TrialSummary, ExperimentError> {
    fs::create_dir_all(dir)?;
    let n = cfg.nodes.len();
    let ids = cfg.node_ids();
    // One battle seed per trial, shared by every condition run with it.
    let mars = MarsConfig {
        rng_seed: mix(trial_seed, MARS_SALT),
        ..cfg.mars.clone()
    };
    let grid = cfg.grid();

    let mut nodes = Vec::with_capacity(n);
    for (i, spec) in cfg.nodes.iter().enumerate() {
        let node_cfg = NodeConfig {
            node_id: ids[i].clone(),
            operator: spec.operator.clone(),
            rounds: cfg.rounds,
            iters_per_round: cfg.iters_for(i),
            p_new: cfg.p_new,
            champion_window: cfg.champion_window,
            topic: cfg.topic.clone(),
            rng_seed: mix(trial_seed, i as u64),
        };
        let operator = spec.operator.build(mars.parse_options(), &setup.templates)?;
        nodes.push(Node::new(
            node_cfg,
            operator,
            mars.clone(),
            grid.clone(),
            setup.seeds.clone(),
            &setup.templates,
        )?);
    }
    let mut logs = ids
        .iter()
        .map(|id| NodeLogs::create(dir.join(format!("node-{id}"))))
        .collect::<Result<Vec<_>, _>>()?;

    let mut net = SimNetwork::with_nodes(cfg.network.sim.clone(), mix(trial_seed, NETWORK_SALT), n);
    match cfg.network.topology {
        TopologySpec::Full => net.connect_all(),
        TopologySpec::Ring { chords } => net.connect_ring_with_chords(chords),
    }
    net.subscribe_all(&cfg.topic);

    let mut archives: Vec<Vec<Archive>> = vec![Vec::new(); n];
    let mut reports: Vec<Vec<RoundReport>> = vec![Vec::new(); n];
    let mut champions: Vec<Vec<Champion>> = vec![Vec::new(); n];
    let mut pending: Vec<Option<(IterationSummary, u64)>> = (0..n).map(|_| None).collect();
    let mut events: BinaryHeap<Reverse<(u64, usize, Phase)>> = (0..n).map(|i| Reverse((0, i, Phase::Start))).collect();

    while let Some(Reverse((t, i, phase))) = events.pop() {
        net.run_until(Duration::from_nanos(t));
        let node_err = |source: DrqError| ExperimentError::Node {
            node: ids[i].clone(),
            source,
        };
        match phase {
            Phase::Start => {
                let summary = nodes[i].run_iterations().map_err(node_err)?;
                let end = t + Duration::from_secs_f64(summary.busy_secs).as_nanos() as u64;
                pending[i] = Some((summary, t));
                events.push(Reverse((end, i, Phase::End)));
            }
            Phase::End => {
                let (summary, start) = pending[i].take().expect("round started");
                let champion = nodes[i].select_champion().map_err(node_err)?;
                if let Some(c) = &champion {
                    net.publish(i, &cfg.topic, c.to_payload())
                        .map_err(|e| node_err(DrqError::Transport(e.to_string())))?;
                }
                let received: Vec<Champion> = net
                    .drain(i)
                    .into_iter()
                    .filter_map(|m| match Champion::from_payload(&m.payload) {
                        Ok(c) => Some(c),
                        Err(e) => {
                            log::warn!("{}: dropping payload from {}: {e}", ids[i], m.sender.short());
                            None
                        }
                    })
                    .collect();
                let integration = nodes[i].integrate(received).map_err(node_err)?;
                let mut report = nodes[i].finish_round(&summary, champion.as_ref(), &integration);
                report.sim_start = Some(secs(start));
                report.sim_end = Some(secs(t));

                let log = &mut logs[i];
                for call in &summary.calls {
                    write_line(&mut log.calls, call)?;
                }
                write_line(&mut log.rounds, &report)?;
                if let Some(c) = &champion {
                    write_line(&mut log.champions, c)?;
                    champions[i].push(c.clone());
                }
                let archive = nodes[i].archive().clone();
                archive.write_jsonl(BufWriter::new(File::create(log.dir.join(format!("archive_r{:03}.jsonl", report.round)))?))?;
                archives[i].push(archive);
                reports[i].push(report);

                if nodes[i].round() < cfg.rounds {
                    events.push(Reverse((t, i, Phase::Start)));
                }
            }
        }
    }
    for log in &mut logs {
        log.rounds.flush()?;
        log.calls.flush()?;
        log.champions.flush()?;
    }

    // Budget exactness, checked against what was written.
    for (i, log) in logs.iter().enumerate() {
        let logged = BufReader::new(File::open(log.dir.join("calls.jsonl"))?).lines().count() as u64;
        let expected = u64::from(cfg.rounds) * u64::from(cfg.iters_for(i));
        if logged != expected {
            return Err(ExperimentError::BudgetMismatch {
                node: ids[i].clone(),
                logged,
                expected,
            });
        }
    }

    // Generality of every round champion, sharing battle seeds.
    let mut gen_cache: BTreeMap<String, f64> = BTreeMap::new();
    let mut gen_out = BufWriter::new(File::create(dir.join("generality.jsonl"))?);
    let mut peaks: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        for c in &champions[i] {
            let g = match gen_cache.get(&c.hash) {
                Some(g) => *g,
                None => {
                    let g = generality(&c.warrior, &setup.heldout, &mars, mars.rng_seed)?;
                    gen_cache.insert(c.hash.clone(), g);
                    g
                }
            };
            peaks[i] = Some(peaks[i].map_or(g, |p: f64| p.max(g)));
            write_line(
                &mut gen_out,
                &GeneralityRecord {
                    node_id: ids[i].clone(),
                    round: c.round,
                    champion_hash: c.hash.clone(),
                    generality: g,
                },
            )?;
        }
    }
    gen_out.flush()?;

    // Merged archive per round from stored fitnesses.
    let mut merged_out = BufWriter::new(File::create(dir.join("merged.jsonl"))?);
    let mut last_merged = None;
    for r in 0..cfg.rounds as usize {
        let at_round: Vec<Archive> = archives.iter().map(|a| a[r].clone()).collect();
        let merged = merge(&at_round)?;
        write_line(
            &mut merged_out,
            &MergedRecord {
                round: r as u32 + 1,
                coverage: merged.coverage(),
                qd_score: merged.qd_score(),
            },
        )?;
        last_merged = Some(merged);
    }
    merged_out.flush()?;
    let stored_merged = last_merged.expect("at least one round");

    let finals: Vec<Archive> = archives.iter().map(|a| a.last().expect("rounds ran").clone()).collect();
    let final_merged = match cfg.merge {
        MergeMode::Stored => stored_merged.clone(),
        MergeMode::Rescore => {
            let mut reference: BTreeMap<String, Warrior> = BTreeMap::new();
            for node in &nodes {
                reference.extend(node.pool().members());
            }
            let reference: Vec<(String, Warrior)> = reference.into_iter().collect();
            let mut evaluator = Evaluator::new(mars.clone(), mars.rng_seed);
            let rescored = finals
                .iter()
                .map(|a| a.rescored(|e| evaluator.evaluate(&e.warrior, &reference).map(|ev| ev.fitness)))
                .collect::<Result<Vec<_>, _>>()?;
            merge(&rescored)?
        }
    };
    final_merged.write_jsonl(BufWriter::new(File::create(dir.join("merged_archive.jsonl"))?))?;

    let summary = TrialSummary {
        name: cfg.name.clone(),
        condition: cfg.condition,
        label: cfg.label(),
        trial_seed,
        rounds: cfg.rounds,
        nodes: (0..n)
            .map(|i| {
                let novelty: Vec<f64> = reports[i].iter().filter_map(|r| r.niche_novelty).collect();
                NodeSummary {
                    node_id: ids[i].clone(),
                    operator: nodes[i].operator_identity().to_string(),
                    calls: nodes[i].calls_total(),
                    peak_generality: peaks[i],
                    final_coverage: finals[i].coverage(),
                    final_qd_score: finals[i].qd_score(),
                    mean_niche_novelty: (!novelty.is_empty()).then(|| novelty.iter().sum::<f64>() / novelty.len() as f64),
                    round_durations: reports[i]
                        .iter()
                        .map(|r| r.sim_end.unwrap_or(0.0) - r.sim_start.unwrap_or(0.0))
                        .collect(),
                }
            })
            .collect(),
        merged_coverage: stored_merged.coverage(),
        merged_qd_score: stored_merged.qd_score(),
        merge_mode: cfg.merge,
        final_merged_qd_score: final_merged.qd_score(),
        calls_total: nodes.iter().map(|n| n.calls_total()).sum(),
        heldout_hashes: corpus::hashes(&setup.heldout),
        seed_hashes: corpus::hashes(&setup.seeds),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
