//! `dei`: command-line front end for battles, experiments, live nodes and
//! the AXL shim.

mod node;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dei_core::archive::{merge, Archive};
use dei_core::corpus;
use dei_core::drq::Evaluator;
use dei_core::experiment::{self, ExperimentConfig};
use dei_core::mars::{run_battle_traced, MarsConfig};
use dei_core::redcode::{parse_with, serialize, Warrior};
use dei_gossip::axl::AxlShim;
use dei_gossip::PeerId;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error(transparent)]
    Mars(#[from] dei_core::mars::MarsError),
    #[error(transparent)]
    Archive(#[from] dei_core::archive::ArchiveError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Drq(#[from] dei_core::drq::DrqError),
    #[error(transparent)]
    Gossip(#[from] dei_gossip::GossipError),
    #[error(transparent)]
    Axl(#[from] dei_gossip::axl::AxlError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn input_err(path: &Path, message: impl ToString) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Parser)]
#[command(name = "dei", version, about = "Distributed Core War co-evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a warrior and print its canonical form.
    Parse {
        file: PathBuf,
        #[arg(long)]
        core_size: Option<u32>,
        #[arg(long)]
        max_length: Option<usize>,
        /// Print the content hash instead of the program.
        #[arg(long)]
        hash: bool,
    },
    /// Run one battle between two or more warriors.
    Battle {
        #[arg(required = true, num_args = 2..)]
        warriors: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// MARS settings as JSON.
        #[arg(long)]
        mars: Option<PathBuf>,
        #[arg(long)]
        max_cycles: Option<u32>,
        /// Write one JSON line per executed instruction ("-" for stdout).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a live node over TCP or an AXL shim.
    Node {
        #[arg(long)]
        config: PathBuf,
        /// `peer_id host:port` lines; overrides the config file.
        #[arg(long)]
        peers: Option<PathBuf>,
    },
    /// Run an experiment on the simulated network.
    Sim {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Aggregate experiment runs into tables and plots.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Fraction of a corpus a warrior beats or ties.
    EvalGenerality {
        champion: PathBuf,
        /// Directory of .red files; defaults to the bundled held-out set.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        mars: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge archive JSONL files, optionally rescoring against a pool.
    MergeArchives {
        #[arg(required = true)]
        archives: Vec<PathBuf>,
        /// Directory of .red opponents to rescore every elite against.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        mars: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the peer id a label derives to, for writing peers files.
    PeerId { label: String },
    /// Serve the AXL HTTP interface on top of direct HTTP forwarding.
    AxlShim {
        /// 64 hex digits, or any other string to derive one from.
        #[arg(long)]
        peer_id: String,
        #[arg(long, default_value = "127.0.0.1:9002")]
        listen: String,
        /// `PEER_ID=http://host:port`, repeatable.
        #[arg(long = "peer")]
        peers: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Parse {
            file,
            core_size,
            max_length,
            hash,
        } => {
            let mut mars = MarsConfig::default();
            if let Some(c) = core_size {
                mars.core_size = c;
            }
            if let Some(l) = max_length {
                mars.max_warrior_length = l;
            }
            let w = read_warrior(&file, &mars)?;
            if hash {
                println!("{}", w.content_hash());
            } else {
                print!("{}", serialize(&w));
            }
            Ok(())
        }
        Command::Battle {
            warriors,
            seed,
            mars,
            max_cycles,
            trace,
        } => {
            let mut cfg = load_mars(mars.as_deref())?;
            if let Some(m) = max_cycles {
                cfg.max_cycles = m;
            }
            battle(&warriors, &cfg, seed, trace.as_deref())
        }
        Command::Node { config, peers } => node::run(&config, peers.as_deref()),
        Command::Sim { experiment, out } => {
            let cfg = ExperimentConfig::load(&experiment)?;
            for s in experiment::run_experiment(&cfg, &out)? {
                println!(
                    "{} seed {}: merged coverage {:.4}, merged QD {:.4}, {} calls",
                    s.name, s.trial_seed, s.merged_coverage, s.merged_qd_score, s.calls_total
                );
            }
            println!("wrote {}", out.join(&cfg.name).display());
            Ok(())
        }
        Command::Report { runs, csv, svg, out } => {
            let r = experiment::report(&runs)?;
            // Neither flag means both.
            let (csv, svg) = if csv || svg { (csv, svg) } else { (true, true) };
            experiment::write_report(&r, &out, csv, svg)?;
            print!("{}", r.table_csv());
            for flag in &r.flags {
                eprintln!("note: {flag}");
            }
            Ok(())
        }
        Command::EvalGenerality {
            champion,
            corpus: dir,
            mars,
            seed,
        } => {
            let cfg = load_mars(mars.as_deref())?;
            let w = read_warrior(&champion, &cfg)?;
            let opts = cfg.parse_options();
            let set = match dir {
                Some(d) => corpus::load_dir(&d, &opts)?,
                None => corpus::heldout(&opts),
            };
            let g = experiment::generality(&w, &set, &cfg, seed)?;
            println!("{g:.6}");
            Ok(())
        }
        Command::MergeArchives {
            archives,
            pool,
            mars,
            seed,
            out,
        } => {
            let cfg = load_mars(mars.as_deref())?;
            let mut loaded = Vec::with_capacity(archives.len());
            for path in &archives {
                let file = File::open(path).map_err(|e| input_err(path, e))?;
                loaded.push(Archive::read_jsonl(BufReader::new(file)).map_err(|e| input_err(path, e))?);
            }
            if let Some(dir) = pool {
                let opponents: Vec<(String, Warrior)> = corpus::load_dir(&dir, &cfg.parse_options())?
                    .into_iter()
                    .map(|w| (w.content_hash(), w))
                    .collect();
                let mut evaluator = Evaluator::new(cfg.clone(), seed);
                loaded = loaded
                    .iter()
                    .map(|a| a.rescored(|e| evaluator.evaluate(&e.warrior, &opponents).map(|ev| ev.fitness)))
                    .collect::<Result<_, _>>()?;
            }
            let merged = merge(&loaded)?;
            merged.write_jsonl(BufWriter::new(File::create(&out)?))?;
            println!(
                "{} elites, coverage {:.4}, QD score {:.4}",
                merged.len(),
                merged.coverage(),
                merged.qd_score()
            );
            Ok(())
        }
        Command::PeerId { label } => {
            println!("{}", peer_id_arg(&label));
            Ok(())
        }
        Command::AxlShim { peer_id, listen, peers } => {
            let local = peer_id_arg(&peer_id);
            let shim = AxlShim::start(local, &listen)?;
            for spec in &peers {
                let (id, url) = spec
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--peer expects ID=URL, got {spec}")))?;
                shim.add_peer(peer_id_arg(id), url);
            }
            println!("{} listening on {}", local, shim.url());
            // The shim serves from its own threads until the process is killed.
            loop {
                std::thread::park();
            }
        }
    }
}

/// Hex ids are taken as is; anything else is hashed into one.
pub fn peer_id_arg(s: &str) -> PeerId {
    s.parse().unwrap_or_else(|_| PeerId::from_label(s))
}

pub fn load_mars(path: Option<&Path>) -> Result<MarsConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| input_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| input_err(p, e))?
        }
        None => MarsConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_warrior(path: &Path, cfg: &MarsConfig) -> Result<Warrior, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    parse_with(&text, &cfg.parse_options()).map_err(|e| input_err(path, e))
}

fn battle(paths: &[PathBuf], cfg: &MarsConfig, seed: u64, trace: Option<&Path>) -> Result<(), CliError> {
    let warriors = paths.iter().map(|p| read_warrior(p, cfg)).collect::<Result<Vec<_>, _>>()?;
    let mut sink: Option<Box<dyn Write>> = match trace {
        None => None,
        Some(p) if p == Path::new("-") => Some(Box::new(io::stdout().lock())),
        Some(p) => Some(Box::new(BufWriter::new(File::create(p)?))),
    };
    let mut write_err = None;
    let outcome = run_battle_traced(&warriors, cfg, seed, &mut |ev| {
        if let Some(out) = sink.as_mut() {
            if write_err.is_none() {
                if let Err(e) = serde_json::to_writer(&mut *out, ev).map_err(io::Error::from).and_then(|_| out.write_all(b"\n")) {
                    write_err = Some(e);
                }
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(mut out) = sink {
        out.flush()?;
    }
    // Keep the summary off stdout when the trace is going there.
    let mut report: Box<dyn Write> = if trace == Some(Path::new("-")) {
        Box::new(io::stderr())
    } else {
        Box::new(io::stdout())
    };
    writeln!(report, "cycles run: {} of {}", outcome.cycles_run, outcome.max_cycles)?;
    for (i, (w, path)) in warriors.iter().zip(paths).enumerate() {
        let r = &outcome.warriors[i];
        let death = r.death_cycle.map_or("survived".to_string(), |d| format!("died at {d}"));
        writeln!(
            report,
            "{i} {} ({}): loaded at {}, lifespan {}, {death}, touched {:.4}",
            if w.name.is_empty() { "-" } else { &w.name },
            path.display(),
            r.load_address,
            outcome.lifespan(i),
            outcome.touched_fraction(i),
        )?;
    }
    Ok(())
}
