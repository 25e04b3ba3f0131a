//! Bundled warriors: the initial opponent seeds and the held-out corpus used
//! for generality, plus loading of `.red` directories.

use std::path::{Path, PathBuf};

use crate::redcode::{parse_with, ParseOptions, SyntaxError, Warrior};

const SEEDS: &[(&str, &str)] = &[
    ("imp.red", include_str!("../warriors/seeds/imp.red")),
    ("dwarf.red", include_str!("../warriors/seeds/dwarf.red")),
    ("seeker.red", include_str!("../warriors/seeds/seeker.red")),
    ("mice.red", include_str!("../warriors/seeds/mice.red")),
];

const HELDOUT: &[(&str, &str)] = &[
    ("dwarf.red", include_str!("../warriors/heldout/dwarf.red")),
    ("fortress.red", include_str!("../warriors/heldout/fortress.red")),
    ("imp.red", include_str!("../warriors/heldout/imp.red")),
    ("mice.red", include_str!("../warriors/heldout/mice.red")),
    ("paper.red", include_str!("../warriors/heldout/paper.red")),
    ("pebble.red", include_str!("../warriors/heldout/pebble.red")),
    ("seeker.red", include_str!("../warriors/heldout/seeker.red")),
    ("sweeper.red", include_str!("../warriors/heldout/sweeper.red")),
    ("vampire.red", include_str!("../warriors/heldout/vampire.red")),
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: SyntaxError,
    },
    #[error("no .red files in {0}")]
    Empty(PathBuf),
}

fn parse_bundled(files: &[(&str, &str)], opts: &ParseOptions) -> Vec<Warrior> {
    files
        .iter()
        .map(|(name, text)| {
            let mut w = parse_with(text, opts).unwrap_or_else(|e| panic!("bundled {name}: {e}"));
            w.origin = Some(format!("bundled:{name}"));
            w
        })
        .collect()
}

/// Imp, Dwarf, a scanner and a replicator.
pub fn seeds(opts: &ParseOptions) -> Vec<Warrior> {
    parse_bundled(SEEDS, opts)
}

/// Classic warriors across the imp, bomber, scanner, replicator, fortress
/// and vampire archetypes.
pub fn heldout(opts: &ParseOptions) -> Vec<Warrior> {
    parse_bundled(HELDOUT, opts)
}

/// Every `*.red` file directly inside `dir`, in file-name order.
pub fn load_dir(dir: &Path, opts: &ParseOptions) -> Result<Vec<Warrior>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "red"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CorpusError::Empty(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|path| {
            let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let mut w = parse_with(&text, opts).map_err(|source| CorpusError::Syntax {
                path: path.clone(),
                source,
            })?;
            if w.origin.is_none() {
                let file = path.file_name().map(|f| f.to_string_lossy().into_owned());
                w.origin = Some(format!("file:{}", file.unwrap_or_default()));
            }
            Ok(w)
        })
        .collect()
}

/// Content hashes of a corpus in order, for pinning it in reports.
pub fn hashes(corpus: &[Warrior]) -> Vec<String> {
    corpus.iter().map(Warrior::content_hash).collect()
}
