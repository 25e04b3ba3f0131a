//! MAP-Elites archive over the (TSP, MC) behavior space, archive-level
//! metrics and cross-node merging.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mars::{BehavioralCharacteristic, MarsConfig};
use crate::redcode::Warrior;

const FORMAT: &str = "dei-archive";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive is empty")]
    EmptyArchive,
    #[error("archives use different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("archive file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grid resolution and TSP range. Edges are derived, never stored, so two
/// grids are equal exactly when their configurations are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcGrid {
    pub tsp_bins: usize,
    pub mc_bins: usize,
    pub tsp_min: f64,
    pub tsp_max: f64,
}

impl BcGrid {
    pub fn new(tsp_bins: usize, mc_bins: usize, tsp_min: f64, tsp_max: f64) -> Result<Self, ArchiveError> {
        let grid = BcGrid {
            tsp_bins,
            mc_bins,
            tsp_min,
            tsp_max,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 10×10 grid with TSP log-spaced from 1 to the largest reachable
    /// product, `max_warrior_length × max_cycles`.
    pub fn for_mars(cfg: &MarsConfig) -> Self {
        Self::sized_for_mars(10, 10, cfg)
    }

    pub fn sized_for_mars(tsp_bins: usize, mc_bins: usize, cfg: &MarsConfig) -> Self {
        BcGrid {
            tsp_bins,
            mc_bins,
            tsp_min: 1.0,
            tsp_max: cfg.max_warrior_length as f64 * f64::from(cfg.max_cycles),
        }
    }

    pub fn validate(&self) -> Result<(), ArchiveError> {
        if self.tsp_bins == 0 || self.mc_bins == 0 {
            return Err(ArchiveError::InvalidGrid("bin counts must be positive".into()));
        }
        if !(self.tsp_min > 0.0 && self.tsp_max > self.tsp_min && self.tsp_max.is_finite()) {
            return Err(ArchiveError::InvalidGrid(format!(
                "TSP range [{}, {}] must be positive and ascending",
                self.tsp_min, self.tsp_max
            )));
        }
        Ok(())
    }

    /// `tsp_bins + 1` ascending log-spaced boundaries.
    pub fn tsp_edges(&self) -> Vec<f64> {
        let ratio = (self.tsp_max / self.tsp_min).ln();
        (0..=self.tsp_bins)
            .map(|k| self.tsp_min * (ratio * k as f64 / self.tsp_bins as f64).exp())
            .collect()
    }

    pub fn total_cells(&self) -> usize {
        self.tsp_bins * self.mc_bins
    }

    /// Cell of a descriptor; values outside the axis ranges clamp to the
    /// first or last bin.
    pub fn bin(&self, bc: &BehavioralCharacteristic) -> Cell {
        let edges = self.tsp_edges();
        // interior edges only: the count of those at or below tsp is the bin
        let tsp_bin = edges[1..self.tsp_bins].partition_point(|&e| e <= bc.tsp);
        let mc = if bc.mc.is_nan() { 0.0 } else { bc.mc.clamp(0.0, 1.0) };
        let mc_bin = ((mc * self.mc_bins as f64) as usize).min(self.mc_bins - 1);
        Cell { tsp_bin, mc_bin }
    }
}

/// Archive coordinate; ordered lexicographically by (tsp_bin, mc_bin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub tsp_bin: usize,
    pub mc_bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub cell: Cell,
    pub fitness: f64,
    pub bc: BehavioralCharacteristic,
    pub round: u32,
    pub origin: String,
    pub warrior: Warrior,
}

impl Elite {
    pub fn new(grid: &BcGrid, warrior: Warrior, fitness: f64, bc: BehavioralCharacteristic, round: u32) -> Self {
        let origin = warrior.origin.clone().unwrap_or_default();
        Elite {
            cell: grid.bin(&bc),
            fitness,
            bc,
            round,
            origin,
            warrior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    grid: BcGrid,
    cells: BTreeMap<Cell, Elite>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    grid: BcGrid,
}

impl Archive {
    pub fn new(grid: BcGrid) -> Self {
        Archive {
            grid,
            cells: BTreeMap::new(),
        }
    }

    pub fn grid(&self) -> &BcGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: Cell) -> Option<&Elite> {
        self.cells.get(&cell)
    }

    /// Elites in cell order.
    pub fn elites(&self) -> impl Iterator<Item = &Elite> {
        self.cells.values()
    }

    /// MAP-Elites insertion: the candidate takes its cell when the cell is
    /// empty or it strictly beats the incumbent. Returns whether it did.
    pub fn update(&mut self, warrior: Warrior, fitness: f64, bc: BehavioralCharacteristic, round: u32) -> bool {
        let elite = Elite::new(&self.grid, warrior, fitness, bc, round);
        self.offer(elite)
    }

    /// [`Archive::update`] for a ready-made elite. Its cell is recomputed
    /// from its BC under this archive's grid.
    pub fn offer(&mut self, mut elite: Elite) -> bool {
        elite.cell = self.grid.bin(&elite.bc);
        match self.cells.get(&elite.cell) {
            Some(incumbent) if elite.fitness <= incumbent.fitness => false,
            _ => {
                self.cells.insert(elite.cell, elite);
                true
            }
        }
    }

    /// Uniform draw over occupied cells.
    pub fn sample_uniform(&self, seed: u64) -> Result<&Elite, ArchiveError> {
        if self.cells.is_empty() {
            return Err(ArchiveError::EmptyArchive);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(0..self.cells.len());
        Ok(self.cells.values().nth(k).expect("index below len"))
    }

    pub fn coverage(&self) -> f64 {
        self.cells.len() as f64 / self.grid.total_cells() as f64
    }

    pub fn qd_score(&self) -> f64 {
        self.cells.values().map(|e| e.fitness).sum()
    }

    /// Insert received elites only into cells that are empty; local
    /// incumbents are never displaced. Returns how many were inserted.
    pub fn seed(&mut self, received: impl IntoIterator<Item = Elite>) -> usize {
        let mut inserted = 0;
        for mut elite in received {
            elite.cell = self.grid.bin(&elite.bc);
            if let std::collections::btree_map::Entry::Vacant(slot) = self.cells.entry(elite.cell) {
                slot.insert(elite);
                inserted += 1;
            }
        }
        inserted
    }

    /// Copy of this archive with every fitness replaced by `score(elite)`.
    /// Used to put elites from different nodes on a common opponent pool
    /// before merging.
    pub fn rescored<E>(&self, mut score: impl FnMut(&Elite) -> Result<f64, E>) -> Result<Archive, E> {
        let mut out = self.clone();
        for elite in out.cells.values_mut() {
            elite.fitness = score(elite)?;
        }
        Ok(out)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ArchiveError> {
        let header = Header {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            grid: self.grid.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for elite in self.cells.values() {
            writeln!(out, "{}", serde_json::to_string(elite).expect("elite serializes"))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Archive, ArchiveError> {
        let mut lines = input.lines().enumerate();
        let format_err = |line: usize, message: String| ArchiveError::Format { line: line + 1, message };
        let header: Header = match lines.next() {
            Some((i, line)) => serde_json::from_str(&line?).map_err(|e| format_err(i, e.to_string()))?,
            None => return Err(format_err(0, "missing header".into())),
        };
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(format_err(
                0,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        header.grid.validate()?;
        let mut archive = Archive::new(header.grid);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let elite: Elite = serde_json::from_str(&line).map_err(|e| format_err(i, e.to_string()))?;
            if archive.grid.bin(&elite.bc) != elite.cell {
                return Err(format_err(i, format!("cell {:?} does not match BC", elite.cell)));
            }
            if archive.cells.insert(elite.cell, elite).is_some() {
                return Err(format_err(i, "duplicate cell".into()));
            }
        }
        Ok(archive)
    }
}

/// Per cell, the elite with the highest stored fitness; ties keep the
/// occupant of the earliest archive in the list.
pub fn merge(archives: &[Archive]) -> Result<Archive, ArchiveError> {
    let first = archives.first().ok_or(ArchiveError::EmptyArchive)?;
    let mut merged = Archive::new(first.grid.clone());
    for archive in archives {
        if archive.grid != merged.grid {
            return Err(ArchiveError::GridMismatch);
        }
        for elite in archive.cells.values() {
            merged.offer(elite.clone());
        }
    }
    Ok(merged)
}

/// Fraction of `received` elites whose cell was empty in `previous`;
/// `None` when nothing was received.
pub fn niche_novelty<'a>(received: impl IntoIterator<Item = &'a Elite>, previous: &Archive) -> Option<f64> {
    let mut total = 0usize;
    let mut novel = 0usize;
    for elite in received {
        total += 1;
        if previous.get(previous.grid.bin(&elite.bc)).is_none() {
            novel += 1;
        }
    }
    (total > 0).then(|| novel as f64 / total as f64)
}
