//! Seeded random edits of warriors, driven by an [`OperatorBias`] table.
//!
//! Distinct bias tables stand in for the distinct generative priors of
//! different language models when experiments run offline.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instruction::{Instruction, Mode, Modifier, Opcode};
use super::{ParseOptions, Warrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Point,
    Insert,
    Delete,
    Swap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditWeights {
    pub point: f64,
    pub insert: f64,
    pub delete: f64,
    pub swap: f64,
}

impl Default for EditWeights {
    fn default() -> Self {
        EditWeights {
            point: 0.55,
            insert: 0.2,
            delete: 0.15,
            swap: 0.1,
        }
    }
}

impl EditWeights {
    fn weight(&self, kind: EditKind) -> f64 {
        match kind {
            EditKind::Point => self.point,
            EditKind::Insert => self.insert,
            EditKind::Delete => self.delete,
            EditKind::Swap => self.swap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorBias {
    pub name: String,
    /// Relative opcode weights; opcodes absent from the map are never drawn.
    /// An empty map means uniform.
    pub opcode_weights: BTreeMap<Opcode, f64>,
    /// Relative addressing-mode weights, same conventions as opcodes.
    pub mode_weights: BTreeMap<Mode, f64>,
    pub edit_weights: EditWeights,
    /// Small operands are drawn from `[-value_range, value_range]`.
    pub value_range: u32,
    /// Probability that an operand is drawn uniformly from the whole core.
    pub wide_value_rate: f64,
    /// Probability of an explicit random modifier instead of the assembler
    /// default for the drawn modes.
    pub random_modifier_rate: f64,
    /// Inclusive length range of freshly generated warriors.
    pub generate_length: (usize, usize),
}

impl Default for OperatorBias {
    fn default() -> Self {
        OperatorBias {
            name: "uniform".to_string(),
            opcode_weights: BTreeMap::new(),
            mode_weights: BTreeMap::new(),
            edit_weights: EditWeights::default(),
            value_range: 16,
            wide_value_rate: 0.1,
            random_modifier_rate: 0.2,
            generate_length: (2, 8),
        }
    }
}

impl OperatorBias {
    pub fn with_opcodes(mut self, weights: &[(Opcode, f64)]) -> Self {
        self.opcode_weights = weights.iter().copied().collect();
        self
    }

    pub fn with_modes(mut self, weights: &[(Mode, f64)]) -> Self {
        self.mode_weights = weights.iter().copied().collect();
        self
    }

    pub fn with_edits(mut self, edits: EditWeights) -> Self {
        self.edit_weights = edits;
        self
    }

    fn opcode_sampler(&self) -> (Vec<Opcode>, Option<WeightedIndex<f64>>) {
        weighted(&Opcode::ALL, &self.opcode_weights)
    }

    fn mode_sampler(&self) -> (Vec<Mode>, Option<WeightedIndex<f64>>) {
        weighted(&Mode::ALL, &self.mode_weights)
    }
}

fn weighted<K: Copy + Ord>(all: &[K], weights: &BTreeMap<K, f64>) -> (Vec<K>, Option<WeightedIndex<f64>>) {
    let items: Vec<(K, f64)> = weights
        .iter()
        .filter(|(_, &w)| w > 0.0 && w.is_finite())
        .map(|(&k, &w)| (k, w))
        .collect();
    if items.is_empty() {
        return (all.to_vec(), None);
    }
    let keys = items.iter().map(|(k, _)| *k).collect();
    let index = WeightedIndex::new(items.iter().map(|(_, w)| *w)).ok();
    (keys, index)
}

fn pick<K: Copy, R: Rng>(rng: &mut R, sampler: &(Vec<K>, Option<WeightedIndex<f64>>)) -> K {
    match &sampler.1 {
        Some(index) => sampler.0[index.sample(rng)],
        None => sampler.0[rng.gen_range(0..sampler.0.len())],
    }
}

fn random_value<R: Rng>(rng: &mut R, bias: &OperatorBias, core_size: u32) -> u32 {
    if rng.gen_bool(bias.wide_value_rate.clamp(0.0, 1.0)) {
        return rng.gen_range(0..core_size);
    }
    let range = i64::from(bias.value_range);
    let v = rng.gen_range(-range..=range);
    v.rem_euclid(i64::from(core_size)) as u32
}

/// Draw one instruction from the bias table.
pub fn random_instruction<R: Rng>(rng: &mut R, bias: &OperatorBias, core_size: u32) -> Instruction {
    let opcode = pick(rng, &bias.opcode_sampler());
    let modes = bias.mode_sampler();
    let a_mode = pick(rng, &modes);
    let b_mode = pick(rng, &modes);
    let a_value = random_value(rng, bias, core_size);
    let b_value = random_value(rng, bias, core_size);
    let modifier = if rng.gen_bool(bias.random_modifier_rate.clamp(0.0, 1.0)) {
        Modifier::ALL[rng.gen_range(0..Modifier::ALL.len())]
    } else {
        opcode.default_modifier(a_mode, b_mode)
    };
    Instruction {
        opcode,
        modifier,
        a_mode,
        a_value,
        b_mode,
        b_value,
    }
}

/// A fresh warrior drawn entirely from the bias table.
pub fn random_warrior(seed: u64, bias: &OperatorBias, limits: &ParseOptions) -> Warrior {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = limits.max_length.max(1);
    let lo = bias.generate_length.0.clamp(1, max);
    let hi = bias.generate_length.1.clamp(lo, max);
    let len = rng.gen_range(lo..=hi);
    let instructions = (0..len)
        .map(|_| random_instruction(&mut rng, bias, limits.core_size))
        .collect();
    let start = rng.gen_range(0..len);
    Warrior::new("", instructions, start)
}

/// Apply exactly one edit drawn from `bias`. Pure in `(w, seed, bias, limits)`.
pub fn random_perturb(w: &Warrior, seed: u64, bias: &OperatorBias, limits: &ParseOptions) -> (Warrior, EditKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = w.len();
    let feasible = |kind: EditKind| match kind {
        EditKind::Point => len >= 1,
        EditKind::Insert => len < limits.max_length,
        EditKind::Delete => len > 1,
        EditKind::Swap => len > 1,
    };
    let kinds: Vec<EditKind> = [EditKind::Point, EditKind::Insert, EditKind::Delete, EditKind::Swap]
        .into_iter()
        .filter(|&k| feasible(k) && bias.edit_weights.weight(k) > 0.0)
        .collect();
    // infeasible draws are re-drawn among the feasible kinds; with nothing
    // left, fall back to a point edit
    let kind = match WeightedIndex::new(kinds.iter().map(|&k| bias.edit_weights.weight(k))) {
        Ok(index) => kinds[index.sample(&mut rng)],
        Err(_) => EditKind::Point,
    };

    let mut out = w.clone();
    match kind {
        EditKind::Point => {
            let i = rng.gen_range(0..len);
            let mut replacement = random_instruction(&mut rng, bias, limits.core_size);
            for _ in 0..8 {
                if replacement != w.instructions[i] {
                    break;
                }
                replacement = random_instruction(&mut rng, bias, limits.core_size);
            }
            out.instructions[i] = replacement;
        }
        EditKind::Insert => {
            let i = rng.gen_range(0..=len);
            out.instructions.insert(i, random_instruction(&mut rng, bias, limits.core_size));
            if i <= out.start {
                out.start += 1;
            }
        }
        EditKind::Delete => {
            let i = rng.gen_range(0..len);
            out.instructions.remove(i);
            if i < out.start {
                out.start -= 1;
            }
            out.start = out.start.min(out.len() - 1);
        }
        EditKind::Swap => {
            let i = rng.gen_range(0..len);
            let mut j = rng.gen_range(0..len - 1);
            if j >= i {
                j += 1;
            }
            out.instructions.swap(i, j);
        }
    }
    (out, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::redcode::parse;

    fn imp() -> Warrior {
        parse("MOV 0, 1").unwrap()
    }

    #[test]
    fn delete_only_bias_cannot_empty_a_program() {
        let bias = OperatorBias::default().with_edits(EditWeights {
            point: 0.0,
            insert: 0.0,
            delete: 1.0,
            swap: 0.0,
        });
        for seed in 0..50 {
            let (out, kind) = random_perturb(&imp(), seed, &bias, &ParseOptions::default());
            assert_eq!(kind, EditKind::Point);
            assert_eq!(out.len(), 1);
        }
    }

    #[test]
    fn perturb_is_deterministic() {
        let bias = OperatorBias::default();
        let w = parse("ADD #4, 3\nMOV 2, @2\nJMP -2\nDAT #0, #0").unwrap();
        for seed in 0..20 {
            assert_eq!(
                random_perturb(&w, seed, &bias, &ParseOptions::default()),
                random_perturb(&w, seed, &bias, &ParseOptions::default())
            );
        }
    }

    #[test]
    fn insert_never_exceeds_max_length() {
        let limits = ParseOptions {
            core_size: 8000,
            max_length: 3,
        };
        let bias = OperatorBias::default().with_edits(EditWeights {
            point: 0.0,
            insert: 1.0,
            delete: 0.0,
            swap: 0.0,
        });
        let w = parse("NOP\nNOP\nNOP").unwrap();
        for seed in 0..30 {
            let (out, _) = random_perturb(&w, seed, &bias, &limits);
            assert!(out.len() <= 3);
        }
    }

    #[test]
    fn start_offset_tracks_the_same_instruction_on_insert_and_delete() {
        let w = parse("DAT 1\nDAT 2\ngo MOV 0, 1\nDAT 3\nORG go").unwrap();
        let limits = ParseOptions::default();
        for (edit, weights) in [
            (EditKind::Insert, EditWeights { point: 0.0, insert: 1.0, delete: 0.0, swap: 0.0 }),
            (EditKind::Delete, EditWeights { point: 0.0, insert: 0.0, delete: 1.0, swap: 0.0 }),
        ] {
            let bias = OperatorBias::default().with_edits(weights);
            for seed in 0..40 {
                let (out, kind) = random_perturb(&w, seed, &bias, &limits);
                assert_eq!(kind, edit);
                assert!(out.start < out.len());
                if edit == EditKind::Insert {
                    assert_eq!(out.instructions[out.start], w.instructions[w.start]);
                }
                if out.instructions.iter().any(|i| i.opcode == Opcode::Mov) && edit == EditKind::Delete {
                    assert_eq!(out.instructions[out.start].opcode, Opcode::Mov);
                }
            }
        }
    }

    #[test]
    fn random_warriors_are_valid() {
        let limits = ParseOptions::default();
        for seed in 0..100 {
            let w = random_warrior(seed, &OperatorBias::default(), &limits);
            assert!(w.validate(limits.core_size, limits.max_length).is_ok());
        }
    }
}
