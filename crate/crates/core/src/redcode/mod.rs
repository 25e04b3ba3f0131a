//! Redcode warriors: parsing, canonical serialization and offline
//! perturbation.

mod instruction;
mod parser;
mod perturb;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub use instruction::{Instruction, Mode, Modifier, Opcode};
pub use parser::{parse, parse_with};
pub use perturb::{random_instruction, random_perturb, random_warrior, EditKind, EditWeights, OperatorBias};

pub const DEFAULT_CORE_SIZE: u32 = 8000;
pub const DEFAULT_MAX_LENGTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub core_size: u32,
    pub max_length: usize,
}

impl ParseOptions {
    /// Accepts already-normalized programs of any length without re-wrapping
    /// their fields; used when reading warriors back from JSON records.
    pub fn lenient() -> Self {
        ParseOptions {
            core_size: 1 << 31,
            max_length: usize::MAX,
        }
    }
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            core_size: DEFAULT_CORE_SIZE,
            max_length: DEFAULT_MAX_LENGTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl SyntaxError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        SyntaxError {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidWarrior {
    #[error("warrior has no instructions")]
    Empty,
    #[error("warrior has {len} instructions, maximum is {max}")]
    TooLong { len: usize, max: usize },
    #[error("start offset {start} outside program of length {len}")]
    BadStart { start: usize, len: usize },
    #[error("instruction {index} has a field value {value} outside core of size {core_size}")]
    FieldOutOfRange { index: usize, value: u32, core_size: u32 },
}

/// A named Redcode program: the genome of the search.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Warrior {
    pub name: String,
    pub author: Option<String>,
    pub instructions: Vec<Instruction>,
    /// Index of the first instruction executed.
    pub start: usize,
    /// Provenance tag (operator, node, round) of whatever produced it.
    pub origin: Option<String>,
}

impl Warrior {
    pub fn new(name: impl Into<String>, instructions: Vec<Instruction>, start: usize) -> Self {
        Warrior {
            name: name.into(),
            author: None,
            instructions,
            start,
            origin: None,
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = Some(origin.into());
        self
    }

    pub fn validate(&self, core_size: u32, max_length: usize) -> Result<(), InvalidWarrior> {
        if self.instructions.is_empty() {
            return Err(InvalidWarrior::Empty);
        }
        if self.len() > max_length {
            return Err(InvalidWarrior::TooLong {
                len: self.len(),
                max: max_length,
            });
        }
        if self.start >= self.len() {
            return Err(InvalidWarrior::BadStart {
                start: self.start,
                len: self.len(),
            });
        }
        for (index, ins) in self.instructions.iter().enumerate() {
            for value in [ins.a_value, ins.b_value] {
                if value >= core_size {
                    return Err(InvalidWarrior::FieldOutOfRange { index, value, core_size });
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the program body (instructions and start offset).
    /// Name and provenance are excluded so identical programs collide.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("ORG {}\n", self.start).as_bytes());
        for ins in &self.instructions {
            hasher.update(ins.to_string().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Canonical text: metadata comments, `ORG` when the start is not 0, then
/// one instruction per line with explicit modifiers and modes.
pub fn serialize(w: &Warrior) -> String {
    let mut out = String::new();
    if !w.name.is_empty() {
        out.push_str(&format!(";name {}\n", one_line(&w.name)));
    }
    if let Some(author) = &w.author {
        out.push_str(&format!(";author {}\n", one_line(author)));
    }
    if let Some(origin) = &w.origin {
        out.push_str(&format!(";origin {}\n", one_line(origin)));
    }
    if w.start != 0 {
        out.push_str(&format!("ORG {}\n", w.start));
    }
    for ins in &w.instructions {
        out.push_str(&ins.to_string());
        out.push('\n');
    }
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl fmt::Display for Warrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl Serialize for Warrior {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize(self))
    }
}

impl<'de> Deserialize<'de> for Warrior {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_with(&text, &ParseOptions::lenient()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serializes_imp_canonically() {
        let w = parse("MOV 0, 1").unwrap();
        assert_eq!(serialize(&w), "MOV.I $0, $1\n");
    }

    #[test]
    fn serialize_is_a_fixed_point() {
        let src = ";name Mixed\nstart: spl 0\n mov {1, }2\n jmz.f start, >-3\nORG 1";
        let once = serialize(&parse(src).unwrap());
        let twice = serialize(&parse(&once).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn metadata_survives_round_trip() {
        let mut w = parse("DAT #1, #2").unwrap();
        w.name = "Bomb".into();
        w.author = Some("nobody".into());
        w = w.with_origin("mock:spl/node-1/r2");
        assert_eq!(parse(&serialize(&w)).unwrap(), w);
    }

    #[test]
    fn content_hash_ignores_name_and_origin() {
        let a = parse(";name a\nMOV 0, 1").unwrap();
        let b = parse(";name b\n;origin x\nMOV.I $0, $1").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), parse("MOV 0, 2").unwrap().content_hash());
    }

    #[test]
    fn serde_uses_canonical_text() {
        let w = parse("JMP -2").unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, "\"JMP.B $7998, $0\\n\"");
        assert_eq!(serde_json::from_str::<Warrior>(&json).unwrap(), w);
    }

    #[test]
    fn validate_catches_every_invariant() {
        let mut w = parse("MOV 0, 1").unwrap();
        assert!(w.validate(8000, 100).is_ok());
        w.start = 1;
        assert!(matches!(w.validate(8000, 100), Err(InvalidWarrior::BadStart { .. })));
        w.start = 0;
        w.instructions[0].b_value = 9000;
        assert!(matches!(w.validate(8000, 100), Err(InvalidWarrior::FieldOutOfRange { .. })));
        assert!(matches!(Warrior::new("", vec![], 0).validate(8000, 100), Err(InvalidWarrior::Empty)));
    }
}
