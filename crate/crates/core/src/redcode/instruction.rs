use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// ICWS-94 opcodes (no P-space).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Opcode {
    Dat,
    Mov,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Jmp,
    Jmz,
    Jmn,
    Djn,
    Seq,
    Sne,
    Slt,
    Spl,
    Nop,
}

impl Opcode {
    pub const ALL: [Opcode; 16] = [
        Opcode::Dat,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Mod,
        Opcode::Jmp,
        Opcode::Jmz,
        Opcode::Jmn,
        Opcode::Djn,
        Opcode::Seq,
        Opcode::Sne,
        Opcode::Slt,
        Opcode::Spl,
        Opcode::Nop,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Dat => "DAT",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::Mod => "MOD",
            Opcode::Jmp => "JMP",
            Opcode::Jmz => "JMZ",
            Opcode::Jmn => "JMN",
            Opcode::Djn => "DJN",
            Opcode::Seq => "SEQ",
            Opcode::Sne => "SNE",
            Opcode::Slt => "SLT",
            Opcode::Spl => "SPL",
            Opcode::Nop => "NOP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// ICWS-94 assembler default modifier for an instruction written
    /// without one.
    pub fn default_modifier(self, a_mode: Mode, b_mode: Mode) -> Modifier {
        use Opcode::*;
        match self {
            Dat | Nop => Modifier::F,
            Mov | Seq | Sne => {
                if a_mode == Mode::Immediate {
                    Modifier::AB
                } else if b_mode == Mode::Immediate {
                    Modifier::B
                } else {
                    Modifier::I
                }
            }
            Add | Sub | Mul | Div | Mod => {
                if a_mode == Mode::Immediate {
                    Modifier::AB
                } else if b_mode == Mode::Immediate {
                    Modifier::B
                } else {
                    Modifier::F
                }
            }
            Slt => {
                if a_mode == Mode::Immediate {
                    Modifier::AB
                } else {
                    Modifier::B
                }
            }
            Jmp | Jmz | Jmn | Djn | Spl => Modifier::B,
        }
    }
}

impl FromStr for Opcode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        let op = match upper.as_str() {
            "DAT" => Opcode::Dat,
            "MOV" => Opcode::Mov,
            "ADD" => Opcode::Add,
            "SUB" => Opcode::Sub,
            "MUL" => Opcode::Mul,
            "DIV" => Opcode::Div,
            "MOD" => Opcode::Mod,
            "JMP" => Opcode::Jmp,
            "JMZ" => Opcode::Jmz,
            "JMN" => Opcode::Jmn,
            "DJN" => Opcode::Djn,
            // CMP is the ICWS-88 spelling of SEQ.
            "SEQ" | "CMP" => Opcode::Seq,
            "SNE" => Opcode::Sne,
            "SLT" => Opcode::Slt,
            "SPL" => Opcode::Spl,
            "NOP" => Opcode::Nop,
            _ => return Err(()),
        };
        Ok(op)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modifier {
    A,
    B,
    AB,
    BA,
    F,
    X,
    I,
}

impl Modifier {
    pub const ALL: [Modifier; 7] = [
        Modifier::A,
        Modifier::B,
        Modifier::AB,
        Modifier::BA,
        Modifier::F,
        Modifier::X,
        Modifier::I,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modifier::A => "A",
            Modifier::B => "B",
            Modifier::AB => "AB",
            Modifier::BA => "BA",
            Modifier::F => "F",
            Modifier::X => "X",
            Modifier::I => "I",
        }
    }
}

impl FromStr for Modifier {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let m = match s.to_ascii_uppercase().as_str() {
            "A" => Modifier::A,
            "B" => Modifier::B,
            "AB" => Modifier::AB,
            "BA" => Modifier::BA,
            "F" => Modifier::F,
            "X" => Modifier::X,
            "I" => Modifier::I,
            _ => return Err(()),
        };
        Ok(m)
    }
}

impl fmt::Display for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operand addressing modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `#`
    Immediate,
    /// `$`
    Direct,
    /// `*`
    AIndirect,
    /// `@`
    BIndirect,
    /// `{`
    APredecrement,
    /// `<`
    BPredecrement,
    /// `}`
    APostincrement,
    /// `>`
    BPostincrement,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Immediate,
        Mode::Direct,
        Mode::AIndirect,
        Mode::BIndirect,
        Mode::APredecrement,
        Mode::BPredecrement,
        Mode::APostincrement,
        Mode::BPostincrement,
    ];

    pub fn symbol(self) -> char {
        match self {
            Mode::Immediate => '#',
            Mode::Direct => '$',
            Mode::AIndirect => '*',
            Mode::BIndirect => '@',
            Mode::APredecrement => '{',
            Mode::BPredecrement => '<',
            Mode::APostincrement => '}',
            Mode::BPostincrement => '>',
        }
    }

    pub fn from_symbol(c: char) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.symbol() == c)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// One core cell. Field values are stored normalized into `[0, core_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub modifier: Modifier,
    pub a_mode: Mode,
    pub a_value: u32,
    pub b_mode: Mode,
    pub b_value: u32,
}

impl Instruction {
    /// `DAT.F $0, $0`, the ICWS-94 initial core contents.
    pub const EMPTY: Instruction = Instruction {
        opcode: Opcode::Dat,
        modifier: Modifier::F,
        a_mode: Mode::Direct,
        a_value: 0,
        b_mode: Mode::Direct,
        b_value: 0,
    };

    pub fn new(opcode: Opcode, modifier: Modifier, a: (Mode, u32), b: (Mode, u32)) -> Self {
        Instruction {
            opcode,
            modifier,
            a_mode: a.0,
            a_value: a.1,
            b_mode: b.0,
            b_value: b.1,
        }
    }
}

impl Default for Instruction {
    fn default() -> Self {
        Instruction::EMPTY
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} {}{}, {}{}",
            self.opcode, self.modifier, self.a_mode, self.a_value, self.b_mode, self.b_value
        )
    }
}
