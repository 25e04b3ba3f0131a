//! Redcode assembler front-end.
//!
//! Accepts the flat subset of ICWS-94 that evolved warriors use: one
//! instruction per line, optional labels, `;` comments, `ORG`/`END`, and
//! integer expressions over labels. Macro features (`EQU`, `FOR`/`ROF`,
//! `PIN`) are rejected.

use std::collections::HashMap;

use super::instruction::{Instruction, Mode, Modifier, Opcode};
use super::{ParseOptions, SyntaxError, Warrior};

pub fn parse(source: &str) -> Result<Warrior, SyntaxError> {
    parse_with(source, &ParseOptions::default())
}

pub fn parse_with(source: &str, opts: &ParseOptions) -> Result<Warrior, SyntaxError> {
    Assembler::new(opts).run(source)
}

#[derive(Debug, Clone)]
struct Pending {
    line: usize,
    opcode: Opcode,
    modifier: Option<Modifier>,
    a: Option<Operand>,
    b: Option<Operand>,
}

#[derive(Debug, Clone)]
struct Operand {
    mode: Option<Mode>,
    expr: Expr,
}

#[derive(Debug, Clone)]
struct Expr {
    text: String,
    line: usize,
    column: usize,
}

struct Assembler<'a> {
    opts: &'a ParseOptions,
    name: String,
    author: Option<String>,
    origin: Option<String>,
    labels: HashMap<String, usize>,
    pending_labels: Vec<(String, usize, usize)>,
    code: Vec<Pending>,
    start: Option<Expr>,
}

const REJECTED_DIRECTIVES: [&str; 4] = ["EQU", "FOR", "ROF", "PIN"];

impl<'a> Assembler<'a> {
    fn new(opts: &'a ParseOptions) -> Self {
        Assembler {
            opts,
            name: String::new(),
            author: None,
            origin: None,
            labels: HashMap::new(),
            pending_labels: Vec::new(),
            code: Vec::new(),
            start: None,
        }
    }

    fn run(mut self, source: &str) -> Result<Warrior, SyntaxError> {
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let (code, comment) = match raw.find(';') {
                Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
                None => (raw, None),
            };
            if let Some(comment) = comment {
                self.metadata(comment);
            }
            if self.line(code, line_no)? == Flow::Stop {
                break;
            }
        }
        if let Some((label, line, column)) = self.pending_labels.first() {
            if self.code.is_empty() {
                return Err(SyntaxError::new(*line, *column, format!("label `{label}` has no instruction")));
            }
            // trailing labels point one past the end, as in pMARS
            let end = self.code.len();
            for (label, _, _) in std::mem::take(&mut self.pending_labels) {
                self.labels.insert(label, end);
            }
        }
        if self.code.is_empty() {
            return Err(SyntaxError::new(1, 1, "empty program"));
        }
        if self.code.len() > self.opts.max_length {
            return Err(SyntaxError::new(
                self.code.last().map_or(1, |p| p.line),
                1,
                format!(
                    "program has {} instructions, maximum is {}",
                    self.code.len(),
                    self.opts.max_length
                ),
            ));
        }

        let mut instructions = Vec::with_capacity(self.code.len());
        for (index, p) in self.code.iter().enumerate() {
            let (a, b) = match (&p.a, &p.b) {
                (None, None) => (None, None),
                (Some(a), None) if p.opcode == Opcode::Dat => (None, Some(a)),
                (a, b) => (a.as_ref(), b.as_ref()),
            };
            let (a_mode, a_value) = match a {
                Some(op) => (op.mode.unwrap_or(Mode::Direct), self.eval(&op.expr, Some(index))?),
                // ICWS-94: a lone DAT operand is the B-field, A defaults to #0
                None if p.opcode == Opcode::Dat && b.is_some() => (Mode::Immediate, 0),
                None => (Mode::Direct, 0),
            };
            let (b_mode, b_value) = match b {
                Some(op) => (op.mode.unwrap_or(Mode::Direct), self.eval(&op.expr, Some(index))?),
                None => (Mode::Direct, 0),
            };
            let modifier = p.modifier.unwrap_or_else(|| p.opcode.default_modifier(a_mode, b_mode));
            instructions.push(Instruction {
                opcode: p.opcode,
                modifier,
                a_mode,
                a_value: self.normalize(a_value),
                b_mode,
                b_value: self.normalize(b_value),
            });
        }

        let start = match &self.start {
            Some(expr) => {
                let value = self.eval(expr, None)?;
                if value < 0 || value as usize >= instructions.len() {
                    return Err(SyntaxError::new(
                        expr.line,
                        expr.column,
                        format!("start offset {value} outside program of length {}", instructions.len()),
                    ));
                }
                value as usize
            }
            None => 0,
        };

        Ok(Warrior {
            name: self.name,
            author: self.author,
            instructions,
            start,
            origin: self.origin,
        })
    }

    fn normalize(&self, value: i64) -> u32 {
        value.rem_euclid(i64::from(self.opts.core_size)) as u32
    }

    fn metadata(&mut self, comment: &str) {
        let comment = comment.trim();
        let (key, rest) = match comment.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (comment, ""),
        };
        match key.to_ascii_lowercase().as_str() {
            "name" => self.name = rest.to_string(),
            "author" if !rest.is_empty() => self.author = Some(rest.to_string()),
            "origin" if !rest.is_empty() => self.origin = Some(rest.to_string()),
            _ => {}
        }
    }

    fn line(&mut self, code: &str, line: usize) -> Result<Flow, SyntaxError> {
        let mut cursor = Cursor::new(code, line);
        cursor.skip_ws();
        if cursor.at_end() {
            return Ok(Flow::Continue);
        }

        let (first, first_col) = cursor.word().ok_or_else(|| cursor.error("expected an opcode or label"))?;
        let mut word = first;
        let mut word_col = first_col;

        if Self::opcode_word(word).is_none() && !is_directive(word) {
            if REJECTED_DIRECTIVES.contains(&word.to_ascii_uppercase().as_str()) {
                return Err(SyntaxError::new(line, word_col, format!("unsupported directive `{word}`")));
            }
            if !is_identifier(word) {
                return Err(SyntaxError::new(line, word_col, format!("unknown opcode `{word}`")));
            }
            // a label, optionally followed by ':'
            let label = word.trim_end_matches(':').to_string();
            cursor.skip_ws();
            cursor.eat(':');
            cursor.skip_ws();
            if cursor.at_end() {
                self.pending_labels.push((label, line, first_col));
                return Ok(Flow::Continue);
            }
            let (next, next_col) = cursor.word().ok_or_else(|| cursor.error("expected an opcode"))?;
            if REJECTED_DIRECTIVES.contains(&next.to_ascii_uppercase().as_str()) {
                return Err(SyntaxError::new(line, next_col, format!("unsupported directive `{next}`")));
            }
            if Self::opcode_word(next).is_none() && !is_directive(next) {
                // `FOO 1, 2`: the unknown word was meant as an opcode
                return Err(SyntaxError::new(line, first_col, format!("unknown opcode `{first}`")));
            }
            self.pending_labels.push((label, line, first_col));
            word = next;
            word_col = next_col;
        }

        let upper = word.to_ascii_uppercase();
        if upper == "ORG" || upper == "END" {
            let rest = cursor.rest();
            let trimmed = rest.trim();
            if upper == "ORG" && trimmed.is_empty() {
                return Err(SyntaxError::new(line, word_col, "ORG requires an operand"));
            }
            if upper == "END" {
                // labels before END refer to the end of the program
                let end = self.code.len();
                for (label, _, _) in std::mem::take(&mut self.pending_labels) {
                    self.labels.insert(label, end);
                }
            }
            if !trimmed.is_empty() {
                let column = cursor.column_of_rest() + (rest.len() - rest.trim_start().len());
                self.start = Some(Expr {
                    text: trimmed.to_string(),
                    line,
                    column,
                });
            }
            return Ok(if upper == "END" { Flow::Stop } else { Flow::Continue });
        }

        let (opcode, modifier) = Self::opcode_word(word)
            .ok_or_else(|| SyntaxError::new(line, word_col, format!("unknown opcode `{word}`")))?
            .map_err(|m| SyntaxError::new(line, word_col, format!("unknown modifier `{m}`")))?;

        let index = self.code.len();
        for (label, l, c) in std::mem::take(&mut self.pending_labels) {
            if self.labels.insert(label.clone(), index).is_some() {
                return Err(SyntaxError::new(l, c, format!("duplicate label `{label}`")));
            }
        }

        let rest_col = cursor.column_of_rest();
        let rest = cursor.rest();
        let (a, b) = split_operands(rest, line, rest_col)?;
        self.code.push(Pending {
            line,
            opcode,
            modifier,
            a,
            b,
        });
        Ok(Flow::Continue)
    }

    /// `Some(Ok(..))` for a valid opcode word, `Some(Err(modifier))` for a
    /// known opcode with an unknown modifier, `None` otherwise.
    fn opcode_word(word: &str) -> Option<Result<(Opcode, Option<Modifier>), String>> {
        let (op, modifier) = match word.split_once('.') {
            Some((op, m)) => (op, Some(m)),
            None => (word, None),
        };
        let opcode = op.parse::<Opcode>().ok()?;
        match modifier {
            None => Some(Ok((opcode, None))),
            Some(m) => match m.parse::<Modifier>() {
                Ok(m) => Some(Ok((opcode, Some(m)))),
                Err(()) => Some(Err(m.to_string())),
            },
        }
    }

    fn eval(&self, expr: &Expr, current: Option<usize>) -> Result<i64, SyntaxError> {
        let mut p = ExprParser {
            chars: expr.text.char_indices().collect(),
            pos: 0,
            expr,
            labels: &self.labels,
            current,
            opts: self.opts,
        };
        let value = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error("unexpected trailing characters in operand"));
        }
        Ok(value)
    }
}

#[derive(PartialEq, Eq)]
enum Flow {
    Continue,
    Stop,
}

fn is_directive(word: &str) -> bool {
    matches!(word.to_ascii_uppercase().as_str(), "ORG" | "END")
}

fn is_identifier(word: &str) -> bool {
    let word = word.strip_suffix(':').unwrap_or(word);
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn split_operands(rest: &str, line: usize, col: usize) -> Result<(Option<Operand>, Option<Operand>), SyntaxError> {
    if rest.trim().is_empty() {
        return Ok((None, None));
    }
    let mut depth = 0i32;
    let mut comma = None;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                if comma.is_some() {
                    return Err(SyntaxError::new(line, col + rest[..i].chars().count(), "too many operands"));
                }
                comma = Some(i);
            }
            _ => {}
        }
    }
    match comma {
        None => Ok((Some(operand(rest, line, col)?), None)),
        Some(i) => {
            let a = operand(&rest[..i], line, col)?;
            let b_col = col + rest[..=i].chars().count();
            let b = operand(&rest[i + 1..], line, b_col)?;
            Ok((Some(a), Some(b)))
        }
    }
}

fn operand(text: &str, line: usize, col: usize) -> Result<Operand, SyntaxError> {
    let leading = text.chars().take_while(|c| c.is_whitespace()).count();
    let trimmed = text.trim();
    let column = col + leading;
    if trimmed.is_empty() {
        return Err(SyntaxError::new(line, column, "missing operand"));
    }
    let first = trimmed.chars().next().unwrap_or(' ');
    let (mode, body, body_col) = match Mode::from_symbol(first) {
        Some(mode) => (Some(mode), &trimmed[first.len_utf8()..], column + 1),
        None => (None, trimmed, column),
    };
    let body_lead = body.chars().take_while(|c| c.is_whitespace()).count();
    let body = body.trim();
    if body.is_empty() {
        return Err(SyntaxError::new(line, body_col, "missing operand value"));
    }
    Ok(Operand {
        mode,
        expr: Expr {
            text: body.to_string(),
            line,
            column: body_col + body_lead,
        },
    })
}

struct Cursor<'s> {
    text: &'s str,
    pos: usize,
    line: usize,
}

impl<'s> Cursor<'s> {
    fn new(text: &'s str, line: usize) -> Self {
        Cursor { text, pos: 0, line }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn column(&self) -> usize {
        self.text[..self.pos].chars().count() + 1
    }

    fn column_of_rest(&self) -> usize {
        self.column()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn eat(&mut self, expected: char) -> bool {
        if self.text[self.pos..].starts_with(expected) {
            self.pos += expected.len_utf8();
            true
        } else {
            false
        }
    }

    /// Next whitespace-delimited word (stops before `:` that ends a label).
    fn word(&mut self) -> Option<(&'s str, usize)> {
        self.skip_ws();
        let col = self.column();
        let start = self.pos;
        while let Some(c) = self.text[self.pos..].chars().next() {
            if c.is_whitespace() || c == ':' || c == ',' {
                break;
            }
            self.pos += c.len_utf8();
        }
        (self.pos > start).then(|| (&self.text[start..self.pos], col))
    }

    fn rest(&mut self) -> &'s str {
        let rest = &self.text[self.pos..];
        self.pos = self.text.len();
        rest
    }

    fn error(&self, message: &str) -> SyntaxError {
        SyntaxError::new(self.line, self.column(), message)
    }
}

/// Integer expression evaluator: `+ - * / %`, unary sign, parentheses,
/// numbers, labels (relative to the current instruction) and `CORESIZE`.
struct ExprParser<'e> {
    chars: Vec<(usize, char)>,
    pos: usize,
    expr: &'e Expr,
    labels: &'e HashMap<String, usize>,
    current: Option<usize>,
    opts: &'e ParseOptions,
}

impl ExprParser<'_> {
    fn error(&self, message: &str) -> SyntaxError {
        SyntaxError::new(self.expr.line, self.expr.column + self.pos, message)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Result<i64, SyntaxError> {
        let mut value = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    value = value.checked_add(self.term()?).ok_or_else(|| self.error("overflow"))?;
                }
                Some('-') => {
                    self.pos += 1;
                    value = value.checked_sub(self.term()?).ok_or_else(|| self.error("overflow"))?;
                }
                _ => return Ok(value),
            }
        }
    }

    fn term(&mut self) -> Result<i64, SyntaxError> {
        let mut value = self.unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(c @ ('*' | '/' | '%')) => c,
                _ => return Ok(value),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            value = match op {
                '*' => value.checked_mul(rhs).ok_or_else(|| self.error("overflow"))?,
                _ if rhs == 0 => return Err(self.error("division by zero in expression")),
                '/' => value / rhs,
                _ => value % rhs,
            };
        }
    }

    fn unary(&mut self) -> Result<i64, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                self.unary()?.checked_neg().ok_or_else(|| self.error("overflow"))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<i64, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let digits: String = self.chars[start..self.pos].iter().map(|&(_, c)| c).collect();
                digits.parse::<i64>().map_err(|_| self.error("number out of range"))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                let ident: String = self.chars[start..self.pos].iter().map(|&(_, c)| c).collect();
                if let Some(&target) = self.labels.get(&ident) {
                    let base = self.current.unwrap_or(0) as i64;
                    return Ok(target as i64 - base);
                }
                match ident.to_ascii_uppercase().as_str() {
                    "CORESIZE" => Ok(i64::from(self.opts.core_size)),
                    "MAXLENGTH" => Ok(self.opts.max_length as i64),
                    _ => Err(SyntaxError::new(
                        self.expr.line,
                        self.expr.column + start,
                        format!("undefined label `{ident}`"),
                    )),
                }
            }
            Some(_) => Err(self.error("malformed operand")),
            None => Err(self.error("missing operand value")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ins(op: Opcode, m: Modifier, a: (Mode, u32), b: (Mode, u32)) -> Instruction {
        Instruction::new(op, m, a, b)
    }

    #[test]
    fn imp_gets_mov_i() {
        let w = parse("MOV 0, 1").unwrap();
        assert_eq!(w.instructions, vec![ins(Opcode::Mov, Modifier::I, (Mode::Direct, 0), (Mode::Direct, 1))]);
        assert_eq!(w.start, 0);
    }

    #[test]
    fn dat_defaults_to_f() {
        let w = parse("DAT #0, #0").unwrap();
        assert_eq!(w.instructions[0], ins(Opcode::Dat, Modifier::F, (Mode::Immediate, 0), (Mode::Immediate, 0)));
    }

    #[test]
    fn negative_values_wrap_to_core_size() {
        let w = parse("JMP -2").unwrap();
        assert_eq!(w.instructions[0], ins(Opcode::Jmp, Modifier::B, (Mode::Direct, 7998), (Mode::Direct, 0)));
    }

    #[test]
    fn lone_dat_operand_is_the_b_field() {
        let w = parse("DAT 5").unwrap();
        assert_eq!(w.instructions[0], ins(Opcode::Dat, Modifier::F, (Mode::Immediate, 0), (Mode::Direct, 5)));
    }

    #[test]
    fn labels_resolve_relative_to_the_instruction() {
        let src = "
            ;name Dwarf
            ;author A. K. Dewdney
            loop  ADD #4, bomb
                  MOV bomb, @bomb
                  JMP loop
            bomb  DAT #0, #0
        ";
        let w = parse(src).unwrap();
        assert_eq!(w.name, "Dwarf");
        assert_eq!(w.author.as_deref(), Some("A. K. Dewdney"));
        assert_eq!(w.instructions[0].b_value, 3);
        assert_eq!(w.instructions[1].a_value, 2);
        assert_eq!(w.instructions[1].b_mode, Mode::BIndirect);
        assert_eq!(w.instructions[2].a_value, 7998);
    }

    #[test]
    fn org_and_end_set_start() {
        assert_eq!(parse("DAT 0\nstart MOV 0, 1\nORG start").unwrap().start, 1);
        assert_eq!(parse("DAT 0\ngo MOV 0, 1\nEND go\nthis is ignored").unwrap().start, 1);
        let err = parse("MOV 0, 1\nORG 5").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn label_with_colon_and_expressions() {
        let w = parse("a: DAT #0\nMOV #(2*3)+1, a-1").unwrap();
        assert_eq!(w.instructions[1].a_value, 7);
        assert_eq!(w.instructions[1].b_value, 7998);
    }

    #[test]
    fn rejects_unknown_opcode_with_position() {
        let err = parse("MOV 0, 1\n  FOO 1, 2").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
        assert!(err.message.contains("FOO"));
    }

    #[test]
    fn rejects_bad_modifier_mode_and_operand() {
        assert!(parse("MOV.Q 0, 1").unwrap_err().message.contains("modifier"));
        assert!(parse("MOV 0, 1, 2").is_err());
        assert!(parse("MOV 0, ").is_err());
        assert!(parse("MOV %3, 1").is_err());
        assert!(parse("MOV 1/0, 1").is_err());
        assert!(parse("MOV nowhere, 1").unwrap_err().message.contains("undefined"));
    }

    #[test]
    fn rejects_macros_and_empty_programs() {
        assert!(parse("step EQU 4\nMOV 0, 1").unwrap_err().message.contains("EQU"));
        assert!(parse("i FOR 3\nDAT 0\nROF").is_err());
        assert_eq!(parse("  ; only a comment\n\n").unwrap_err().message, "empty program");
    }

    #[test]
    fn rejects_programs_over_max_length() {
        let src = "NOP\n".repeat(101);
        assert!(parse(&src).unwrap_err().message.contains("maximum"));
        let opts = ParseOptions {
            max_length: 200,
            ..ParseOptions::default()
        };
        assert_eq!(parse_with(&src, &opts).unwrap().len(), 101);
    }

    #[test]
    fn zero_operand_instructions_default_to_direct_zero() {
        let w = parse("NOP").unwrap();
        assert_eq!(w.instructions[0], ins(Opcode::Nop, Modifier::F, (Mode::Direct, 0), (Mode::Direct, 0)));
    }
}
