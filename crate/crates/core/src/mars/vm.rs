//! The ICWS-94 virtual machine. SEMANTICS.md at the repository root is the
//! reference for corner cases.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MarsConfig, MarsError};
use crate::redcode::{Instruction, Mode, Modifier, Opcode, Warrior};

/// Fixed-size set of core addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    bits: Vec<u64>,
    len: usize,
    count: usize,
}

impl CellSet {
    pub fn new(len: usize) -> Self {
        CellSet {
            bits: vec![0; len.div_ceil(64)],
            len,
            count: 0,
        }
    }

    #[inline]
    pub fn insert(&mut self, addr: u32) {
        let (word, bit) = (addr as usize / 64, addr % 64);
        let mask = 1u64 << bit;
        if self.bits[word] & mask == 0 {
            self.bits[word] |= mask;
            self.count += 1;
        }
    }

    pub fn contains(&self, addr: u32) -> bool {
        (addr as usize) < self.len && self.bits[addr as usize / 64] & (1u64 << (addr % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len as u32).filter(|&a| self.contains(a))
    }
}

/// Per-warrior result of one battle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarriorResult {
    /// First timestep at which the warrior is dead; `None` if it is alive
    /// at the final timestep.
    pub death_cycle: Option<u32>,
    pub touched: CellSet,
    pub length: usize,
    pub load_address: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BattleOutcome {
    /// Number of timesteps the alive masks cover.
    pub max_cycles: u32,
    /// Timesteps actually simulated before the battle was decided.
    pub cycles_run: u32,
    pub core_size: u32,
    pub warriors: Vec<WarriorResult>,
}

impl BattleOutcome {
    pub fn n_warriors(&self) -> usize {
        self.warriors.len()
    }

    /// `A^i_τ` for `τ` in `1..=max_cycles`.
    pub fn alive_at(&self, i: usize, tau: u32) -> bool {
        self.warriors[i].death_cycle.is_none_or(|d| tau < d)
    }

    pub fn alive_mask(&self, i: usize) -> Vec<bool> {
        (1..=self.max_cycles).map(|tau| self.alive_at(i, tau)).collect()
    }

    /// Number of timesteps warrior `i` was alive.
    pub fn lifespan(&self, i: usize) -> u32 {
        match self.warriors[i].death_cycle {
            Some(d) => d - 1,
            None => self.max_cycles,
        }
    }

    pub fn survivors(&self) -> Vec<usize> {
        (0..self.warriors.len())
            .filter(|&i| self.warriors[i].death_cycle.is_none())
            .collect()
    }

    pub fn touched_fraction(&self, i: usize) -> f64 {
        self.warriors[i].touched.len() as f64 / f64::from(self.core_size)
    }
}

/// One executed instruction, for golden traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u32,
    pub warrior: usize,
    pub pc: u32,
    pub instruction: String,
    /// Warriors that died as a result of this step.
    pub deaths: Vec<usize>,
}

/// Run one battle. Warriors execute in list order within a timestep.
pub fn run_battle(warriors: &[Warrior], cfg: &MarsConfig, seed: u64) -> Result<BattleOutcome, MarsError> {
    run(warriors, cfg, seed, None)
}

pub fn run_battle_traced(
    warriors: &[Warrior],
    cfg: &MarsConfig,
    seed: u64,
    observer: &mut dyn FnMut(&TraceEvent),
) -> Result<BattleOutcome, MarsError> {
    run(warriors, cfg, seed, Some(observer))
}

fn run(
    warriors: &[Warrior],
    cfg: &MarsConfig,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&TraceEvent)>,
) -> Result<BattleOutcome, MarsError> {
    cfg.validate()?;
    if warriors.is_empty() {
        return Err(MarsError::Placement("no warriors to load".into()));
    }
    for (i, w) in warriors.iter().enumerate() {
        w.validate(cfg.core_size, cfg.max_warrior_length)
            .map_err(|e| MarsError::InvalidWarrior { index: i, source: e })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = place(warriors, cfg, &mut rng)?;

    let mut vm = Vm::new(cfg);
    for (w, &base) in warriors.iter().zip(&bases) {
        vm.load(w, base);
    }

    let n = warriors.len();
    let halt_at = if n >= 2 { 1 } else { 0 };
    let mut alive = n;
    let mut cycles_run = cfg.max_cycles;
    'outer: for cycle in 1..=cfg.max_cycles {
        for i in 0..n {
            if vm.procs[i].death.is_some() {
                continue;
            }
            let pc = vm.step(i);
            let died = vm.procs[i].queue.is_empty();
            if died {
                vm.procs[i].death = Some(cycle);
                alive -= 1;
            }
            if let Some(obs) = observer.as_deref_mut() {
                obs(&TraceEvent {
                    cycle,
                    warrior: i,
                    pc,
                    instruction: vm.last_executed.to_string(),
                    deaths: if died { vec![i] } else { Vec::new() },
                });
            }
        }
        if alive <= halt_at {
            cycles_run = cycle;
            break 'outer;
        }
    }

    let results = vm
        .procs
        .into_iter()
        .zip(warriors.iter().zip(&bases))
        .map(|(p, (w, &base))| WarriorResult {
            death_cycle: p.death,
            touched: p.touched,
            length: w.len(),
            load_address: base,
        })
        .collect();
    Ok(BattleOutcome {
        max_cycles: cfg.max_cycles,
        cycles_run,
        core_size: cfg.core_size,
        warriors: results,
    })
}

/// Random load addresses: the first warrior goes anywhere, the remaining
/// core slack is split at uniformly drawn cut points so that each warrior
/// keeps at least `max(min_separation, len)` cells before the next one.
fn place(warriors: &[Warrior], cfg: &MarsConfig, rng: &mut ChaCha8Rng) -> Result<Vec<u32>, MarsError> {
    let m = u64::from(cfg.core_size);
    let gaps: Vec<u64> = warriors
        .iter()
        .map(|w| u64::from(cfg.min_separation).max(w.len() as u64))
        .collect();
    let needed: u64 = gaps.iter().sum();
    if warriors.len() > 1 && needed > m {
        return Err(MarsError::Placement(format!(
            "{} warriors need {needed} cells with separation, core has {m}",
            warriors.len()
        )));
    }
    let first = rng.gen_range(0..m);
    if warriors.len() == 1 {
        return Ok(vec![first as u32]);
    }
    let slack = m - needed;
    let mut cuts: Vec<u64> = (0..warriors.len() - 1).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut bases = Vec::with_capacity(warriors.len());
    let mut offset = 0u64;
    let mut prev_cut = 0u64;
    for (i, gap) in gaps.iter().enumerate() {
        if i > 0 {
            offset += cuts[i - 1] - prev_cut;
            prev_cut = cuts[i - 1];
        }
        bases.push(((first + offset) % m) as u32);
        offset += gap;
    }
    Ok(bases)
}

struct Process {
    queue: VecDeque<u32>,
    touched: CellSet,
    death: Option<u32>,
}

struct Vm {
    core: Vec<Instruction>,
    size: u32,
    limit: usize,
    procs: Vec<Process>,
    last_executed: Instruction,
}

impl Vm {
    fn new(cfg: &MarsConfig) -> Self {
        Vm {
            core: vec![Instruction::EMPTY; cfg.core_size as usize],
            size: cfg.core_size,
            limit: cfg.effective_process_limit(),
            procs: Vec::new(),
            last_executed: Instruction::EMPTY,
        }
    }

    fn load(&mut self, w: &Warrior, base: u32) {
        for (k, ins) in w.instructions.iter().enumerate() {
            let addr = self.wrap(base + k as u32);
            self.core[addr as usize] = *ins;
        }
        let mut queue = VecDeque::new();
        queue.push_back(self.wrap(base + w.start as u32));
        self.procs.push(Process {
            queue,
            touched: CellSet::new(self.size as usize),
            death: None,
        });
    }

    #[inline]
    fn wrap(&self, v: u32) -> u32 {
        v % self.size
    }

    #[inline]
    fn add(&self, a: u32, b: u32) -> u32 {
        (a + b) % self.size
    }

    #[inline]
    fn dec(&self, v: u32) -> u32 {
        if v == 0 {
            self.size - 1
        } else {
            v - 1
        }
    }

    #[inline]
    fn inc(&self, v: u32) -> u32 {
        if v + 1 == self.size {
            0
        } else {
            v + 1
        }
    }

    /// Evaluate one operand: returns the effective address and a copy of the
    /// instruction found there (the operand register).
    #[inline]
    fn operand(&mut self, w: usize, pc: u32, mode: Mode, value: u32) -> (u32, Instruction) {
        if mode == Mode::Immediate {
            return (pc, self.core[pc as usize]);
        }
        let ptr = self.add(pc, value);
        if mode == Mode::Direct {
            self.procs[w].touched.insert(ptr);
            return (ptr, self.core[ptr as usize]);
        }
        self.procs[w].touched.insert(ptr);
        let p = ptr as usize;
        let offset = match mode {
            Mode::AIndirect | Mode::APostincrement => self.core[p].a_value,
            Mode::BIndirect | Mode::BPostincrement => self.core[p].b_value,
            Mode::APredecrement => {
                self.core[p].a_value = self.dec(self.core[p].a_value);
                self.core[p].a_value
            }
            Mode::BPredecrement => {
                self.core[p].b_value = self.dec(self.core[p].b_value);
                self.core[p].b_value
            }
            Mode::Immediate | Mode::Direct => unreachable!(),
        };
        let addr = self.add(ptr, offset);
        let reg = self.core[addr as usize];
        match mode {
            Mode::APostincrement => self.core[p].a_value = self.inc(self.core[p].a_value),
            Mode::BPostincrement => self.core[p].b_value = self.inc(self.core[p].b_value),
            _ => {}
        }
        self.procs[w].touched.insert(addr);
        (addr, reg)
    }

    #[inline]
    fn queue(&mut self, w: usize, addr: u32) {
        let q = &mut self.procs[w].queue;
        if q.len() < self.limit {
            q.push_back(addr);
        }
    }

    /// Execute the front process of warrior `w`; returns its PC.
    fn step(&mut self, w: usize) -> u32 {
        let pc = match self.procs[w].queue.pop_front() {
            Some(pc) => pc,
            None => return 0,
        };
        self.procs[w].touched.insert(pc);
        let ir = self.core[pc as usize];
        self.last_executed = ir;

        let (a_addr, a_reg) = self.operand(w, pc, ir.a_mode, ir.a_value);
        let (b_addr, b_reg) = self.operand(w, pc, ir.b_mode, ir.b_value);
        let next = self.inc(pc);
        let target = b_addr as usize;

        match ir.opcode {
            Opcode::Dat => {}
            Opcode::Mov => {
                self.procs[w].touched.insert(b_addr);
                let cell = &mut self.core[target];
                match ir.modifier {
                    Modifier::A => cell.a_value = a_reg.a_value,
                    Modifier::B => cell.b_value = a_reg.b_value,
                    Modifier::AB => cell.b_value = a_reg.a_value,
                    Modifier::BA => cell.a_value = a_reg.b_value,
                    Modifier::F => {
                        cell.a_value = a_reg.a_value;
                        cell.b_value = a_reg.b_value;
                    }
                    Modifier::X => {
                        cell.a_value = a_reg.b_value;
                        cell.b_value = a_reg.a_value;
                    }
                    Modifier::I => *cell = a_reg,
                }
                self.queue(w, next);
            }
            Opcode::Add | Opcode::Sub | Opcode::Mul => {
                self.procs[w].touched.insert(b_addr);
                let size = self.size;
                let f = |b: u32, a: u32| -> u32 {
                    match ir.opcode {
                        Opcode::Add => (b + a) % size,
                        Opcode::Sub => (b + size - a) % size,
                        _ => ((u64::from(b) * u64::from(a)) % u64::from(size)) as u32,
                    }
                };
                self.arith(target, ir.modifier, a_reg, b_reg, |b, a| Some(f(b, a)));
                self.queue(w, next);
            }
            Opcode::Div | Opcode::Mod => {
                self.procs[w].touched.insert(b_addr);
                let is_div = ir.opcode == Opcode::Div;
                let ok = self.arith(target, ir.modifier, a_reg, b_reg, |b, a| {
                    if a == 0 {
                        None
                    } else if is_div {
                        Some(b / a)
                    } else {
                        Some(b % a)
                    }
                });
                if ok {
                    self.queue(w, next);
                }
            }
            Opcode::Jmp => self.queue(w, a_addr),
            Opcode::Jmz | Opcode::Jmn => {
                let zero = match ir.modifier {
                    Modifier::A | Modifier::BA => b_reg.a_value == 0,
                    Modifier::B | Modifier::AB => b_reg.b_value == 0,
                    Modifier::F | Modifier::X | Modifier::I => b_reg.a_value == 0 && b_reg.b_value == 0,
                };
                // JMN.F jumps when either field is non-zero
                let jump = if ir.opcode == Opcode::Jmz { zero } else { !zero };
                self.queue(w, if jump { a_addr } else { next });
            }
            Opcode::Djn => {
                self.procs[w].touched.insert(b_addr);
                let jump = match ir.modifier {
                    Modifier::A | Modifier::BA => {
                        self.core[target].a_value = self.dec(self.core[target].a_value);
                        self.dec(b_reg.a_value) != 0
                    }
                    Modifier::B | Modifier::AB => {
                        self.core[target].b_value = self.dec(self.core[target].b_value);
                        self.dec(b_reg.b_value) != 0
                    }
                    Modifier::F | Modifier::X | Modifier::I => {
                        self.core[target].a_value = self.dec(self.core[target].a_value);
                        self.core[target].b_value = self.dec(self.core[target].b_value);
                        self.dec(b_reg.a_value) != 0 || self.dec(b_reg.b_value) != 0
                    }
                };
                self.queue(w, if jump { a_addr } else { next });
            }
            Opcode::Seq | Opcode::Sne | Opcode::Slt => {
                let cond = compare(ir.opcode, ir.modifier, &a_reg, &b_reg);
                self.queue(w, if cond { self.inc(next) } else { next });
            }
            Opcode::Spl => {
                self.queue(w, next);
                self.queue(w, a_addr);
            }
            Opcode::Nop => self.queue(w, next),
        }
        pc
    }

    /// Apply `op(b_field, a_field)` to the target cell under `modifier`.
    /// Returns false if any component failed (division by zero); the other
    /// components are still written.
    fn arith(
        &mut self,
        target: usize,
        modifier: Modifier,
        a: Instruction,
        b: Instruction,
        op: impl Fn(u32, u32) -> Option<u32>,
    ) -> bool {
        let cell = &mut self.core[target];
        let mut ok = true;
        let mut apply = |slot: &mut u32, bv: u32, av: u32| match op(bv, av) {
            Some(v) => *slot = v,
            None => ok = false,
        };
        match modifier {
            Modifier::A => apply(&mut cell.a_value, b.a_value, a.a_value),
            Modifier::B => apply(&mut cell.b_value, b.b_value, a.b_value),
            Modifier::AB => apply(&mut cell.b_value, b.b_value, a.a_value),
            Modifier::BA => apply(&mut cell.a_value, b.a_value, a.b_value),
            Modifier::F | Modifier::I => {
                apply(&mut cell.a_value, b.a_value, a.a_value);
                apply(&mut cell.b_value, b.b_value, a.b_value);
            }
            Modifier::X => {
                apply(&mut cell.a_value, b.a_value, a.b_value);
                apply(&mut cell.b_value, b.b_value, a.a_value);
            }
        }
        ok
    }
}

fn compare(op: Opcode, modifier: Modifier, a: &Instruction, b: &Instruction) -> bool {
    let (first, second) = match modifier {
        Modifier::A => ((a.a_value, b.a_value), None),
        Modifier::B => ((a.b_value, b.b_value), None),
        Modifier::AB => ((a.a_value, b.b_value), None),
        Modifier::BA => ((a.b_value, b.a_value), None),
        Modifier::F | Modifier::I => ((a.a_value, b.a_value), Some((a.b_value, b.b_value))),
        Modifier::X => ((a.a_value, b.b_value), Some((a.b_value, b.a_value))),
    };
    let holds = |test: fn(u32, u32) -> bool| test(first.0, first.1) && second.is_none_or(|(x, y)| test(x, y));
    match op {
        Opcode::Slt => holds(|x, y| x < y),
        Opcode::Seq if modifier == Modifier::I => a == b,
        Opcode::Sne if modifier == Modifier::I => a != b,
        Opcode::Seq => holds(|x, y| x == y),
        _ => !holds(|x, y| x == y),
    }
}
