//! Symbolic emulation of one kernel thread.
//!
//! Every path through the kernel becomes a [`FlowState`]: a register environment of
//! symbolic values, the branch assumptions taken so far, and the ordered trace of
//! memory events. Loops are entered once; loop-carried registers are summarized
//! by opaque loop values, and re-entering a header ends the flow.

mod exec;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::cfg::Cfg;
use crate::ptx::{Kernel, Operand, SpecialReg, StateSpace, Statement, StmtId};
use crate::solver::{BranchVerdict, Solver};
use crate::symexpr::{ExprId, ExprPool, Node, SymOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_flows: usize,
    /// Instructions executed by one flow.
    pub max_steps: usize,
    /// Budget for a single external solver query.
    pub solver_timeout: Duration,
}

impl Default for Limits {
    fn default() -> Limits {
        Limits {
            max_flows: 256,
            max_steps: 20_000,
            solver_timeout: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    Load,
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryEvent {
    pub kind: EventKind,
    pub space: StateSpace,
    pub addr: ExprId,
    /// Access size in bytes.
    pub width: u8,
    pub stmt: StmtId,
    /// Body index of the instruction.
    pub index: usize,
    /// Position in the flow trace.
    pub seq: u32,
    /// Sequence number from which this load no longer reflects memory.
    pub invalidated_at: Option<u32>,
    /// Load trace id; `None` for stores.
    pub trace: Option<u32>,
    /// Loaded or stored value.
    pub value: ExprId,
    /// Guard under which the access happens, if any.
    pub guard: Option<ExprId>,
}

impl MemoryEvent {
    pub fn is_load(&self) -> bool {
        self.kind == EventKind::Load
    }

    /// Whether this load still reflects memory at trace position `seq`.
    pub fn valid_at(&self, seq: u32) -> bool {
        self.invalidated_at.is_none_or(|s| seq < s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FlowEnd {
    Return,
    /// Block entered with a state another flow already explored.
    Memoized,
    /// Back edge to a loop header this flow already entered.
    LoopReentry,
    StepLimit,
    FlowLimit,
}

impl FlowEnd {
    /// Flows cut short by a limit; code after their stop point is unanalyzed.
    pub fn is_truncated(self) -> bool {
        matches!(self, FlowEnd::StepLimit | FlowEnd::FlowLimit)
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    /// Register index to value; `None` until first written.
    pub env: Vec<Option<ExprId>>,
    /// Width-1 conditions, jointly satisfiable (or undecided).
    pub assumptions: Vec<ExprId>,
    pub trace: Vec<MemoryEvent>,
    /// Body index of the next statement.
    pub pc: usize,
    pub steps: usize,
    /// Loops whose header this flow has entered.
    pub entered: BTreeSet<usize>,
    pub end: Option<FlowEnd>,
}

impl FlowState {
    fn start(regs: usize) -> FlowState {
        FlowState {
            env: vec![None; regs],
            assumptions: Vec::new(),
            trace: Vec::new(),
            pc: 0,
            steps: 0,
            entered: BTreeSet::new(),
            end: None,
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.end.is_some_and(FlowEnd::is_truncated)
    }

    pub fn loads(&self) -> impl Iterator<Item = &MemoryEvent> {
        self.trace.iter().filter(|e| e.is_load())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EmuStats {
    pub flows: usize,
    pub forks: usize,
    pub pruned_branches: usize,
    pub memo_hits: usize,
    pub truncated: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmuError {
    #[error("line {line}: register {register} read before any write")]
    UninitializedRegister {
        stmt: StmtId,
        line: u32,
        register: String,
    },
}

/// Register name table shared by all flows of a kernel.
#[derive(Debug, Clone, Default)]
pub struct Registers {
    pub names: Vec<String>,
    pub widths: Vec<u8>,
    index: HashMap<String, usize>,
}

impl Registers {
    fn of(k: &Kernel) -> Registers {
        let mut r = Registers::default();
        for inst in k.instructions() {
            for name in inst.defs().into_iter().chain(crate::cfg::reads(inst)) {
                if !r.index.contains_key(name) {
                    let w = k.register_type(name).map_or(64, |t| t.bits());
                    r.index.insert(name.to_string(), r.names.len());
                    r.names.push(name.to_string());
                    r.widths.push(w);
                }
            }
        }
        r
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug)]
pub struct EmulationResult {
    pub pool: ExprPool,
    pub flows: Vec<FlowState>,
    pub stats: EmuStats,
    pub regs: Registers,
    pub cfg: Cfg,
    /// The 32-bit `%tid.x` symbol.
    pub tid: ExprId,
    /// Opaque leaves whose value may differ between lanes of a warp.
    pub lane_variant: HashSet<ExprId>,
}

impl EmulationResult {
    pub fn value(&self, flow: usize, reg: &str) -> Option<ExprId> {
        self.flows[flow].env[self.regs.get(reg)?]
    }

    /// Flows that ran to a return, memo hit or loop re-entry.
    pub fn complete_flows(&self) -> impl Iterator<Item = (usize, &FlowState)> {
        self.flows.iter().enumerate().filter(|(_, f)| !f.is_truncated())
    }

    /// Body indices at which truncated flows stopped.
    pub fn truncation_points(&self) -> Vec<usize> {
        self.flows
            .iter()
            .filter(|f| f.is_truncated())
            .map(|f| f.pc)
            .collect()
    }

    /// Whether every opaque leaf of `e` other than `%tid.x` is the same in all lanes of a warp.
    pub fn lane_uniform_except_tid(&self, e: ExprId) -> bool {
        self.pool.leaves(e).into_iter().all(|l| {
            l == self.tid
                || (!self.lane_variant.contains(&l)
                    && !matches!(
                        self.pool.node(l),
                        Node::Sym {
                            origin: SymOrigin::Special(SpecialReg::LaneId),
                            ..
                        }
                    ))
        })
    }

    /// One line per memory event: `LD: <addr>` or `ST: <addr>`.
    pub fn dump_trace(&self, flow: usize) -> String {
        let mut out = String::new();
        for e in &self.flows[flow].trace {
            let tag = match e.kind {
                EventKind::Load => "LD",
                EventKind::Store => "ST",
            };
            out.push_str(tag);
            out.push_str(": ");
            out.push_str(&self.pool.display(e.addr));
            if e.invalidated_at.is_some() {
                out.push_str("  [invalidated]");
            }
            out.push('\n');
        }
        out
    }
}

/// How a loop-carried register evolves: `r = r (+|-) step` once per iteration.
#[derive(Debug, Clone, Copy)]
struct Induction {
    reg: usize,
    step: Operand2,
    negate: bool,
    tag: u32,
}

#[derive(Debug, Clone, Copy)]
enum Operand2 {
    Const(i64),
    Reg(usize),
}

#[derive(Debug, Default)]
struct LoopSummary {
    inductions: Vec<Induction>,
    /// Registers written in the body that are not inductions, with the id of their first write.
    others: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MemoKey {
    block: usize,
    live: Vec<Option<ExprId>>,
    loads: Vec<(usize, ExprId, u8)>,
    assumptions: Vec<ExprId>,
    entered: Vec<usize>,
}

pub(crate) struct Emulator<'a> {
    kernel: &'a Kernel,
    cfg: Cfg,
    pool: ExprPool,
    solver: &'a mut Solver,
    regs: Registers,
    labels: HashMap<&'a str, usize>,
    live_in: Vec<Vec<usize>>,
    loops: Vec<LoopSummary>,
    memo: HashSet<MemoKey>,
    specials: HashMap<SpecialReg, ExprId>,
    lane_variant: HashSet<ExprId>,
    next_trace: u32,
    next_havoc: u32,
    stats: EmuStats,
    limits: Limits,
    created: usize,
}

/// Explore every path of `kernel` up to `limits`.
pub fn emulate_kernel(
    kernel: &Kernel,
    limits: &Limits,
    solver: &mut Solver,
) -> Result<EmulationResult, EmuError> {
    let started = Instant::now();
    let cfg = Cfg::build(kernel);
    let regs = Registers::of(kernel);
    let labels = kernel
        .body
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Statement::Label(l) => Some((l.as_str(), i)),
            _ => None,
        })
        .collect();
    let live_in = cfg
        .live_in
        .iter()
        .map(|set| set.iter().filter_map(|r| regs.get(r)).collect())
        .collect();
    let mut emu = Emulator {
        kernel,
        pool: ExprPool::new(),
        solver,
        labels,
        live_in,
        loops: Vec::new(),
        memo: HashSet::new(),
        specials: HashMap::new(),
        lane_variant: HashSet::new(),
        next_trace: 0,
        next_havoc: 0,
        stats: EmuStats::default(),
        limits: *limits,
        created: 1,
        regs,
        cfg,
    };
    emu.loops = (0..emu.cfg.loops.len()).map(|l| emu.summarize_loop(l)).collect();
    let tid = emu.special(SpecialReg::TidX);
    let flows = emu.run()?;
    let mut stats = emu.stats;
    stats.flows = flows.len();
    stats.truncated = flows.iter().filter(|f| f.is_truncated()).count();
    stats.wall_ms = started.elapsed().as_millis() as u64;
    log::debug!(
        "{}: {} flows, {} forks, {} pruned, {} memo hits",
        kernel.name,
        stats.flows,
        stats.forks,
        stats.pruned_branches,
        stats.memo_hits
    );
    Ok(EmulationResult {
        pool: emu.pool,
        flows,
        stats,
        regs: emu.regs,
        cfg: emu.cfg,
        tid,
        lane_variant: emu.lane_variant,
    })
}

impl<'a> Emulator<'a> {
    fn run(&mut self) -> Result<Vec<FlowState>, EmuError> {
        let mut pending = vec![FlowState::start(self.regs.len())];
        let mut done = Vec::new();
        while let Some(mut f) = pending.pop() {
            while f.end.is_none() {
                if let Some(other) = self.step(&mut f)? {
                    pending.push(other);
                }
            }
            done.push(f);
        }
        Ok(done)
    }

    /// Execute the statement at `f.pc`. A fork returns the fall-through flow and
    /// leaves `f` on the taken side.
    fn step(&mut self, f: &mut FlowState) -> Result<Option<FlowState>, EmuError> {
        let body = &self.kernel.body;
        if f.pc >= body.len() {
            f.end = Some(FlowEnd::Return);
            return Ok(None);
        }
        let block = self.cfg.block_of[f.pc];
        if self.cfg.blocks[block].start == f.pc {
            self.enter_block(f, block);
            if f.end.is_some() {
                return Ok(None);
            }
        }
        let Statement::Instruction(inst) = &body[f.pc] else {
            f.pc += 1;
            return Ok(None);
        };
        f.steps += 1;
        if f.steps > self.limits.max_steps {
            f.end = Some(FlowEnd::StepLimit);
            return Ok(None);
        }
        if inst.is_branch() || inst.is_exit() {
            return self.control(f, inst);
        }
        self.exec(f, inst)?;
        f.pc += 1;
        Ok(None)
    }

    fn enter_block(&mut self, f: &mut FlowState, block: usize) {
        let header_of = self.cfg.loop_at_header(block);
        if let Some(l) = header_of {
            if f.entered.contains(&l) {
                f.end = Some(FlowEnd::LoopReentry);
                return;
            }
        }
        let key = MemoKey {
            block,
            live: self.live_in[block].iter().map(|&r| f.env[r]).collect(),
            loads: f
                .trace
                .iter()
                .filter(|e| e.is_load() && e.invalidated_at.is_none())
                .map(|e| (e.index, e.addr, e.width))
                .collect(),
            assumptions: {
                let mut a = f.assumptions.clone();
                a.sort();
                a.dedup();
                a
            },
            entered: f.entered.iter().copied().collect(),
        };
        if !self.memo.insert(key) {
            self.stats.memo_hits += 1;
            f.end = Some(FlowEnd::Memoized);
            return;
        }
        if let Some(l) = header_of {
            self.enter_loop(f, l);
        }
    }

    /// Summarize registers carried around loop `l` for an arbitrary iteration.
    fn enter_loop(&mut self, f: &mut FlowState, l: usize) {
        f.entered.insert(l);
        let loop_id = l as u32;
        let summary = std::mem::take(&mut self.loops[l]);
        for ind in &summary.inductions {
            let Some(init) = f.env[ind.reg] else {
                continue;
            };
            let w = self.pool.width(init);
            let step = match ind.step {
                Operand2::Const(c) => Some(self.pool.constant(w, c as u64)),
                Operand2::Reg(s) => f.env[s].map(|v| self.coerce(v, w, false)),
            };
            let iter = self.pool.loop_var(loop_id, ind.tag, w);
            f.env[ind.reg] = Some(match step {
                Some(step) => {
                    let k = self.pool.mul(iter, step);
                    if ind.negate {
                        self.pool.sub(init, k)
                    } else {
                        self.pool.add(init, k)
                    }
                }
                None => {
                    self.lane_variant.insert(iter);
                    iter
                }
            });
        }
        for &(r, tag) in &summary.others {
            if f.env[r].is_some() {
                let v = self.pool.loop_var(loop_id, tag, self.regs.widths[r]);
                self.lane_variant.insert(v);
                f.env[r] = Some(v);
            }
        }
        self.loops[l] = summary;
    }

    fn summarize_loop(&self, l: usize) -> LoopSummary {
        let lp = &self.cfg.loops[l];
        let body = &self.kernel.body;
        // Every write in the loop, per register.
        let mut defs: HashMap<usize, Vec<usize>> = HashMap::new();
        for &b in &lp.blocks {
            let blk = &self.cfg.blocks[b];
            for i in blk.start..blk.end {
                if let Some(inst) = body[i].as_instruction() {
                    for d in inst.defs() {
                        if let Some(r) = self.regs.get(d) {
                            defs.entry(r).or_default().push(i);
                        }
                    }
                }
            }
        }
        let latches: Vec<usize> = self.cfg.blocks[lp.header]
            .preds
            .iter()
            .copied()
            .filter(|p| lp.blocks.contains(p))
            .collect();
        let unique_def = |r: usize| -> Option<usize> {
            match defs.get(&r).map(Vec::as_slice) {
                Some([i]) => Some(*i),
                _ => None,
            }
        };
        let inst_at = |i: usize| body[i].as_instruction().expect("def index is an instruction");
        // `reg` holds the header value of `target` when reached through unguarded movs.
        let aliases = |mut reg: usize, target: usize| -> bool {
            for _ in 0..4 {
                if reg == target {
                    return true;
                }
                let Some(i) = unique_def(reg) else {
                    return false;
                };
                let inst = inst_at(i);
                if inst.opcode != "mov" || inst.guard.is_some() {
                    return false;
                }
                match inst.operands.get(1).and_then(Operand::as_register) {
                    Some(src) => match self.regs.get(src) {
                        Some(s) => reg = s,
                        None => return false,
                    },
                    None => return false,
                }
            }
            false
        };
        let mut summary = LoopSummary::default();
        let mut regs: Vec<usize> = defs.keys().copied().collect();
        regs.sort_unstable();
        for r in regs {
            let first = inst_at(defs[&r][0]).id.0;
            let induction = unique_def(r).and_then(|i| {
                let every_iteration = latches
                    .iter()
                    .all(|&lb| self.cfg.dominates(self.cfg.block_of[i], lb));
                if !every_iteration {
                    return None;
                }
                // Chase `r <- mov x` to the arithmetic update.
                let mut upd = inst_at(i);
                for _ in 0..4 {
                    if upd.opcode != "mov" || upd.guard.is_some() {
                        break;
                    }
                    let src = self.regs.get(upd.operands.get(1)?.as_register()?)?;
                    upd = inst_at(unique_def(src)?);
                }
                if upd.guard.is_some() || !matches!(upd.opcode.as_str(), "add" | "sub") {
                    return None;
                }
                if upd.ty().is_some_and(|t| t.is_float()) || upd.options().iter().any(|o| *o != "lo") {
                    return None;
                }
                let a = upd.operands.get(1)?;
                let b = upd.operands.get(2)?;
                let step_of = |op: &Operand| -> Option<Operand2> {
                    match op {
                        Operand::Immediate(imm) => Some(Operand2::Const(imm.bits as i64)),
                        Operand::Register(s) => {
                            let s = self.regs.get(s)?;
                            (!defs.contains_key(&s)).then_some(Operand2::Reg(s))
                        }
                        _ => None,
                    }
                };
                let is_self = |op: &Operand| {
                    op.as_register()
                        .and_then(|x| self.regs.get(x))
                        .is_some_and(|x| aliases(x, r))
                };
                let sub = upd.opcode == "sub";
                if is_self(a) {
                    Some((step_of(b)?, sub))
                } else if is_self(b) && !sub {
                    Some((step_of(a)?, false))
                } else {
                    None
                }
            });
            match induction {
                Some((step, negate)) => summary.inductions.push(Induction {
                    reg: r,
                    step,
                    negate,
                    tag: first,
                }),
                None => summary.others.push((r, first)),
            }
        }
        summary
    }

    fn control(
        &mut self,
        f: &mut FlowState,
        inst: &crate::ptx::Instruction,
    ) -> Result<Option<FlowState>, EmuError> {
        let target = if inst.is_exit() {
            None
        } else {
            let label = inst.branch_target().unwrap_or_default();
            Some(self.labels[label])
        };
        let jump = |f: &mut FlowState| match target {
            Some(t) => f.pc = t,
            None => f.end = Some(FlowEnd::Return),
        };
        let Some(guard) = &inst.guard else {
            jump(f);
            return Ok(None);
        };
        let cond = self.guard_value(f, inst, guard)?;
        match self.solver.proves_branch(&mut self.pool, &f.assumptions, cond) {
            BranchVerdict::Taken => {
                if self.pool.as_const(cond).is_none() {
                    self.stats.pruned_branches += 1;
                }
                jump(f);
                Ok(None)
            }
            BranchVerdict::NotTaken => {
                if self.pool.as_const(cond).is_none() {
                    self.stats.pruned_branches += 1;
                }
                f.pc += 1;
                Ok(None)
            }
            BranchVerdict::Unknown => {
                if self.created >= self.limits.max_flows {
                    f.end = Some(FlowEnd::FlowLimit);
                    return Ok(None);
                }
                self.created += 1;
                self.stats.forks += 1;
                let mut other = f.clone();
                let not_cond = self.pool.not(cond);
                other.assumptions.push(not_cond);
                other.pc += 1;
                self.fix_predicate(&mut other, guard, false);
                f.assumptions.push(cond);
                self.fix_predicate(f, guard, true);
                jump(f);
                Ok(Some(other))
            }
        }
    }

    /// Pin the guard predicate to the value implied by the branch direction.
    fn fix_predicate(&mut self, f: &mut FlowState, guard: &crate::ptx::Guard, taken: bool) {
        if let Some(r) = self.regs.get(&guard.pred) {
            let v = self.pool.constant(1, (taken != guard.negated) as u64);
            f.env[r] = Some(v);
        }
    }

    pub(crate) fn special(&mut self, r: SpecialReg) -> ExprId {
        if let Some(&e) = self.specials.get(&r) {
            return e;
        }
        let e = self.pool.sym(32, SymOrigin::Special(r));
        self.specials.insert(r, e);
        e
    }

    pub(crate) fn havoc(&mut self, width: u8, lane_variant: bool) -> ExprId {
        self.next_havoc += 1;
        let e = self.pool.sym(width, SymOrigin::Havoc(self.next_havoc));
        if lane_variant {
            self.lane_variant.insert(e);
        }
        e
    }

    /// Whether `e` has the same value in every lane of a warp.
    pub(crate) fn uniform(&self, e: ExprId) -> bool {
        self.pool.leaves(e).into_iter().all(|l| match self.pool.node(l) {
            Node::Sym {
                origin: SymOrigin::Special(SpecialReg::TidX | SpecialReg::LaneId),
                ..
            } => false,
            Node::Load { .. } => false,
            // Its arguments are checked by the same walk.
            Node::FloatOp { .. } => true,
            _ => !self.lane_variant.contains(&l),
        })
    }

    pub(crate) fn coerce(&mut self, e: ExprId, w: u8, signed: bool) -> ExprId {
        let have = self.pool.width(e);
        if have == w {
            e
        } else if have > w {
            self.pool.truncate(w, e)
        } else {
            self.pool.extend(signed, w, e)
        }
    }
}
