//! Warp scheduling and per-lane instruction semantics.

use std::collections::HashMap;

use crate::cfg::Cfg;
use crate::ptx::{
    instruction_text, raw_registers, AddrBase, ImmKind, Instruction, Kernel, Operand, ScalarType,
    SpecialReg, StateSpace, Statement,
};

use super::float;
use super::{LaunchConfig, MemoryImage, SimError, SimEvent, SimOptions, SimOutcome};

const WARP: usize = 32;

fn mask(w: u8) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

fn sext(v: u64, w: u8) -> u64 {
    if w >= 64 {
        v
    } else {
        let s = 64 - w as u32;
        (((v << s) as i64) >> s) as u64
    }
}

/// Resize `v` from `from` bits to `to` bits.
fn resize(v: u64, from: u8, to: u8, signed: bool) -> u64 {
    let v = v & mask(from);
    if to > from && signed {
        sext(v, from) & mask(to)
    } else {
        v & mask(to)
    }
}

pub(super) struct Program<'k> {
    k: &'k Kernel,
    params: Vec<u64>,
    regs: HashMap<&'k str, usize>,
    widths: Vec<u8>,
    labels: HashMap<&'k str, usize>,
    /// Reconvergence body index for each branch; `body.len()` means kernel exit.
    reconv: Vec<usize>,
    shared_offsets: Vec<u64>,
    shared_size: usize,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    pc: usize,
    mask: u32,
    rpc: usize,
}

struct Warp {
    /// Per lane register file; `None` until written.
    regs: Vec<Vec<Option<u64>>>,
    tid: Vec<[u32; 3]>,
    /// Linear thread index of each lane.
    thread: Vec<u64>,
    exited: u32,
    stack: Vec<Entry>,
    waiting: bool,
}

enum Flow {
    Next,
    Barrier,
}

struct BlockCtx<'a> {
    ctaid: [u32; 3],
    cfg: &'a LaunchConfig,
    shared: Vec<u8>,
    block_linear: u64,
}

impl<'k> Program<'k> {
    pub(super) fn new(k: &'k Kernel, params: Vec<u64>) -> Program<'k> {
        let mut regs = HashMap::new();
        let mut widths = Vec::new();
        for inst in k.instructions() {
            let mut names = inst.defs();
            names.extend(inst.uses());
            for n in names {
                if !regs.contains_key(n) {
                    regs.insert(n, widths.len());
                    widths.push(k.register_type(n).map_or(64, ScalarType::bits));
                }
            }
        }
        let labels = k
            .body
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Statement::Label(l) => Some((l.as_str(), i)),
                _ => None,
            })
            .collect();
        let cfg = Cfg::build(k);
        let end = k.body.len();
        let reconv = (0..end)
            .map(|i| cfg.reconvergence_point(i).unwrap_or(end))
            .collect();
        let mut shared_offsets = Vec::new();
        let mut off = 0u64;
        for d in &k.shared_decls {
            let align = d.align.unwrap_or(d.ty.bytes() as u32).max(1) as u64;
            off = off.div_ceil(align) * align;
            shared_offsets.push(off);
            off += d.size_bytes();
        }
        Program {
            k,
            params,
            regs,
            widths,
            labels,
            reconv,
            shared_offsets,
            shared_size: off as usize,
        }
    }

    pub(super) fn run_block(
        &self,
        ctaid: [u32; 3],
        cfg: &LaunchConfig,
        mem: &mut MemoryImage,
        opts: &SimOptions,
        out: &mut SimOutcome,
    ) -> Result<(), SimError> {
        let b = cfg.block;
        let nthreads = b.count();
        let block_linear = ctaid[0] as u64
            + cfg.grid.x as u64 * (ctaid[1] as u64 + cfg.grid.y as u64 * ctaid[2] as u64);
        let mut warps: Vec<Warp> = (0..nthreads.div_ceil(WARP as u64))
            .map(|w| {
                let mut exists = 0u32;
                let mut tid = vec![[0; 3]; WARP];
                let mut thread = vec![0; WARP];
                for l in 0..WARP {
                    let t = w * WARP as u64 + l as u64;
                    thread[l] = t;
                    if t < nthreads {
                        exists |= 1 << l;
                        tid[l] = [
                            (t % b.x as u64) as u32,
                            ((t / b.x as u64) % b.y as u64) as u32,
                            (t / (b.x as u64 * b.y as u64)) as u32,
                        ];
                    }
                }
                Warp {
                    regs: vec![vec![None; self.widths.len()]; WARP],
                    tid,
                    thread,
                    exited: 0,
                    stack: vec![Entry {
                        pc: 0,
                        mask: exists,
                        rpc: self.k.body.len(),
                    }],
                    waiting: false,
                }
            })
            .collect();
        let mut ctx = BlockCtx {
            ctaid,
            cfg,
            shared: vec![0; self.shared_size],
            block_linear,
        };
        let mut steps = 0u64;
        loop {
            let mut progressed = false;
            for w in warps.iter_mut() {
                if w.waiting || w.stack.is_empty() {
                    continue;
                }
                progressed = true;
                self.run_warp(w, &mut ctx, mem, opts, out, &mut steps)?;
            }
            let live: Vec<&mut Warp> = warps.iter_mut().filter(|w| !w.stack.is_empty()).collect();
            if live.is_empty() {
                break;
            }
            if live.iter().all(|w| w.waiting) {
                for w in live {
                    w.waiting = false;
                }
            } else if !progressed {
                return Err(SimError::Deadlock {
                    block: block_linear,
                });
            }
        }
        out.steps += steps;
        Ok(())
    }

    /// Run until the warp finishes or parks at a barrier.
    fn run_warp(
        &self,
        w: &mut Warp,
        ctx: &mut BlockCtx,
        mem: &mut MemoryImage,
        opts: &SimOptions,
        out: &mut SimOutcome,
        steps: &mut u64,
    ) -> Result<(), SimError> {
        let body = &self.k.body;
        while let Some(top) = w.stack.last_mut() {
            top.mask &= !w.exited;
            if top.mask == 0 || top.pc == top.rpc {
                w.stack.pop();
                continue;
            }
            if top.pc >= body.len() {
                w.exited |= top.mask;
                w.stack.pop();
                continue;
            }
            let pc = top.pc;
            let active = top.mask;
            let Statement::Instruction(inst) = &body[pc] else {
                top.pc += 1;
                continue;
            };
            *steps += 1;
            if *steps > opts.max_steps {
                return Err(SimError::StepLimit(opts.max_steps));
            }
            let guard = self.guard_mask(w, inst, active)?;
            if inst.is_branch() {
                let target = inst
                    .branch_target()
                    .and_then(|l| self.labels.get(l).copied())
                    .ok_or_else(|| self.unsupported(inst))?;
                let top = w.stack.last_mut().expect("non-empty stack");
                if guard == active {
                    top.pc = target;
                } else if guard == 0 {
                    top.pc = pc + 1;
                } else {
                    let r = self.reconv[pc];
                    top.pc = r;
                    w.stack.push(Entry {
                        pc: pc + 1,
                        mask: active & !guard,
                        rpc: r,
                    });
                    w.stack.push(Entry {
                        pc: target,
                        mask: guard,
                        rpc: r,
                    });
                }
                continue;
            }
            if inst.is_exit() {
                w.exited |= guard;
                w.stack.last_mut().expect("non-empty stack").pc = pc + 1;
                continue;
            }
            let flow = self.exec(w, inst, active, guard, ctx, mem, opts, out)?;
            let top = w.stack.last_mut().expect("non-empty stack");
            match flow {
                Flow::Next => top.pc = pc + 1,
                Flow::Barrier => {
                    top.pc = pc + 1;
                    w.waiting = true;
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn unsupported(&self, inst: &Instruction) -> SimError {
        SimError::Unsupported {
            line: inst.line,
            text: instruction_text(inst),
        }
    }

    fn guard_mask(&self, w: &Warp, inst: &Instruction, active: u32) -> Result<u32, SimError> {
        let Some(g) = &inst.guard else {
            return Ok(active);
        };
        let mut m = 0;
        for l in lanes(active) {
            let v = self.reg(w, l, &g.pred, inst)? & 1;
            if (v == 1) != g.negated {
                m |= 1 << l;
            }
        }
        Ok(m)
    }

    fn reg(&self, w: &Warp, lane: usize, name: &str, inst: &Instruction) -> Result<u64, SimError> {
        self.regs
            .get(name)
            .and_then(|&i| w.regs[lane][i])
            .ok_or_else(|| SimError::UninitializedRegister {
                line: inst.line,
                register: name.to_string(),
            })
    }

    fn write(&self, w: &mut Warp, lane: usize, name: &str, v: u64, from: u8, signed: bool) {
        if let Some(&i) = self.regs.get(name) {
            w.regs[lane][i] = Some(resize(v, from, self.widths[i], signed));
        }
    }

    /// Source operand at width `width`.
    fn val(
        &self,
        w: &Warp,
        lane: usize,
        ctx: &BlockCtx,
        inst: &Instruction,
        op: &Operand,
        width: u8,
        signed: bool,
    ) -> Result<u64, SimError> {
        Ok(match op {
            Operand::Register(r) => {
                let i = self.regs[r.as_str()];
                let v = self.reg(w, lane, r, inst)?;
                resize(v, self.widths[i], width, signed)
            }
            Operand::Special(s) => {
                let c = ctx.cfg;
                let v = match s {
                    SpecialReg::TidX => w.tid[lane][0],
                    SpecialReg::TidY => w.tid[lane][1],
                    SpecialReg::TidZ => w.tid[lane][2],
                    SpecialReg::NtidX => c.block.x,
                    SpecialReg::NtidY => c.block.y,
                    SpecialReg::NtidZ => c.block.z,
                    SpecialReg::CtaidX => ctx.ctaid[0],
                    SpecialReg::CtaidY => ctx.ctaid[1],
                    SpecialReg::CtaidZ => ctx.ctaid[2],
                    SpecialReg::NctaidX => c.grid.x,
                    SpecialReg::NctaidY => c.grid.y,
                    SpecialReg::NctaidZ => c.grid.z,
                    SpecialReg::LaneId => lane as u32,
                };
                resize(v as u64, 32, width, false)
            }
            Operand::Immediate(imm) => {
                let bits = match (imm.kind, width) {
                    (ImmKind::F64, 32) => (f64::from_bits(imm.bits) as f32).to_bits() as u64,
                    (ImmKind::F32, 64) => (f32::from_bits(imm.bits as u32) as f64).to_bits(),
                    _ => imm.bits,
                };
                bits & mask(width)
            }
            Operand::Symbol(s) => match self.k.shared_decls.iter().position(|d| &d.name == s) {
                Some(i) => self.shared_offsets[i] & mask(width),
                None => return Err(self.unsupported(inst)),
            },
            _ => return Err(self.unsupported(inst)),
        })
    }

    fn address(&self, w: &Warp, lane: usize, inst: &Instruction, op: &Operand) -> Result<u64, SimError> {
        let Operand::Address(a) = op else {
            return Err(self.unsupported(inst));
        };
        let base = match &a.base {
            AddrBase::Register(r) => self.reg(w, lane, r, inst)?,
            AddrBase::Symbol(s) => match self.k.shared_decls.iter().position(|d| &d.name == s) {
                Some(i) => self.shared_offsets[i],
                None => return Err(self.unsupported(inst)),
            },
        };
        Ok(base.wrapping_add(a.offset as i64 as u64))
    }

    #[allow(clippy::too_many_arguments)]
    fn exec(
        &self,
        w: &mut Warp,
        inst: &Instruction,
        active: u32,
        guard: u32,
        ctx: &mut BlockCtx,
        mem: &mut MemoryImage,
        opts: &SimOptions,
        out: &mut SimOutcome,
    ) -> Result<Flow, SimError> {
        match inst.opcode.as_str() {
            "bar" | "barrier" => return Ok(Flow::Barrier),
            "membar" | "fence" => return Ok(Flow::Next),
            "activemask" => {
                let d = self.dst(inst)?;
                for l in lanes(guard) {
                    self.write(w, l, d, active as u64, 32, false);
                }
                return Ok(Flow::Next);
            }
            "shfl" => {
                self.shfl(w, inst, guard, ctx)?;
                return Ok(Flow::Next);
            }
            "ld" => {
                for l in lanes(guard) {
                    self.load(w, l, inst, ctx, mem, opts, out)?;
                }
                return Ok(Flow::Next);
            }
            "st" => {
                for l in lanes(guard) {
                    self.store(w, l, inst, ctx, mem, opts, out)?;
                }
                return Ok(Flow::Next);
            }
            _ => {}
        }
        for l in lanes(guard) {
            self.alu(w, l, inst, ctx)?;
        }
        Ok(Flow::Next)
    }

    fn dst<'i>(&self, inst: &'i Instruction) -> Result<&'i str, SimError> {
        match inst.operands.first() {
            Some(Operand::Register(r)) => Ok(r),
            _ => Err(self.unsupported(inst)),
        }
    }

    fn shfl(&self, w: &mut Warp, inst: &Instruction, guard: u32, ctx: &BlockCtx) -> Result<(), SimError> {
        let mode = inst
            .options()
            .into_iter()
            .find(|o| matches!(*o, "up" | "down" | "bfly" | "idx"))
            .ok_or_else(|| self.unsupported(inst))?;
        let dests: Vec<&str> = match inst.operands.first() {
            Some(Operand::Register(r)) => vec![r.as_str()],
            Some(Operand::Raw(t)) => raw_registers(t),
            _ => return Err(self.unsupported(inst)),
        };
        let [_, a, b, c, m] = &inst.operands[..] else {
            return Err(self.unsupported(inst));
        };
        let mut src = [0u64; WARP];
        let mut member = [0u32; WARP];
        let mut lane_b = [0u64; WARP];
        let mut lane_c = [0u64; WARP];
        for l in lanes(guard) {
            src[l] = self.val(w, l, ctx, inst, a, 32, false)?;
            lane_b[l] = self.val(w, l, ctx, inst, b, 32, false)?;
            lane_c[l] = self.val(w, l, ctx, inst, c, 32, false)?;
            member[l] = self.val(w, l, ctx, inst, m, 32, false)? as u32;
        }
        for l in lanes(guard) {
            let lane = l as i64;
            let bval = (lane_b[l] & 0x1f) as i64;
            let cval = (lane_c[l] & 0x1f) as i64;
            let segmask = ((lane_c[l] >> 8) & 0x1f) as i64;
            let max_lane = (lane & segmask) | (cval & !segmask);
            let min_lane = lane & segmask;
            let (j, ok) = match mode {
                "up" => (lane - bval, lane - bval >= max_lane),
                "down" => (lane + bval, lane + bval <= max_lane),
                "bfly" => (lane ^ bval, (lane ^ bval) <= max_lane),
                _ => {
                    let j = min_lane | (bval & !segmask);
                    (j, j <= max_lane)
                }
            };
            let partner_ok = ok
                && (0..WARP as i64).contains(&j)
                && guard & (1 << j) != 0
                && member[l] & (1 << j) != 0
                && member[l] & (1 << l) != 0;
            let (v, p) = if partner_ok {
                (src[j as usize], 1)
            } else {
                (src[l], 0)
            };
            self.write(w, l, dests[0], v, 32, false);
            if let Some(pd) = dests.get(1) {
                self.write(w, l, pd, p, 1, false);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn load(
        &self,
        w: &mut Warp,
        l: usize,
        inst: &Instruction,
        ctx: &mut BlockCtx,
        mem: &MemoryImage,
        opts: &SimOptions,
        out: &mut SimOutcome,
    ) -> Result<(), SimError> {
        let ty = inst.ty().ok_or_else(|| self.unsupported(inst))?;
        let n = ty.bytes() as usize;
        let space = inst.state_space().unwrap_or(StateSpace::Global);
        let dests: Vec<&str> = match inst.operands.first() {
            Some(Operand::Register(r)) => vec![r.as_str()],
            Some(Operand::Raw(t)) => raw_registers(t),
            _ => return Err(self.unsupported(inst)),
        };
        let addr_op = &inst.operands[1];
        if space == StateSpace::Param {
            let v = match addr_op {
                Operand::Address(a) => match &a.base {
                    AddrBase::Symbol(p) if a.offset == 0 => {
                        self.k.param_index(p).map(|i| self.params[i])
                    }
                    _ => None,
                },
                _ => None,
            }
            .ok_or_else(|| self.unsupported(inst))?;
            self.write(w, l, dests[0], v & mask(ty.bits()), ty.bits(), ty.is_signed());
            return Ok(());
        }
        let addr = self.address(w, l, inst, addr_op)?;
        for (k, d) in dests.iter().enumerate() {
            let a = addr.wrapping_add((k * n) as u64);
            let v = match space {
                StateSpace::Global => mem.read(a, n),
                StateSpace::Shared => shared_read(&ctx.shared, a, n),
                _ => return Err(self.unsupported(inst)),
            }
            .ok_or(SimError::OutOfBounds { addr: a, stmt: inst.id })?;
            self.write(w, l, d, v, ty.bits(), ty.is_signed());
            if opts.trace {
                out.traces
                    .entry((ctx.block_linear, w.thread[l]))
                    .or_default()
                    .push(SimEvent {
                        store: false,
                        stmt: inst.id,
                        addr: a,
                        width: n as u8,
                        value: v,
                    });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn store(
        &self,
        w: &mut Warp,
        l: usize,
        inst: &Instruction,
        ctx: &mut BlockCtx,
        mem: &mut MemoryImage,
        opts: &SimOptions,
        out: &mut SimOutcome,
    ) -> Result<(), SimError> {
        let ty = inst.ty().ok_or_else(|| self.unsupported(inst))?;
        let n = ty.bytes() as usize;
        let space = inst.state_space().unwrap_or(StateSpace::Global);
        let addr = self.address(w, l, inst, &inst.operands[0])?;
        let values: Vec<u64> = match &inst.operands[1] {
            Operand::Raw(t) => raw_registers(t)
                .into_iter()
                .map(|r| self.val(w, l, ctx, inst, &Operand::Register(r.to_string()), ty.bits(), false))
                .collect::<Result<_, _>>()?,
            op => vec![self.val(w, l, ctx, inst, op, ty.bits(), false)?],
        };
        for (k, v) in values.into_iter().enumerate() {
            let a = addr.wrapping_add((k * n) as u64);
            let ok = match space {
                StateSpace::Global => mem.write(a, n, v),
                StateSpace::Shared => shared_write(&mut ctx.shared, a, n, v),
                _ => return Err(self.unsupported(inst)),
            };
            ok.ok_or(SimError::OutOfBounds { addr: a, stmt: inst.id })?;
            if opts.trace {
                out.traces
                    .entry((ctx.block_linear, w.thread[l]))
                    .or_default()
                    .push(SimEvent {
                        store: true,
                        stmt: inst.id,
                        addr: a,
                        width: n as u8,
                        value: v,
                    });
            }
        }
        Ok(())
    }

    fn alu(&self, w: &mut Warp, l: usize, inst: &Instruction, ctx: &BlockCtx) -> Result<(), SimError> {
        let op = inst.opcode.as_str();
        let ty = inst.ty().ok_or_else(|| self.unsupported(inst))?;
        let bits = ty.bits();
        let signed = ty.is_signed();
        let opts = inst.options();
        let srcs = &inst.operands[1..];
        let get = |i: usize, width: u8, s: bool| -> Result<u64, SimError> {
            let op = srcs.get(i).ok_or_else(|| self.unsupported(inst))?;
            self.val(w, l, ctx, inst, op, width, s)
        };
        if op == "setp" {
            return self.setp(w, l, inst, ctx);
        }
        let d = self.dst(inst)?;
        if ty.is_float() && !matches!(op, "mov" | "selp" | "cvt") {
            let n = match op {
                "fma" | "mad" => 3,
                "neg" | "abs" | "sqrt" | "rcp" | "rsqrt" => 1,
                _ => 2,
            };
            let args = (0..n).map(|i| get(i, bits, false)).collect::<Result<Vec<_>, _>>()?;
            let r = float::arith(op, bits, &args).ok_or_else(|| self.unsupported(inst))?;
            self.write(w, l, d, r, bits, false);
            return Ok(());
        }
        let (r, rw) = match op {
            "mov" | "cvta" => (get(0, bits, signed)?, bits),
            "add" => (get(0, bits, signed)?.wrapping_add(get(1, bits, signed)?), bits),
            "sub" => (get(0, bits, signed)?.wrapping_sub(get(1, bits, signed)?), bits),
            "mul" | "mad" => {
                let a = get(0, bits, signed)?;
                let b = get(1, bits, signed)?;
                let wide = opts.contains(&"wide");
                let full: u128 = if signed {
                    (sext(a, bits) as i64 as i128).wrapping_mul(sext(b, bits) as i64 as i128) as u128
                } else {
                    (a as u128) * (b as u128)
                };
                let (p, pw) = if wide {
                    (full as u64 & mask(2 * bits), 2 * bits)
                } else if opts.contains(&"hi") {
                    ((full >> bits) as u64 & mask(bits), bits)
                } else {
                    (full as u64 & mask(bits), bits)
                };
                if op == "mad" {
                    (p.wrapping_add(get(2, pw, signed)?), pw)
                } else {
                    (p, pw)
                }
            }
            "div" | "rem" => {
                let a = get(0, bits, signed)?;
                let b = get(1, bits, signed)?;
                let r = if b == 0 {
                    if op == "div" {
                        mask(bits)
                    } else {
                        a
                    }
                } else if signed {
                    let (x, y) = (sext(a, bits) as i64, sext(b, bits) as i64);
                    (if op == "div" { x.wrapping_div(y) } else { x.wrapping_rem(y) }) as u64
                } else if op == "div" {
                    a / b
                } else {
                    a % b
                };
                (r, bits)
            }
            "and" => (get(0, bits, false)? & get(1, bits, false)?, bits),
            "or" => (get(0, bits, false)? | get(1, bits, false)?, bits),
            "xor" => (get(0, bits, false)? ^ get(1, bits, false)?, bits),
            "not" => (!get(0, bits, false)?, bits),
            "cnot" => ((get(0, bits, false)? == 0) as u64, bits),
            "neg" => (get(0, bits, false)?.wrapping_neg(), bits),
            "abs" => ((sext(get(0, bits, true)?, bits) as i64).wrapping_abs() as u64, bits),
            "popc" => (get(0, bits, false)?.count_ones() as u64, 32),
            "clz" => (
                (get(0, bits, false)?.leading_zeros() - (64 - bits as u32)) as u64,
                32,
            ),
            "brev" => (get(0, bits, false)?.reverse_bits() >> (64 - bits as u32), bits),
            "shl" | "shr" => {
                let a = get(0, bits, signed)?;
                let s = get(1, 32, false)?;
                let r = if op == "shl" {
                    if s >= bits as u64 {
                        0
                    } else {
                        a << s
                    }
                } else if signed {
                    (sext(a, bits) as i64 >> s.min(63)) as u64
                } else if s >= bits as u64 {
                    0
                } else {
                    (a & mask(bits)) >> s
                };
                (r, bits)
            }
            "min" | "max" => {
                let a = get(0, bits, signed)?;
                let b = get(1, bits, signed)?;
                let lt = if signed {
                    (sext(a, bits) as i64) < (sext(b, bits) as i64)
                } else {
                    (a & mask(bits)) < (b & mask(bits))
                };
                let r = if (op == "min") == lt { a } else { b };
                (r, bits)
            }
            "selp" => {
                let c = get(2, 1, false)?;
                (if c & 1 == 1 { get(0, bits, false)? } else { get(1, bits, false)? }, bits)
            }
            "cvt" => return self.cvt(w, l, inst, ctx),
            _ => return Err(self.unsupported(inst)),
        };
        self.write(w, l, d, r & mask(rw), rw, signed);
        Ok(())
    }

    fn cvt(&self, w: &mut Warp, l: usize, inst: &Instruction, ctx: &BlockCtx) -> Result<(), SimError> {
        let types = inst.types();
        let [dt, st] = types[..] else {
            return Err(self.unsupported(inst));
        };
        let d = self.dst(inst)?;
        let a = self.val(w, l, ctx, inst, &inst.operands[1], st.bits(), st.is_signed())?;
        let rnd = inst
            .options()
            .into_iter()
            .find(|o| matches!(*o, "rni" | "rzi" | "rmi" | "rpi" | "rn" | "rz" | "rm" | "rp"))
            .unwrap_or("rzi");
        let r = match (dt.is_float(), st.is_float()) {
            (true, true) => float::float_to_float(a, st.bits(), dt.bits()),
            (true, false) => float::int_to_float(
                resize(a, st.bits(), 64, st.is_signed()),
                st.is_signed(),
                dt.bits(),
            ),
            (false, true) => float::float_to_int(a, st.bits(), rnd, dt.is_signed(), dt.bits()),
            (false, false) => {
                if inst.has("sat") {
                    return Err(self.unsupported(inst));
                }
                resize(a, st.bits(), dt.bits(), st.is_signed())
            }
        };
        self.write(w, l, d, r, dt.bits(), dt.is_signed());
        Ok(())
    }

    fn setp(&self, w: &mut Warp, l: usize, inst: &Instruction, ctx: &BlockCtx) -> Result<(), SimError> {
        let ty = inst.ty().ok_or_else(|| self.unsupported(inst))?;
        let opts = inst.options();
        let cmp = *opts.first().ok_or_else(|| self.unsupported(inst))?;
        let bits = ty.bits();
        let a = self.val(w, l, ctx, inst, &inst.operands[1], bits, ty.is_signed())?;
        let b = self.val(w, l, ctx, inst, &inst.operands[2], bits, ty.is_signed())?;
        let r = if ty.is_float() {
            float::compare(cmp, bits, a, b).ok_or_else(|| self.unsupported(inst))?
        } else {
            let (sa, sb) = (sext(a, bits) as i64, sext(b, bits) as i64);
            let (ua, ub) = (a & mask(bits), b & mask(bits));
            let s = ty.is_signed();
            match cmp {
                "eq" => ua == ub,
                "ne" => ua != ub,
                "lt" if s => sa < sb,
                "le" if s => sa <= sb,
                "gt" if s => sa > sb,
                "ge" if s => sa >= sb,
                "lt" | "lo" => ua < ub,
                "le" | "ls" => ua <= ub,
                "gt" | "hi" => ua > ub,
                "ge" | "hs" => ua >= ub,
                _ => return Err(self.unsupported(inst)),
            }
        };
        let (p, q) = match opts.get(1) {
            None => (r, !r),
            Some(bop) => {
                let c = self.val(w, l, ctx, inst, &inst.operands[3], 1, false)? & 1 == 1;
                let f = |x: bool| match *bop {
                    "and" => Ok(x && c),
                    "or" => Ok(x || c),
                    "xor" => Ok(x != c),
                    _ => Err(self.unsupported(inst)),
                };
                (f(r)?, f(!r)?)
            }
        };
        let dests: Vec<&str> = match inst.operands.first() {
            Some(Operand::Register(r)) => vec![r.as_str()],
            Some(Operand::Raw(t)) => raw_registers(t),
            _ => return Err(self.unsupported(inst)),
        };
        self.write(w, l, dests[0], p as u64, 1, false);
        if let Some(qd) = dests.get(1) {
            self.write(w, l, qd, q as u64, 1, false);
        }
        Ok(())
    }
}

fn lanes(m: u32) -> impl Iterator<Item = usize> {
    (0..WARP).filter(move |l| m & (1 << l) != 0)
}

fn shared_read(s: &[u8], addr: u64, n: usize) -> Option<u64> {
    let a = usize::try_from(addr).ok()?;
    let b = s.get(a..a.checked_add(n)?)?;
    Some(super::le_read(b))
}

fn shared_write(s: &mut [u8], addr: u64, n: usize, v: u64) -> Option<()> {
    let a = usize::try_from(addr).ok()?;
    let b = s.get_mut(a..a.checked_add(n)?)?;
    super::le_write(b, v);
    Some(())
}
