//! Per-instruction semantics.

use crate::ptx::{AddrBase, Guard, ImmKind, Instruction, Operand, ScalarType, StateSpace};
use crate::symexpr::{BinOp, ExprId, Rel, SymOrigin, UnOp};

use super::{EmuError, Emulator, EventKind, FlowState, MemoryEvent};

/// Integer opcodes without a symbolic model; their results are fresh values but
/// they touch no memory.
const PURE_OPAQUE: &[&str] = &[
    "div", "rem", "popc", "clz", "brev", "bfe", "bfi", "bfind", "prmt", "mul24", "mad24", "sad",
    "fns", "dp4a", "dp2a", "testp", "copysign", "lop3", "shf", "szext", "bmsk", "cnot",
];

/// Floating-point opcodes modelled as uninterpreted operations.
const FLOAT_OPS: &[&str] = &[
    "add", "sub", "mul", "div", "fma", "mad", "min", "max", "neg", "abs", "sqrt", "rsqrt", "rcp",
    "sin", "cos", "lg2", "ex2", "tanh", "copysign",
];

impl Emulator<'_> {
    pub(super) fn guard_value(
        &mut self,
        f: &FlowState,
        inst: &Instruction,
        g: &Guard,
    ) -> Result<ExprId, EmuError> {
        let r = self.reg_value(f, inst, &g.pred)?;
        let r = self.coerce(r, 1, false);
        Ok(if g.negated { self.pool.not(r) } else { r })
    }

    fn reg_value(&self, f: &FlowState, inst: &Instruction, name: &str) -> Result<ExprId, EmuError> {
        self.regs
            .get(name)
            .and_then(|i| f.env[i])
            .ok_or_else(|| EmuError::UninitializedRegister {
                stmt: inst.id,
                line: inst.line,
                register: name.to_string(),
            })
    }

    /// Value of a source operand at width `w`. `None` for operands outside the model.
    fn read(
        &mut self,
        f: &FlowState,
        inst: &Instruction,
        op: &Operand,
        w: u8,
        signed: bool,
    ) -> Result<Option<ExprId>, EmuError> {
        Ok(match op {
            Operand::Register(r) => {
                let v = self.reg_value(f, inst, r)?;
                Some(self.coerce(v, w, signed))
            }
            Operand::Special(s) => {
                let v = self.special(*s);
                Some(self.coerce(v, w, false))
            }
            Operand::Immediate(imm) => {
                let bits = match (imm.kind, w) {
                    (ImmKind::F64, 32) => (f64::from_bits(imm.bits) as f32).to_bits() as u64,
                    (ImmKind::F32, 64) => (f32::from_bits(imm.bits as u32) as f64).to_bits(),
                    _ => imm.bits,
                };
                Some(self.pool.constant(w, bits))
            }
            Operand::Symbol(name) => self.symbol_address(name).map(|a| self.coerce(a, w, false)),
            Operand::Address(_) | Operand::Raw(_) => None,
        })
    }

    fn symbol_address(&mut self, name: &str) -> Option<ExprId> {
        let k = self.kernel.shared_decls.iter().position(|d| d.name == name)?;
        Some(self.pool.sym(64, SymOrigin::Shared(k as u32)))
    }

    fn address(&mut self, f: &FlowState, inst: &Instruction, op: &Operand) -> Result<Option<ExprId>, EmuError> {
        let Operand::Address(a) = op else {
            return Ok(None);
        };
        let base = match &a.base {
            AddrBase::Register(r) => self.reg_value(f, inst, r)?,
            AddrBase::Symbol(s) => match self.symbol_address(s) {
                Some(b) => b,
                None => return Ok(None),
            },
        };
        Ok(Some(self.pool.add_const(base, a.offset as i64)))
    }

    /// Write `v` to register `name`, merging with the old value under `guard`.
    fn write(
        &mut self,
        f: &mut FlowState,
        name: &str,
        v: ExprId,
        signed: bool,
        guard: Option<ExprId>,
    ) {
        let Some(r) = self.regs.get(name) else {
            return;
        };
        let v = self.coerce(v, self.regs.widths[r], signed);
        let v = match guard {
            None => v,
            Some(g) => {
                let old = match f.env[r] {
                    Some(o) => o,
                    None => self.havoc(self.regs.widths[r], true),
                };
                self.pool.ite(g, v, old)
            }
        };
        f.env[r] = Some(v);
    }

    fn havoc_defs(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>, variant: bool) {
        for d in inst.defs() {
            if let Some(r) = self.regs.get(d) {
                let h = self.havoc(self.regs.widths[r], variant);
                self.write(f, d, h, false, guard);
            }
        }
    }

    /// Havoc destinations; lane-variant unless every source is warp-uniform.
    fn havoc_pure(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>) -> Result<(), EmuError> {
        let mut variant = false;
        for u in inst.uses() {
            match self.regs.get(u).and_then(|i| f.env[i]) {
                Some(v) => variant |= !self.uniform(v),
                None => return Err(self.uninit(inst, u)),
            }
        }
        variant |= inst.operands.iter().any(|o| matches!(o, Operand::Special(_)));
        self.havoc_defs(f, inst, guard, variant);
        Ok(())
    }

    fn uninit(&self, inst: &Instruction, r: &str) -> EmuError {
        EmuError::UninitializedRegister {
            stmt: inst.id,
            line: inst.line,
            register: r.to_string(),
        }
    }

    fn invalidate_all(f: &mut FlowState, space: Option<StateSpace>) {
        let at = f.trace.len() as u32;
        for e in f.trace.iter_mut() {
            if e.is_load() && e.invalidated_at.is_none() && space.is_none_or(|s| s == e.space) {
                e.invalidated_at = Some(at);
            }
        }
    }

    pub(super) fn exec(&mut self, f: &mut FlowState, inst: &Instruction) -> Result<(), EmuError> {
        let guard = match &inst.guard {
            None => None,
            Some(g) => {
                let v = self.guard_value(f, inst, g)?;
                match self.pool.as_const(v) {
                    Some(0) => return Ok(()),
                    Some(_) => None,
                    None => Some(v),
                }
            }
        };
        let op = inst.opcode.as_str();
        let ty = inst.ty();
        let w = ty.map_or(32, |t| t.bits());
        let signed = ty.is_some_and(|t| t.is_signed());
        let float = ty.is_some_and(|t| t.is_float());
        let dst = match inst.operands.first() {
            Some(Operand::Register(r)) => Some(r.clone()),
            _ => None,
        };
        let opts = inst.options();

        match op {
            "ld" => return self.exec_load(f, inst, guard),
            "st" => return self.exec_store(f, inst, guard),
            "bar" | "barrier" => {
                Self::invalidate_all(f, None);
                return Ok(());
            }
            "membar" | "fence" | "nanosleep" | "prefetch" | "prefetchu" => return Ok(()),
            "activemask" | "shfl" | "vote" | "match" => {
                self.havoc_defs(f, inst, guard, true);
                return Ok(());
            }
            _ => {}
        }

        let Some(dst) = dst else {
            if op == "setp" && matches!(inst.operands.first(), Some(Operand::Raw(_))) {
                return self.exec_setp(f, inst, guard);
            }
            if op == "mov" || PURE_OPAQUE.contains(&op) || op == "cvt" || op == "selp" {
                return self.havoc_pure(f, inst, guard);
            }
            return self.opaque(f, inst, guard);
        };
        let srcs = &inst.operands[1..];

        if float && op != "mov" && op != "selp" && op != "setp" && FLOAT_OPS.contains(&op) {
            let mut args = Vec::new();
            for s in srcs {
                match self.read(f, inst, s, w, false)? {
                    Some(v) => args.push(v),
                    None => return self.havoc_pure(f, inst, guard),
                }
            }
            let v = self.pool.float_op(&inst.full_opcode(), w, &args);
            self.write(f, &dst, v, false, guard);
            return Ok(());
        }

        let value = match op {
            "mov" | "cvta" => self.read(f, inst, &srcs[0], w, signed)?,
            "add" | "sub" if opts.is_empty() => {
                self.binop(f, inst, if op == "add" { BinOp::Add } else { BinOp::Sub }, w, signed)?
            }
            "and" | "or" | "xor" => {
                let b = match op {
                    "and" => BinOp::And,
                    "or" => BinOp::Or,
                    _ => BinOp::Xor,
                };
                self.binop(f, inst, b, w, signed)?
            }
            "shl" | "shr" => {
                let a = self.read(f, inst, &srcs[0], w, signed)?;
                let b = self.read(f, inst, &srcs[1], 32, false)?;
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let b = self.coerce(b, w, false);
                        let bop = match (op, signed) {
                            ("shl", _) => BinOp::Shl,
                            (_, true) => BinOp::Ashr,
                            _ => BinOp::Lshr,
                        };
                        Some(self.pool.binary(bop, a, b))
                    }
                    _ => None,
                }
            }
            "mul" if opts.contains(&"lo") => self.binop(f, inst, BinOp::Mul, w, signed)?,
            "mul" if opts.contains(&"wide") => self.binop(
                f,
                inst,
                if signed { BinOp::MulWideS } else { BinOp::MulWideU },
                w,
                signed,
            )?,
            "mad" if opts.contains(&"lo") || opts.contains(&"wide") => {
                let wide = opts.contains(&"wide");
                let bop = match (wide, signed) {
                    (false, _) => BinOp::Mul,
                    (true, true) => BinOp::MulWideS,
                    (true, false) => BinOp::MulWideU,
                };
                let p = self.binop(f, inst, bop, w, signed)?;
                let c = self.read(f, inst, &srcs[2], if wide { 2 * w } else { w }, signed)?;
                match (p, c) {
                    (Some(p), Some(c)) => Some(self.pool.add(p, c)),
                    _ => None,
                }
            }
            "neg" | "not" => self
                .read(f, inst, &srcs[0], w, signed)?
                .map(|a| self.pool.unary(if op == "neg" { UnOp::Neg } else { UnOp::Not }, a)),
            "min" | "max" => {
                let a = self.read(f, inst, &srcs[0], w, signed)?;
                let b = self.read(f, inst, &srcs[1], w, signed)?;
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let rel = if signed { Rel::Lts } else { Rel::Ltu };
                        let lt = self.pool.compare(rel, a, b);
                        Some(if op == "min" {
                            self.pool.ite(lt, a, b)
                        } else {
                            self.pool.ite(lt, b, a)
                        })
                    }
                    _ => None,
                }
            }
            "abs" => self.read(f, inst, &srcs[0], w, true)?.map(|a| {
                let zero = self.pool.constant(w, 0);
                let neg = self.pool.compare(Rel::Lts, a, zero);
                let na = self.pool.unary(UnOp::Neg, a);
                self.pool.ite(neg, na, a)
            }),
            "selp" => {
                let a = self.read(f, inst, &srcs[0], w, signed)?;
                let b = self.read(f, inst, &srcs[1], w, signed)?;
                let c = self.read(f, inst, &srcs[2], 1, false)?;
                match (a, b, c) {
                    (Some(a), Some(b), Some(c)) => Some(self.pool.ite(c, a, b)),
                    _ => None,
                }
            }
            "setp" => return self.exec_setp(f, inst, guard),
            "cvt" => self.exec_cvt(f, inst)?,
            _ if PURE_OPAQUE.contains(&op) || op == "mul" || op == "mad" || op == "add" || op == "sub" => None,
            _ => return self.opaque(f, inst, guard),
        };
        match value {
            Some(v) => self.write(f, &dst, v, signed, guard),
            None => self.havoc_pure(f, inst, guard)?,
        }
        Ok(())
    }

    fn binop(
        &mut self,
        f: &FlowState,
        inst: &Instruction,
        op: BinOp,
        w: u8,
        signed: bool,
    ) -> Result<Option<ExprId>, EmuError> {
        let a = self.read(f, inst, &inst.operands[1], w, signed)?;
        let b = self.read(f, inst, &inst.operands[2], w, signed)?;
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.pool.binary(op, a, b)),
            _ => None,
        })
    }

    fn exec_cvt(&mut self, f: &FlowState, inst: &Instruction) -> Result<Option<ExprId>, EmuError> {
        let types = inst.types();
        let [dt, st] = types[..] else {
            return Ok(None);
        };
        let Some(a) = self.read(f, inst, &inst.operands[1], st.bits(), st.is_signed())? else {
            return Ok(None);
        };
        if dt.is_float() || st.is_float() {
            return Ok(Some(self.pool.float_op(&inst.full_opcode(), dt.bits(), &[a])));
        }
        if inst.has("sat") {
            return Ok(None);
        }
        Ok(Some(self.coerce(a, dt.bits(), st.is_signed())))
    }

    fn exec_setp(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>) -> Result<(), EmuError> {
        let ty = inst.ty().unwrap_or(ScalarType::B32);
        let opts = inst.options();
        let (Some(cmp), boolop) = (opts.first().copied(), opts.get(1).copied()) else {
            return self.havoc_pure(f, inst, guard);
        };
        let w = ty.bits();
        let a = self.read(f, inst, &inst.operands[1], w, ty.is_signed())?;
        let b = self.read(f, inst, &inst.operands[2], w, ty.is_signed())?;
        let (Some(a), Some(b)) = (a, b) else {
            return self.havoc_pure(f, inst, guard);
        };
        let r = if ty.is_float() {
            let tag = format!("setp.{cmp}.{}", ty.name());
            self.pool.float_op(&tag, 1, &[a, b])
        } else {
            let s = ty.is_signed();
            let rel = match (cmp, s) {
                ("eq", _) => Rel::Eq,
                ("ne", _) => Rel::Ne,
                ("lt", true) => Rel::Lts,
                ("le", true) => Rel::Les,
                ("gt", true) => Rel::Gts,
                ("ge", true) => Rel::Ges,
                ("lt" | "lo", _) => Rel::Ltu,
                ("le" | "ls", _) => Rel::Leu,
                ("gt" | "hi", _) => Rel::Gtu,
                ("ge" | "hs", _) => Rel::Geu,
                _ => return self.havoc_pure(f, inst, guard),
            };
            self.pool.compare(rel, a, b)
        };
        let nr = self.pool.not(r);
        let (p, q) = match boolop {
            None => (r, nr),
            Some(bop) => {
                let Some(c) = self.read(f, inst, &inst.operands[3], 1, false)? else {
                    return self.havoc_pure(f, inst, guard);
                };
                let bin = match bop {
                    "and" => BinOp::And,
                    "or" => BinOp::Or,
                    "xor" => BinOp::Xor,
                    _ => return self.havoc_pure(f, inst, guard),
                };
                (self.pool.binary(bin, r, c), self.pool.binary(bin, nr, c))
            }
        };
        let defs: Vec<String> = inst.defs().into_iter().map(str::to_string).collect();
        if let Some(d) = defs.first() {
            self.write(f, d, p, false, guard);
        }
        if let Some(d) = defs.get(1) {
            self.write(f, d, q, false, guard);
        }
        Ok(())
    }

    fn exec_load(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>) -> Result<(), EmuError> {
        let ty = inst.ty().unwrap_or(ScalarType::B32);
        let space = inst.state_space().unwrap_or(StateSpace::Global);
        let vector = inst.has("v2") || inst.has("v4");
        let dst = match inst.operands.first() {
            Some(Operand::Register(r)) if !vector => r.clone(),
            _ => {
                self.havoc_defs(f, inst, guard, true);
                return Ok(());
            }
        };
        let addr_op = &inst.operands[1];
        match space {
            StateSpace::Param => {
                let v = match addr_op {
                    Operand::Address(a) => match &a.base {
                        AddrBase::Symbol(p) if a.offset == 0 => self
                            .kernel
                            .param_index(p)
                            .map(|i| self.pool.sym(ty.bits(), SymOrigin::Param(i as u32))),
                        _ => None,
                    },
                    _ => None,
                };
                let v = v.unwrap_or_else(|| self.havoc(ty.bits(), false));
                self.write(f, &dst, v, ty.is_signed(), guard);
            }
            StateSpace::Local => {
                let h = self.havoc(ty.bits(), true);
                self.write(f, &dst, h, false, guard);
            }
            StateSpace::Global | StateSpace::Shared => {
                let Some(addr) = self.address(f, inst, addr_op)? else {
                    self.havoc_defs(f, inst, guard, true);
                    return Ok(());
                };
                let trace = self.next_trace;
                self.next_trace += 1;
                let v = self.pool.load(space, addr, ty.bits(), trace);
                f.trace.push(MemoryEvent {
                    kind: EventKind::Load,
                    space,
                    addr,
                    width: ty.bytes(),
                    stmt: inst.id,
                    index: f.pc,
                    seq: f.trace.len() as u32,
                    invalidated_at: None,
                    trace: Some(trace),
                    value: v,
                    guard,
                });
                self.write(f, &dst, v, ty.is_signed(), guard);
            }
        }
        Ok(())
    }

    fn exec_store(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>) -> Result<(), EmuError> {
        let ty = inst.ty().unwrap_or(ScalarType::B32);
        let space = inst.state_space().unwrap_or(StateSpace::Global);
        if matches!(space, StateSpace::Param | StateSpace::Local) {
            return Ok(());
        }
        let addr = self.address(f, inst, &inst.operands[0])?;
        let vector = inst.has("v2") || inst.has("v4");
        let value = if vector {
            None
        } else {
            self.read(f, inst, &inst.operands[1], ty.bits(), false)?
        };
        let (Some(addr), Some(value)) = (addr, value) else {
            for u in inst.uses() {
                if self.regs.get(u).and_then(|i| f.env[i]).is_none() {
                    return Err(self.uninit(inst, u));
                }
            }
            Self::invalidate_all(f, Some(space));
            return Ok(());
        };
        let seq = f.trace.len() as u32;
        let width = ty.bytes();
        let mut dropped = Vec::new();
        for i in 0..f.trace.len() {
            let e = &f.trace[i];
            if !e.is_load() || e.invalidated_at.is_some() || e.space != space {
                continue;
            }
            let (ea, ew) = (e.addr, e.width);
            let disjoint = self.pool.width(ea) == self.pool.width(addr)
                && self
                    .solver
                    .proves_disjoint(&mut self.pool, ea, ew, addr, width, &f.assumptions);
            if !disjoint {
                f.trace[i].invalidated_at = Some(seq);
                dropped.extend(f.trace[i].trace);
            }
        }
        if !dropped.is_empty() {
            let pool = &self.pool;
            f.assumptions
                .retain(|&a| pool.load_traces(a).iter().all(|t| !dropped.contains(t)));
        }
        f.trace.push(MemoryEvent {
            kind: EventKind::Store,
            space,
            addr,
            width,
            stmt: inst.id,
            index: f.pc,
            seq,
            invalidated_at: None,
            trace: None,
            value,
            guard,
        });
        Ok(())
    }

    /// Instruction outside the model: fresh destinations, all loads invalidated.
    fn opaque(&mut self, f: &mut FlowState, inst: &Instruction, guard: Option<ExprId>) -> Result<(), EmuError> {
        log::trace!("opaque instruction {}", inst.full_opcode());
        self.havoc_defs(f, inst, guard, true);
        Self::invalidate_all(f, None);
        Ok(())
    }
}
