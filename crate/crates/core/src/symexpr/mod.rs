//! Hash-consed symbolic bitvector expressions.
//!
//! Every expression lives in an [`ExprPool`] and is referred to by an [`ExprId`].
//! Structurally equal nodes share one id, so `==` on ids is structural equality.
//! The typed constructors (`add`, `compare`, ...) simplify as they build; [`ExprPool::mk`]
//! interns a node verbatim.

mod build;
mod display;
mod eval;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::ptx::{SpecialReg, StateSpace};

pub use eval::Valuation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(pub u32);

/// Where a free symbol comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymOrigin {
    /// Value of kernel parameter `k`, printed `load(paramK)`.
    Param(u32),
    Special(SpecialReg),
    /// Result of an instruction outside the modelled subset.
    Havoc(u32),
    /// Free variable introduced by analyses (delta search, tests).
    Var(u32),
    /// Base address of the `k`-th `.shared` variable.
    Shared(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Operands of width w, result of width 2w.
    MulWideS,
    MulWideU,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
}

impl BinOp {
    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Mul | BinOp::MulWideS | BinOp::MulWideU | BinOp::And | BinOp::Or | BinOp::Xor
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Eq,
    Ne,
    Ltu,
    Leu,
    Gtu,
    Geu,
    Lts,
    Les,
    Gts,
    Ges,
}

impl Rel {
    pub fn negate(self) -> Rel {
        match self {
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Ltu => Rel::Geu,
            Rel::Leu => Rel::Gtu,
            Rel::Gtu => Rel::Leu,
            Rel::Geu => Rel::Ltu,
            Rel::Lts => Rel::Ges,
            Rel::Les => Rel::Gts,
            Rel::Gts => Rel::Les,
            Rel::Ges => Rel::Lts,
        }
    }

    /// Relation with operands exchanged: `a R b` iff `b R.swap() a`.
    pub fn swap(self) -> Rel {
        match self {
            Rel::Eq => Rel::Eq,
            Rel::Ne => Rel::Ne,
            Rel::Ltu => Rel::Gtu,
            Rel::Leu => Rel::Geu,
            Rel::Gtu => Rel::Ltu,
            Rel::Geu => Rel::Leu,
            Rel::Lts => Rel::Gts,
            Rel::Les => Rel::Ges,
            Rel::Gts => Rel::Lts,
            Rel::Ges => Rel::Les,
        }
    }

    pub fn is_signed(self) -> bool {
        matches!(self, Rel::Lts | Rel::Les | Rel::Gts | Rel::Ges)
    }

    pub fn holds(self, a: u64, b: u64, width: u8) -> bool {
        let (sa, sb) = (sext(a, width) as i64, sext(b, width) as i64);
        match self {
            Rel::Eq => a == b,
            Rel::Ne => a != b,
            Rel::Ltu => a < b,
            Rel::Leu => a <= b,
            Rel::Gtu => a > b,
            Rel::Geu => a >= b,
            Rel::Lts => sa < sb,
            Rel::Les => sa <= sb,
            Rel::Gts => sa > sb,
            Rel::Ges => sa >= sb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const { width: u8, bits: u64 },
    Sym { width: u8, origin: SymOrigin },
    /// Value read by memory event `trace` of the current thread.
    Load { space: StateSpace, addr: ExprId, width: u8, trace: u32 },
    /// Value of a loop-carried quantity at an unknown iteration.
    Loop { loop_id: u32, seq: u32, width: u8 },
    /// Bit pattern produced by an uninterpreted floating-point operation on bit operands.
    FloatOp { tag: Box<str>, width: u8, args: Box<[ExprId]> },
    Unary { op: UnOp, arg: ExprId },
    Binary { op: BinOp, lhs: ExprId, rhs: ExprId },
    Compare { rel: Rel, lhs: ExprId, rhs: ExprId },
    Extend { signed: bool, to: u8, arg: ExprId },
    Truncate { to: u8, arg: ExprId },
    Ite { cond: ExprId, then: ExprId, els: ExprId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymError {
    #[error("valuation has no value for {0}")]
    MissingSymbol(String),
    #[error("width mismatch: expected {expected} bits, found {found}")]
    WidthMismatch { expected: u8, found: u8 },
}

pub fn mask(width: u8) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Sign-extend the low `width` bits of `v` to 64 bits.
pub fn sext(v: u64, width: u8) -> u64 {
    if width >= 64 || width == 0 {
        return v;
    }
    let sh = 64 - width as u32;
    (((v << sh) as i64) >> sh) as u64
}

/// Arena of interned expressions. One pool per kernel analysis.
#[derive(Debug, Default, Clone)]
pub struct ExprPool {
    nodes: Vec<Node>,
    widths: Vec<u8>,
    index: HashMap<Node, ExprId>,
}

impl ExprPool {
    pub fn new() -> ExprPool {
        ExprPool::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, e: ExprId) -> &Node {
        &self.nodes[e.0 as usize]
    }

    pub fn width(&self, e: ExprId) -> u8 {
        self.widths[e.0 as usize]
    }

    fn node_width(&self, n: &Node) -> u8 {
        match n {
            Node::Const { width, .. }
            | Node::Sym { width, .. }
            | Node::Load { width, .. }
            | Node::Loop { width, .. }
            | Node::FloatOp { width, .. } => *width,
            Node::Unary { arg, .. } => self.width(*arg),
            Node::Binary { op, lhs, rhs } => {
                let (wl, wr) = (self.width(*lhs), self.width(*rhs));
                match op {
                    BinOp::MulWideS | BinOp::MulWideU => {
                        assert_eq!(wl, wr, "mul.wide operand widths");
                        wl * 2
                    }
                    BinOp::Shl | BinOp::Lshr | BinOp::Ashr => wl,
                    _ => {
                        assert_eq!(wl, wr, "{op:?} operand widths");
                        wl
                    }
                }
            }
            Node::Compare { lhs, rhs, .. } => {
                assert_eq!(self.width(*lhs), self.width(*rhs), "compare operand widths");
                1
            }
            Node::Extend { to, arg, .. } => {
                assert!(*to >= self.width(*arg), "extend narrows");
                *to
            }
            Node::Truncate { to, arg } => {
                assert!(*to <= self.width(*arg), "truncate widens");
                *to
            }
            Node::Ite { cond, then, els } => {
                assert_eq!(self.width(*cond), 1, "ite condition width");
                assert_eq!(self.width(*then), self.width(*els), "ite arm widths");
                self.width(*then)
            }
        }
    }

    /// Intern `n` without simplification.
    pub fn mk(&mut self, n: Node) -> ExprId {
        if let Some(&id) = self.index.get(&n) {
            return id;
        }
        let w = self.node_width(&n);
        debug_assert!(matches!(w, 1 | 8 | 16 | 32 | 64 | 128) || w <= 64);
        let id = ExprId(self.nodes.len() as u32);
        self.nodes.push(n.clone());
        self.widths.push(w);
        self.index.insert(n, id);
        id
    }

    pub fn constant(&mut self, width: u8, bits: u64) -> ExprId {
        self.mk(Node::Const {
            width,
            bits: bits & mask(width),
        })
    }

    pub fn sym(&mut self, width: u8, origin: SymOrigin) -> ExprId {
        self.mk(Node::Sym { width, origin })
    }

    pub fn load(&mut self, space: StateSpace, addr: ExprId, width: u8, trace: u32) -> ExprId {
        self.mk(Node::Load {
            space,
            addr,
            width,
            trace,
        })
    }

    pub fn loop_var(&mut self, loop_id: u32, seq: u32, width: u8) -> ExprId {
        self.mk(Node::Loop {
            loop_id,
            seq,
            width,
        })
    }

    pub fn float_op(&mut self, tag: &str, width: u8, args: &[ExprId]) -> ExprId {
        self.mk(Node::FloatOp {
            tag: tag.into(),
            width,
            args: args.into(),
        })
    }

    pub fn as_const(&self, e: ExprId) -> Option<u64> {
        match self.node(e) {
            Node::Const { bits, .. } => Some(*bits),
            _ => None,
        }
    }

    pub fn as_sym(&self, e: ExprId) -> Option<SymOrigin> {
        match self.node(e) {
            Node::Sym { origin, .. } => Some(*origin),
            _ => None,
        }
    }

    /// Direct children in evaluation order.
    pub fn children(&self, e: ExprId) -> Vec<ExprId> {
        match self.node(e) {
            Node::Const { .. } | Node::Sym { .. } | Node::Loop { .. } => Vec::new(),
            Node::Load { addr, .. } => vec![*addr],
            Node::FloatOp { args, .. } => args.to_vec(),
            Node::Unary { arg, .. } | Node::Extend { arg, .. } | Node::Truncate { arg, .. } => {
                vec![*arg]
            }
            Node::Binary { lhs, rhs, .. } | Node::Compare { lhs, rhs, .. } => vec![*lhs, *rhs],
            Node::Ite { cond, then, els } => vec![*cond, *then, *els],
        }
    }

    /// Every node reachable from `e`, each once, children before parents.
    pub fn postorder(&self, e: ExprId) -> Vec<ExprId> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        let mut stack = vec![(e, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
                continue;
            }
            if !seen.insert(id) {
                continue;
            }
            stack.push((id, true));
            for c in self.children(id).into_iter().rev() {
                if !seen.contains(&c) {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Free symbols of `e`.
    pub fn syms(&self, e: ExprId) -> BTreeSet<SymOrigin> {
        self.postorder(e)
            .into_iter()
            .filter_map(|n| self.as_sym(n))
            .collect()
    }

    /// Uninterpreted leaves of `e`: symbols, loads, loop values and float results.
    pub fn leaves(&self, e: ExprId) -> Vec<ExprId> {
        self.postorder(e)
            .into_iter()
            .filter(|&n| {
                matches!(
                    self.node(n),
                    Node::Sym { .. } | Node::Load { .. } | Node::Loop { .. } | Node::FloatOp { .. }
                )
            })
            .collect()
    }

    /// Trace ids of every load value `e` depends on.
    pub fn load_traces(&self, e: ExprId) -> BTreeSet<u32> {
        self.postorder(e)
            .into_iter()
            .filter_map(|n| match self.node(n) {
                Node::Load { trace, .. } => Some(*trace),
                _ => None,
            })
            .collect()
    }

    pub fn mentions(&self, e: ExprId, origin: SymOrigin) -> bool {
        self.postorder(e)
            .into_iter()
            .any(|n| self.as_sym(n) == Some(origin))
    }

    /// Rebuild `e` bottom-up through the simplifying constructors.
    pub fn simplify(&mut self, e: ExprId) -> ExprId {
        self.rewrite(e, &HashMap::new(), &mut |_, x| x)
            .expect("rebuild without bindings cannot mismatch widths")
    }

    /// Replace each bound symbol by its expression and simplify the result.
    pub fn substitute(
        &mut self,
        e: ExprId,
        binding: &HashMap<SymOrigin, ExprId>,
    ) -> Result<ExprId, SymError> {
        self.rewrite(e, binding, &mut |_, x| x)
    }

    /// Substitute, rebuild through the simplifying constructors, and pass every
    /// rebuilt node through `hook`, whose result replaces it in its parents.
    pub fn rewrite(
        &mut self,
        e: ExprId,
        binding: &HashMap<SymOrigin, ExprId>,
        hook: &mut dyn FnMut(&mut ExprPool, ExprId) -> ExprId,
    ) -> Result<ExprId, SymError> {
        let mut done: HashMap<ExprId, ExprId> = HashMap::new();
        for id in self.postorder(e) {
            let get = |x: &ExprId| done[x];
            let new = match self.node(id).clone() {
                Node::Const { .. } | Node::Loop { .. } => id,
                Node::Sym { width, origin } => match binding.get(&origin) {
                    Some(&r) => {
                        let found = self.width(r);
                        if found != width {
                            return Err(SymError::WidthMismatch {
                                expected: width,
                                found,
                            });
                        }
                        r
                    }
                    None => id,
                },
                Node::Load {
                    space,
                    addr,
                    width,
                    trace,
                } => self.load(space, get(&addr), width, trace),
                Node::FloatOp { tag, width, args } => {
                    let args: Vec<ExprId> = args.iter().map(get).collect();
                    self.float_op(&tag, width, &args)
                }
                Node::Unary { op, arg } => self.unary(op, get(&arg)),
                Node::Binary { op, lhs, rhs } => self.binary(op, get(&lhs), get(&rhs)),
                Node::Compare { rel, lhs, rhs } => self.compare(rel, get(&lhs), get(&rhs)),
                Node::Extend { signed, to, arg } => self.extend(signed, to, get(&arg)),
                Node::Truncate { to, arg } => self.truncate(to, get(&arg)),
                Node::Ite { cond, then, els } => self.ite(get(&cond), get(&then), get(&els)),
            };
            let new = hook(self, new);
            done.insert(id, new);
        }
        Ok(done[&e])
    }
}
