//! Simplifying constructors.
//!
//! Integer sums are kept in a linear normal form: `k + (c1*a1 + (c2*a2 + ...))`
//! with atoms ordered by id, coefficients reduced modulo the width and zero terms
//! dropped. A coefficient of one is omitted; every other coefficient is a `Mul`
//! whose right operand is the constant.

use std::collections::BTreeMap;

use super::{mask, sext, BinOp, ExprId, ExprPool, Node, Rel, UnOp};

/// `k + sum(coeff * atom)` modulo 2^width.
#[derive(Debug, Clone)]
pub(crate) struct Lin {
    pub width: u8,
    pub k: u64,
    pub terms: BTreeMap<ExprId, u64>,
}

impl Lin {
    fn constant(width: u8, k: u64) -> Lin {
        Lin {
            width,
            k: k & mask(width),
            terms: BTreeMap::new(),
        }
    }

    fn add(mut self, other: &Lin, sign: u64) -> Lin {
        let m = mask(self.width);
        self.k = self.k.wrapping_add(other.k.wrapping_mul(sign)) & m;
        for (&a, &c) in &other.terms {
            let e = self.terms.entry(a).or_insert(0);
            *e = e.wrapping_add(c.wrapping_mul(sign)) & m;
        }
        self.terms.retain(|_, c| *c != 0);
        self
    }

    fn scale(mut self, s: u64) -> Lin {
        let m = mask(self.width);
        self.k = self.k.wrapping_mul(s) & m;
        for c in self.terms.values_mut() {
            *c = c.wrapping_mul(s) & m;
        }
        self.terms.retain(|_, c| *c != 0);
        self
    }
}

impl ExprPool {
    pub(crate) fn lin(&self, e: ExprId) -> Lin {
        let w = self.width(e);
        match self.node(e) {
            Node::Const { bits, .. } => Lin::constant(w, *bits),
            Node::Binary { op, lhs, rhs } => {
                let (l, r) = (*lhs, *rhs);
                match op {
                    BinOp::Add => self.lin(l).add(&self.lin(r), 1),
                    BinOp::Sub => self.lin(l).add(&self.lin(r), u64::MAX),
                    BinOp::Mul => match (self.as_const(l), self.as_const(r)) {
                        (_, Some(c)) => self.lin(l).scale(c),
                        (Some(c), _) => self.lin(r).scale(c),
                        _ => self.atom(e),
                    },
                    BinOp::Shl => match self.as_const(r) {
                        Some(s) if s < w as u64 => self.lin(l).scale(1u64 << s),
                        _ => self.atom(e),
                    },
                    _ => self.atom(e),
                }
            }
            Node::Unary { op: UnOp::Neg, arg } => self.lin(*arg).scale(u64::MAX),
            Node::Unary { op: UnOp::Not, arg } if w > 1 => {
                Lin::constant(w, u64::MAX).add(&self.lin(*arg), u64::MAX)
            }
            _ => self.atom(e),
        }
    }

    fn atom(&self, e: ExprId) -> Lin {
        let mut terms = BTreeMap::new();
        terms.insert(e, 1);
        Lin {
            width: self.width(e),
            k: 0,
            terms,
        }
    }

    pub(crate) fn build_lin(&mut self, l: &Lin) -> ExprId {
        let w = l.width;
        let terms: Vec<ExprId> = l
            .terms
            .iter()
            .filter(|(_, &c)| c != 0)
            .map(|(&a, &c)| {
                if c == 1 {
                    a
                } else {
                    let cid = self.constant(w, c);
                    self.mk(Node::Binary {
                        op: BinOp::Mul,
                        lhs: a,
                        rhs: cid,
                    })
                }
            })
            .collect();
        let mut acc: Option<ExprId> = None;
        for &t in terms.iter().rev() {
            acc = Some(match acc {
                None => t,
                Some(rest) => self.mk(Node::Binary {
                    op: BinOp::Add,
                    lhs: t,
                    rhs: rest,
                }),
            });
        }
        match acc {
            None => self.constant(w, l.k),
            Some(sum) if l.k == 0 => sum,
            Some(sum) => {
                let k = self.constant(w, l.k);
                self.mk(Node::Binary {
                    op: BinOp::Add,
                    lhs: k,
                    rhs: sum,
                })
            }
        }
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinOp::Mul, a, b)
    }

    /// `a + k` with `k` interpreted modulo the width of `a`.
    pub fn add_const(&mut self, a: ExprId, k: i64) -> ExprId {
        let c = self.constant(self.width(a), k as u64);
        self.add(a, c)
    }

    pub fn not(&mut self, a: ExprId) -> ExprId {
        self.unary(UnOp::Not, a)
    }

    pub fn unary(&mut self, op: UnOp, a: ExprId) -> ExprId {
        let w = self.width(a);
        if let Some(c) = self.as_const(a) {
            let v = match op {
                UnOp::Not => !c,
                UnOp::Neg => c.wrapping_neg(),
            };
            return self.constant(w, v);
        }
        if w > 1 {
            let l = self.lin(a);
            let l = match op {
                UnOp::Neg => l.scale(u64::MAX),
                UnOp::Not => Lin::constant(w, u64::MAX).add(&l, u64::MAX),
            };
            return self.build_lin(&l);
        }
        // Width 1: negation is the identity, `not` flips.
        match op {
            UnOp::Neg => a,
            UnOp::Not => match self.node(a).clone() {
                Node::Compare { rel, lhs, rhs } => self.compare(rel.negate(), lhs, rhs),
                Node::Unary {
                    op: UnOp::Not,
                    arg,
                } => arg,
                _ => self.mk(Node::Unary { op: UnOp::Not, arg: a }),
            },
        }
    }

    pub fn binary(&mut self, op: BinOp, a: ExprId, b: ExprId) -> ExprId {
        let w = self.width(a);
        let (ca, cb) = (self.as_const(a), self.as_const(b));
        match op {
            BinOp::Add | BinOp::Sub => {
                assert_eq!(w, self.width(b), "{op:?} operand widths");
                let sign = if op == BinOp::Add { 1 } else { u64::MAX };
                let l = self.lin(a).add(&self.lin(b), sign);
                self.build_lin(&l)
            }
            BinOp::Mul => {
                assert_eq!(w, self.width(b), "mul operand widths");
                match (ca, cb) {
                    (_, Some(c)) => {
                        let l = self.lin(a).scale(c);
                        self.build_lin(&l)
                    }
                    (Some(c), _) => {
                        let l = self.lin(b).scale(c);
                        self.build_lin(&l)
                    }
                    _ => {
                        let (lhs, rhs) = if a <= b { (a, b) } else { (b, a) };
                        self.mk(Node::Binary { op, lhs, rhs })
                    }
                }
            }
            BinOp::MulWideS | BinOp::MulWideU => {
                let signed = op == BinOp::MulWideS;
                let xa = self.extend(signed, w * 2, a);
                let xb = self.extend(signed, w * 2, b);
                self.mul(xa, xb)
            }
            BinOp::And | BinOp::Or | BinOp::Xor => {
                assert_eq!(w, self.width(b), "{op:?} operand widths");
                let m = mask(w);
                if let (Some(x), Some(y)) = (ca, cb) {
                    let v = match op {
                        BinOp::And => x & y,
                        BinOp::Or => x | y,
                        _ => x ^ y,
                    };
                    return self.constant(w, v);
                }
                let (x, c) = match (ca, cb) {
                    (Some(c), _) => (b, Some(c)),
                    (_, Some(c)) => (a, Some(c)),
                    _ => (a, None),
                };
                match (op, c) {
                    (BinOp::And, Some(0)) => return self.constant(w, 0),
                    (BinOp::And, Some(c)) if c == m => return x,
                    (BinOp::Or, Some(0)) | (BinOp::Xor, Some(0)) => return x,
                    (BinOp::Or, Some(c)) if c == m => return self.constant(w, m),
                    (BinOp::Xor, Some(c)) if c == m => return self.unary(UnOp::Not, x),
                    _ => {}
                }
                if a == b {
                    return match op {
                        BinOp::Xor => self.constant(w, 0),
                        _ => a,
                    };
                }
                let (lhs, rhs) = if a <= b { (a, b) } else { (b, a) };
                self.mk(Node::Binary { op, lhs, rhs })
            }
            BinOp::Shl | BinOp::Lshr | BinOp::Ashr => {
                if let Some(s) = cb {
                    if s == 0 {
                        return a;
                    }
                    if let Some(x) = ca {
                        return self.constant(w, shift(op, x, s, w));
                    }
                    if s >= w as u64 && op != BinOp::Ashr {
                        return self.constant(w, 0);
                    }
                    if op == BinOp::Shl {
                        let l = self.lin(a).scale(1u64 << s);
                        return self.build_lin(&l);
                    }
                } else if ca == Some(0) {
                    return a;
                }
                self.mk(Node::Binary { op, lhs: a, rhs: b })
            }
        }
    }

    pub fn compare(&mut self, rel: Rel, a: ExprId, b: ExprId) -> ExprId {
        let w = self.width(a);
        assert_eq!(w, self.width(b), "compare operand widths");
        if let (Some(x), Some(y)) = (self.as_const(a), self.as_const(b)) {
            return self.constant(1, rel.holds(x, y, w) as u64);
        }
        match rel {
            Rel::Gtu | Rel::Geu | Rel::Gts | Rel::Ges => self.compare(rel.swap(), b, a),
            Rel::Eq | Rel::Ne => {
                let d = self.lin(a).add(&self.lin(b), u64::MAX);
                if d.terms.is_empty() {
                    return self.constant(1, ((d.k == 0) == (rel == Rel::Eq)) as u64);
                }
                let mut t = d;
                let mut c = t.k.wrapping_neg() & mask(w);
                t.k = 0;
                let lead = *t.terms.values().next().unwrap();
                if lead > (mask(w) >> 1) + 1 {
                    t = t.scale(u64::MAX);
                    c = c.wrapping_neg() & mask(w);
                }
                let lhs = self.build_lin(&t);
                let rhs = self.constant(w, c);
                self.mk(Node::Compare { rel, lhs, rhs })
            }
            Rel::Ltu | Rel::Leu | Rel::Lts | Rel::Les => {
                let strict = matches!(rel, Rel::Ltu | Rel::Lts);
                if a == b {
                    return self.constant(1, !strict as u64);
                }
                let (lo, hi) = if rel.is_signed() {
                    (1u64 << (w - 1), mask(w) >> 1)
                } else {
                    (0, mask(w))
                };
                let (ca, cb) = (self.as_const(a), self.as_const(b));
                if strict && (cb == Some(lo) || ca == Some(hi)) {
                    return self.constant(1, 0);
                }
                if !strict && (ca == Some(lo) || cb == Some(hi)) {
                    return self.constant(1, 1);
                }
                self.mk(Node::Compare { rel, lhs: a, rhs: b })
            }
        }
    }

    pub fn extend(&mut self, signed: bool, to: u8, a: ExprId) -> ExprId {
        let w = self.width(a);
        assert!(to >= w, "extend narrows");
        if to == w {
            return a;
        }
        if let Some(c) = self.as_const(a) {
            let v = if signed { sext(c, w) } else { c };
            return self.constant(to, v);
        }
        if let Node::Extend {
            signed: inner_signed,
            arg,
            ..
        } = *self.node(a)
        {
            // zext leaves a zero sign bit, so an outer sext acts as zext.
            if inner_signed == signed || !inner_signed {
                return self.extend(inner_signed, to, arg);
            }
        }
        self.mk(Node::Extend { signed, to, arg: a })
    }

    pub fn zext(&mut self, to: u8, a: ExprId) -> ExprId {
        self.extend(false, to, a)
    }

    pub fn sext(&mut self, to: u8, a: ExprId) -> ExprId {
        self.extend(true, to, a)
    }

    pub fn truncate(&mut self, to: u8, a: ExprId) -> ExprId {
        let w = self.width(a);
        assert!(to <= w, "truncate widens");
        if to == w {
            return a;
        }
        if let Some(c) = self.as_const(a) {
            return self.constant(to, c);
        }
        match self.node(a).clone() {
            Node::Extend { signed, arg, .. } => {
                let wa = self.width(arg);
                return if to <= wa {
                    self.truncate(to, arg)
                } else {
                    self.extend(signed, to, arg)
                };
            }
            Node::Truncate { arg, .. } => return self.truncate(to, arg),
            Node::Ite { cond, then, els } => {
                let t = self.truncate(to, then);
                let e = self.truncate(to, els);
                return self.ite(cond, t, e);
            }
            Node::Binary {
                op: op @ (BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor),
                lhs,
                rhs,
            } if self.as_const(rhs).is_none() && self.as_const(lhs).is_none() => {
                let l = self.truncate(to, lhs);
                let r = self.truncate(to, rhs);
                return self.binary(op, l, r);
            }
            _ => {}
        }
        let l = self.lin(a);
        if l.k != 0 || l.terms.len() != 1 || l.terms.values().next() != Some(&1) {
            let mut out = Lin {
                width: to,
                k: l.k & mask(to),
                terms: BTreeMap::new(),
            };
            for (&atom, &c) in &l.terms {
                let ta = self.truncate(to, atom);
                let part = self.lin(ta).scale(c);
                out = out.add(&part, 1);
            }
            return self.build_lin(&out);
        }
        self.mk(Node::Truncate { to, arg: a })
    }

    pub fn ite(&mut self, cond: ExprId, then: ExprId, els: ExprId) -> ExprId {
        if let Some(c) = self.as_const(cond) {
            return if c != 0 { then } else { els };
        }
        if then == els {
            return then;
        }
        if let Node::Unary {
            op: UnOp::Not,
            arg,
        } = *self.node(cond)
        {
            return self.ite(arg, els, then);
        }
        if self.width(then) == 1 {
            match (self.as_const(then), self.as_const(els)) {
                (Some(1), Some(0)) => return cond,
                (Some(0), Some(1)) => return self.not(cond),
                _ => {}
            }
        }
        self.mk(Node::Ite { cond, then, els })
    }
}

pub(crate) fn shift(op: BinOp, x: u64, s: u64, w: u8) -> u64 {
    let m = mask(w);
    let x = x & m;
    match op {
        BinOp::Shl => {
            if s >= w as u64 {
                0
            } else {
                (x << s) & m
            }
        }
        BinOp::Lshr => {
            if s >= w as u64 {
                0
            } else {
                x >> s
            }
        }
        _ => {
            let sx = sext(x, w) as i64;
            let s = s.min(63);
            ((sx >> s) as u64) & m
        }
    }
}
