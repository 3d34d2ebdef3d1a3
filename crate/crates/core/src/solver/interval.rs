//! Per-term value domains used to refute conjunctions without a full solver.

use std::collections::{BTreeSet, HashMap};

use crate::symexpr::{mask, sext, ExprId, ExprPool, Node, Rel, SymOrigin, UnOp};

#[derive(Debug, Clone)]
pub(crate) struct Domain {
    pub width: u8,
    pub ulo: u64,
    pub uhi: u64,
    pub slo: i64,
    pub shi: i64,
    pub fixed: Option<u64>,
    pub excluded: BTreeSet<u64>,
    pub contradiction: bool,
}

impl Domain {
    pub fn full(width: u8) -> Domain {
        let m = mask(width);
        Domain {
            width,
            ulo: 0,
            uhi: m,
            slo: sext((m >> 1) + 1, width) as i64,
            shi: (m >> 1) as i64,
            fixed: None,
            excluded: BTreeSet::new(),
            contradiction: false,
        }
    }

    fn fix(&mut self, v: u64) {
        match self.fixed {
            Some(f) if f != v => self.contradiction = true,
            _ => self.fixed = Some(v),
        }
    }

    fn apply(&mut self, rel: Rel, c: u64, term_on_left: bool) {
        let w = self.width;
        let m = mask(w);
        let sc = sext(c, w) as i64;
        let smin = sext((m >> 1) + 1, w) as i64;
        let smax = (m >> 1) as i64;
        // Normalize to `term REL c`.
        let rel = if term_on_left { rel } else { rel.swap() };
        match rel {
            Rel::Eq => self.fix(c),
            Rel::Ne => {
                self.excluded.insert(c);
            }
            Rel::Ltu => {
                if c == 0 {
                    self.contradiction = true;
                } else {
                    self.uhi = self.uhi.min(c - 1);
                }
            }
            Rel::Leu => self.uhi = self.uhi.min(c),
            Rel::Gtu => {
                if c == m {
                    self.contradiction = true;
                } else {
                    self.ulo = self.ulo.max(c + 1);
                }
            }
            Rel::Geu => self.ulo = self.ulo.max(c),
            Rel::Lts => {
                if sc == smin {
                    self.contradiction = true;
                } else {
                    self.shi = self.shi.min(sc - 1);
                }
            }
            Rel::Les => self.shi = self.shi.min(sc),
            Rel::Gts => {
                if sc == smax {
                    self.contradiction = true;
                } else {
                    self.slo = self.slo.max(sc + 1);
                }
            }
            Rel::Ges => self.slo = self.slo.max(sc),
        }
    }

    fn contains(&self, v: u64) -> bool {
        let s = sext(v, self.width) as i64;
        v >= self.ulo
            && v <= self.uhi
            && s >= self.slo
            && s <= self.shi
            && !self.excluded.contains(&v)
            && self.fixed.is_none_or(|f| f == v)
    }

    /// Unsigned intervals satisfying both the unsigned and the signed bounds.
    pub fn pieces(&self) -> Vec<(u64, u64)> {
        let m = mask(self.width);
        if self.slo > self.shi || self.ulo > self.uhi {
            return Vec::new();
        }
        let signed_as_unsigned: Vec<(u64, u64)> = if self.slo >= 0 {
            vec![(self.slo as u64, self.shi as u64)]
        } else if self.shi < 0 {
            vec![((self.slo as u64) & m, (self.shi as u64) & m)]
        } else {
            vec![(0, self.shi as u64), ((self.slo as u64) & m, m)]
        };
        signed_as_unsigned
            .into_iter()
            .filter_map(|(a, b)| {
                let lo = a.max(self.ulo);
                let hi = b.min(self.uhi);
                (lo <= hi).then_some((lo, hi))
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        if self.contradiction {
            return true;
        }
        if let Some(f) = self.fixed {
            return !self.contains(f);
        }
        let pieces = self.pieces();
        if pieces.is_empty() {
            return true;
        }
        // Every value of a small domain excluded.
        let size: u128 = pieces.iter().map(|(a, b)| (*b - *a) as u128 + 1).sum();
        if size <= self.excluded.len() as u128 {
            return pieces
                .iter()
                .all(|&(a, b)| (a..=b).all(|v| self.excluded.contains(&v)));
        }
        false
    }

    /// A value inside the domain, if one is easy to find.
    pub fn witness(&self) -> Option<u64> {
        if let Some(f) = self.fixed {
            return self.contains(f).then_some(f);
        }
        for (a, b) in self.pieces() {
            let mut v = a;
            for _ in 0..=self.excluded.len() {
                if !self.excluded.contains(&v) {
                    return Some(v);
                }
                if v == b {
                    break;
                }
                v += 1;
            }
        }
        None
    }
}

/// Domains of every term constrained by a literal of the conjunction, seeded with
/// hardware ranges for special registers. Returns `None` if some domain is empty.
pub(crate) fn propagate(pool: &ExprPool, lits: &[ExprId]) -> Option<HashMap<ExprId, Domain>> {
    let mut doms: HashMap<ExprId, Domain> = HashMap::new();
    for &l in lits {
        let mut leaves = pool.leaves(l);
        leaves.retain(|&x| matches!(pool.node(x), Node::Sym { origin: SymOrigin::Special(_), .. }));
        for x in leaves {
            if let Node::Sym {
                origin: SymOrigin::Special(r),
                width,
            } = pool.node(x)
            {
                let d = doms.entry(x).or_insert_with(|| Domain::full(*width));
                let (lo, hi) = r.range();
                d.ulo = d.ulo.max(lo);
                d.uhi = d.uhi.min(hi);
            }
        }
    }
    for &l in lits {
        match pool.node(l) {
            Node::Compare { rel, lhs, rhs } => {
                let (term, c, left) = match (pool.as_const(*lhs), pool.as_const(*rhs)) {
                    (None, Some(c)) => (*lhs, c, true),
                    (Some(c), None) => (*rhs, c, false),
                    _ => continue,
                };
                doms.entry(term)
                    .or_insert_with(|| Domain::full(pool.width(term)))
                    .apply(*rel, c, left);
            }
            Node::Unary {
                op: UnOp::Not,
                arg,
            } => doms
                .entry(*arg)
                .or_insert_with(|| Domain::full(1))
                .fix(0),
            _ if pool.width(l) == 1 => doms.entry(l).or_insert_with(|| Domain::full(1)).fix(1),
            _ => {}
        }
    }
    if doms.values().any(Domain::is_empty) {
        None
    } else {
        Some(doms)
    }
}
