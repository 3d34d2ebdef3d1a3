//! Search for the lane distance N with `src(tid + N) == dst(tid)`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::symexpr::{mask, sext, BinOp, ExprId, ExprPool, Node, Rel, SymOrigin, Valuation};

use super::{assign, CacheKey, Cached, Solver, Verdict};

/// Largest value of `%tid.x` allowed by the hardware.
const TID_MAX: i64 = 1023;

#[derive(Debug, Clone)]
pub struct DeltaQuery {
    /// Address read by the candidate source load.
    pub src: ExprId,
    /// Address read by the destination load.
    pub dst: ExprId,
    /// The 32-bit `%tid.x` symbol.
    pub tid: ExprId,
    /// Largest |N| considered (31 for a full warp).
    pub max_abs: u32,
}

/// Candidate order: 0, -1, 1, -2, 2, ...
pub fn delta_order(max_abs: u32) -> impl Iterator<Item = i32> {
    std::iter::once(0).chain((1..=max_abs as i32).flat_map(|n| [-n, n]))
}

impl Solver {
    /// Smallest-|N| distance (negative first on ties) for which the source address,
    /// evaluated by lane `lane + N`, equals the destination address of `lane`, for
    /// every lane whose partner lies in the same warp.
    pub fn solve_delta(&mut self, pool: &mut ExprPool, q: &DeltaQuery) -> Option<i32> {
        let key = CacheKey::Delta(q.src, q.dst, q.tid, q.max_abs);
        if let Some(Cached::Delta(d)) = self.cache.get(&key) {
            return *d;
        }
        let plausible = plausible_deltas(pool, q, self.config.seed);
        let r = delta_order(q.max_abs)
            .filter(|n| plausible.contains(n))
            .find(|&n| self.delta_valid(pool, q, n));
        self.cache.insert(key, Cached::Delta(r));
        r
    }

    /// Validity of one candidate N; undecided candidates are invalid.
    pub fn delta_valid(&mut self, pool: &mut ExprPool, q: &DeltaQuery, n: i32) -> bool {
        self.stats.queries += 1;
        let Some(tid_origin) = pool.as_sym(q.tid) else {
            return false;
        };
        let shifted = if n == 0 {
            q.src
        } else {
            let t = pool.add_const(q.tid, n as i64);
            match pool.substitute(q.src, &HashMap::from([(tid_origin, t)])) {
                Ok(s) => s,
                Err(_) => return false,
            }
        };
        let a = normalize(pool, shifted, q.tid, n);
        let b = normalize(pool, q.dst, q.tid, n);
        if a == b {
            self.stats.internal_decided += 1;
            return true;
        }
        if pool.width(shifted) != pool.width(q.dst) {
            return false;
        }
        if has_counterexample(pool, shifted, q.dst, tid_origin, n, self.config.seed) {
            self.stats.internal_decided += 1;
            return false;
        }
        if self.external.is_none() {
            self.stats.unknown += 1;
            return false;
        }
        let mut lits = Vec::new();
        let c31 = pool.constant(32, 31);
        let lane = pool.binary(BinOp::And, q.tid, c31);
        if n < 0 {
            let c = pool.constant(32, (-n) as u64);
            lits.push(pool.compare(Rel::Leu, c, lane));
        } else if n > 0 {
            let c = pool.constant(32, 31 - n as u64);
            lits.push(pool.compare(Rel::Leu, lane, c));
        }
        let cmax = pool.constant(32, TID_MAX as u64);
        lits.push(pool.compare(Rel::Leu, q.tid, cmax));
        lits.push(pool.compare(Rel::Ne, shifted, q.dst));
        let lits: Vec<ExprId> = lits.into_iter().map(|l| pool.simplify(l)).collect();
        self.external_check(pool, &lits) == Verdict::Unsat
    }
}

/// Rewrite `ext(tid + k)` to `ext(tid) + k` wherever no lane in the delta domain
/// can wrap, and `sext(tid)` to `zext(tid)`.
fn normalize(pool: &mut ExprPool, e: ExprId, tid: ExprId, n: i32) -> ExprId {
    let lo = (-(n as i64)).max(0);
    let hi = TID_MAX - (n as i64).max(0);
    let mut hook = |p: &mut ExprPool, x: ExprId| -> ExprId {
        let Node::Extend { signed, to, arg } = *p.node(x) else {
            return x;
        };
        if p.width(arg) != p.width(tid) {
            return x;
        }
        let l = p.lin(arg);
        let Some(&c) = l.terms.get(&tid) else {
            return x;
        };
        if l.terms.len() != 1 {
            return x;
        }
        // c*tid + k over the tid range, as exact integers.
        let (c, k) = (sext(c, l.width) as i64, sext(l.k, l.width) as i64);
        let (a, b) = (c * lo + k, c * hi + k);
        let (min, max) = (a.min(b), a.max(b));
        let fits = if signed {
            min >= i32::MIN as i64 && max <= i32::MAX as i64
        } else {
            min >= 0 && max <= u32::MAX as i64
        };
        if !fits {
            return x;
        }
        let z = p.zext(to, tid);
        let coef = p.constant(to, c as u64 & mask(to));
        let scaled = p.mul(coef, z);
        p.add_const(scaled, k)
    };
    pool.rewrite(e, &HashMap::new(), &mut hook)
        .expect("no bindings")
}

/// Deltas not refuted by a few concrete valuations. Each N is tested on an
/// in-warp lane pair, so a refutation is a genuine counterexample.
fn plausible_deltas(pool: &ExprPool, q: &DeltaQuery, seed: u64) -> Vec<i32> {
    let mut alive: Vec<i32> = delta_order(q.max_abs).collect();
    let Some(tid) = pool.as_sym(q.tid) else {
        return alive;
    };
    let mut leaves = pool.leaves(q.src);
    leaves.extend(pool.leaves(q.dst));
    leaves.sort_unstable();
    leaves.dedup();
    leaves.retain(|&l| l != q.tid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ q.src.0 as u64 ^ ((q.dst.0 as u64) << 20));
    for _ in 0..3 {
        let mut v = Valuation::new();
        for &leaf in &leaves {
            let val = match pool.node(leaf) {
                Node::Sym {
                    origin: SymOrigin::Special(r),
                    ..
                } => {
                    let (lo, hi) = r.range();
                    rng.gen_range(lo..=hi.min(lo + 64))
                }
                _ => rng.gen_range(0..4096),
            };
            assign(pool, &mut v, leaf, val);
        }
        let warp = rng.gen_range(0..32) * 32;
        let mut eval = |e: ExprId, t: i64| {
            v.syms.insert(tid, (warp + t) as u64);
            pool.eval(e, &v).ok()
        };
        alive.retain(|&n| {
            let lane = if n < 0 { 31 } else { 0 };
            match (eval(q.src, lane + n as i64), eval(q.dst, lane)) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
        });
        if alive.is_empty() {
            break;
        }
    }
    alive
}

/// Concrete search for a lane where the two addresses differ.
fn has_counterexample(
    pool: &ExprPool,
    a: ExprId,
    b: ExprId,
    tid: SymOrigin,
    n: i32,
    seed: u64,
) -> bool {
    let mut leaves = pool.leaves(a);
    for l in pool.leaves(b) {
        if !leaves.contains(&l) {
            leaves.push(l);
        }
    }
    leaves.retain(|&l| pool.as_sym(l) != Some(tid));
    let lanes: Vec<i64> = (0..32i64).filter(|l| (0..32).contains(&(l + n as i64))).collect();
    if lanes.is_empty() {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32) ^ a.0 as u64 ^ ((b.0 as u64) << 16));
    for round in 0..8 {
        let mut v = Valuation::new();
        for &leaf in &leaves {
            let w = pool.width(leaf);
            let val = match pool.node(leaf) {
                Node::Sym {
                    origin: SymOrigin::Special(r),
                    ..
                } => {
                    let (lo, hi) = r.range();
                    if round == 0 {
                        lo
                    } else if rng.gen_bool(0.5) {
                        rng.gen_range(lo..=hi.min(lo + 64))
                    } else {
                        rng.gen_range(lo..=hi)
                    }
                }
                _ => match (round, rng.gen_range(0..4)) {
                    (0, _) => 0,
                    (_, 0 | 1) => rng.gen_range(0..4096),
                    (_, 2) => rng.gen::<u64>() & 0xffff_ffff,
                    _ => rng.gen(),
                },
            } & mask(w);
            assign(pool, &mut v, leaf, val);
        }
        let warp = if round == 0 { 0 } else { rng.gen_range(0..32) * 32 };
        let picks: Vec<i64> = if round < 2 {
            lanes.clone()
        } else {
            (0..6).map(|_| lanes[rng.gen_range(0..lanes.len())]).collect()
        };
        for lane in picks {
            v.syms.insert(tid, (warp + lane) as u64);
            match (pool.eval(a, &v), pool.eval(b, &v)) {
                (Ok(x), Ok(y)) if x != y => return true,
                (Ok(_), Ok(_)) => {}
                _ => return false,
            }
        }
    }
    false
}
