//! Decision procedures over symbolic expressions.
//!
//! Queries go to an internal path first (constant folding, per-term interval
//! propagation and a seeded model search). Only when that path cannot decide is
//! the external SMT-LIB2 process consulted. An undecided query is `Unknown`, and
//! callers treat `Unknown` conservatively.

mod delta;
mod interval;
mod smt;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::symexpr::{mask, sext, ExprId, ExprPool, Node, Rel, SymOrigin, Valuation};

pub use delta::DeltaQuery;
pub use smt::ExternalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnknownReason {
    Timeout,
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown(UnknownReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchVerdict {
    Taken,
    NotTaken,
    Unknown,
}

/// Environment variable naming the external solver binary.
pub const SOLVER_ENV: &str = "PTXASW_SOLVER";
pub const DEFAULT_SOLVER: &str = "z3";

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// External solver; `None` keeps every query on the internal path.
    pub external: Option<ExternalConfig>,
    /// Model-search attempts per satisfiability query.
    pub model_tries: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            external: None,
            model_tries: 96,
            seed: 0x5eed,
        }
    }
}

impl SolverConfig {
    /// Internal path plus the external solver named by `PTXASW_SOLVER` (default `z3`).
    /// The external process is launched lazily; if it cannot be started the session
    /// continues on the internal path.
    pub fn from_env(timeout: Duration) -> SolverConfig {
        let program = std::env::var_os(SOLVER_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_SOLVER));
        SolverConfig::with_external(program, timeout)
    }

    pub fn with_external(program: PathBuf, timeout: Duration) -> SolverConfig {
        SolverConfig {
            external: Some(ExternalConfig { program, timeout }),
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct SolverStats {
    pub queries: u64,
    pub internal_decided: u64,
    /// Queries handed to the external solver.
    pub external_calls: u64,
    /// External queries answered sat or unsat.
    pub external_decided: u64,
    pub unknown: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum CacheKey {
    Sat(Vec<ExprId>),
    Delta(ExprId, ExprId, ExprId, u32),
    Disjoint(ExprId, u8, ExprId, u8, Vec<ExprId>),
}

#[derive(Debug, Clone, Copy)]
enum Cached {
    Verdict(Verdict),
    Delta(Option<i32>),
    Bool(bool),
}

/// One solver session. Sessions are not shared between threads.
pub struct Solver {
    config: SolverConfig,
    external: Option<smt::External>,
    cache: HashMap<CacheKey, Cached>,
    pub stats: SolverStats,
}

impl Default for Solver {
    fn default() -> Solver {
        Solver::new(SolverConfig::default())
    }
}

impl Solver {
    pub fn new(config: SolverConfig) -> Solver {
        let external = config.external.clone().map(smt::External::new);
        Solver {
            config,
            external,
            cache: HashMap::new(),
            stats: SolverStats::default(),
        }
    }

    /// A session that never launches a child process.
    pub fn internal_only() -> Solver {
        Solver::new(SolverConfig::default())
    }

    pub fn has_external(&self) -> bool {
        self.external.is_some()
    }

    /// Satisfiability of the conjunction of width-1 expressions.
    pub fn check_sat(&mut self, pool: &mut ExprPool, assumptions: &[ExprId]) -> Verdict {
        let mut lits: Vec<ExprId> = assumptions.iter().map(|&a| pool.simplify(a)).collect();
        lits.sort();
        lits.dedup();
        let key = CacheKey::Sat(lits.clone());
        if let Some(Cached::Verdict(v)) = self.cache.get(&key) {
            return *v;
        }
        self.stats.queries += 1;
        let v = self.check_sat_uncached(pool, lits);
        if matches!(v, Verdict::Unknown(_)) {
            self.stats.unknown += 1;
        }
        self.cache.insert(key, Cached::Verdict(v));
        v
    }

    fn check_sat_uncached(&mut self, pool: &mut ExprPool, mut lits: Vec<ExprId>) -> Verdict {
        for &l in &lits {
            assert_eq!(pool.width(l), 1, "assumption must be a predicate");
        }
        if lits.iter().any(|&l| pool.as_const(l) == Some(0)) {
            self.stats.internal_decided += 1;
            return Verdict::Unsat;
        }
        lits.retain(|&l| pool.as_const(l) != Some(1));
        if lits.is_empty() {
            self.stats.internal_decided += 1;
            return Verdict::Sat;
        }
        let set: HashSet<ExprId> = lits.iter().copied().collect();
        for &l in &lits {
            let n = pool.not(l);
            if set.contains(&n) {
                self.stats.internal_decided += 1;
                return Verdict::Unsat;
            }
        }
        let Some(domains) = interval::propagate(pool, &lits) else {
            self.stats.internal_decided += 1;
            return Verdict::Unsat;
        };
        if self.search_model(pool, &lits, &domains) {
            self.stats.internal_decided += 1;
            return Verdict::Sat;
        }
        self.external_check(pool, &lits)
    }

    fn external_check(&mut self, pool: &mut ExprPool, lits: &[ExprId]) -> Verdict {
        let Some(ext) = self.external.as_mut() else {
            return Verdict::Unknown(UnknownReason::Unsupported);
        };
        let mut all = lits.to_vec();
        all.extend(hardware_ranges(pool, lits));
        self.stats.external_calls += 1;
        let started = std::time::Instant::now();
        let v = ext.check(pool, &all);
        log::debug!(
            "external solver: {v:?} in {:?} for {}",
            started.elapsed(),
            all.iter().map(|&l| pool.display(l)).collect::<Vec<_>>().join(" && ")
        );
        if !matches!(v, Verdict::Unknown(_)) {
            self.stats.external_decided += 1;
        }
        v
    }

    /// Seeded search for a satisfying valuation of the uninterpreted leaves.
    fn search_model(
        &self,
        pool: &ExprPool,
        lits: &[ExprId],
        domains: &HashMap<ExprId, interval::Domain>,
    ) -> bool {
        let mut leaves: Vec<ExprId> = Vec::new();
        let mut consts: HashSet<u64> = HashSet::new();
        let mut seen = HashSet::new();
        for &l in lits {
            for n in pool.postorder(l) {
                match pool.node(n) {
                    Node::Const { bits, width } => {
                        for d in [0u64, 1, u64::MAX] {
                            consts.insert(bits.wrapping_add(d) & mask(*width));
                        }
                    }
                    Node::Sym { .. } | Node::Load { .. } | Node::Loop { .. } | Node::FloatOp { .. }
                        if seen.insert(n) => {
                            leaves.push(n);
                        }
                    _ => {}
                }
            }
        }
        let mut consts: Vec<u64> = consts.into_iter().collect();
        consts.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ lits.len() as u64);
        let tries = self.config.model_tries;
        for attempt in 0..tries {
            let mut v = Valuation::new();
            for &leaf in &leaves {
                let w = pool.width(leaf);
                let val = match domains.get(&leaf) {
                    Some(d) if attempt == 0 => d.witness().unwrap_or(0),
                    Some(d) => {
                        let pieces = d.pieces();
                        if let Some(f) = d.fixed {
                            f
                        } else if pieces.is_empty() {
                            0
                        } else {
                            let (a, b) = pieces[rng.gen_range(0..pieces.len())];
                            match rng.gen_range(0..4) {
                                0 => a,
                                1 => b,
                                _ => a.wrapping_add(rng.gen_range(0..=(b - a).min(u64::MAX - 1))),
                            }
                        }
                    }
                    None => (match (attempt, rng.gen_range(0..6)) {
                        (0, _) => 0,
                        (_, 0 | 1) if !consts.is_empty() => consts[rng.gen_range(0..consts.len())],
                        (_, 2) => rng.gen_range(0..64),
                        (_, 3) => sext(rng.gen_range(0..64u64).wrapping_neg(), w),
                        _ => rng.gen::<u64>(),
                    }) & mask(w),
                };
                assign(pool, &mut v, leaf, val);
            }
            if lits.iter().all(|&l| pool.eval(l, &v).ok() == Some(1)) {
                return true;
            }
        }
        false
    }

    /// Whether `cond` is decided by `assumptions`. Taken is checked first, so an
    /// infeasible assumption set reports Taken.
    pub fn proves_branch(
        &mut self,
        pool: &mut ExprPool,
        assumptions: &[ExprId],
        cond: ExprId,
    ) -> BranchVerdict {
        let cond = pool.simplify(cond);
        match pool.as_const(cond) {
            Some(0) => return BranchVerdict::NotTaken,
            Some(_) => return BranchVerdict::Taken,
            None => {}
        }
        let not_cond = pool.not(cond);
        if assumptions.contains(&cond) {
            return BranchVerdict::Taken;
        }
        if assumptions.contains(&not_cond) {
            return BranchVerdict::NotTaken;
        }
        let mut q = assumptions.to_vec();
        q.push(not_cond);
        if self.check_sat(pool, &q) == Verdict::Unsat {
            return BranchVerdict::Taken;
        }
        q.pop();
        q.push(cond);
        if self.check_sat(pool, &q) == Verdict::Unsat {
            return BranchVerdict::NotTaken;
        }
        BranchVerdict::Unknown
    }

    /// True only if `[a, a+wa)` and `[b, b+wb)` cannot overlap under `assumptions`.
    pub fn proves_disjoint(
        &mut self,
        pool: &mut ExprPool,
        a: ExprId,
        wa: u8,
        b: ExprId,
        wb: u8,
        assumptions: &[ExprId],
    ) -> bool {
        let key = CacheKey::Disjoint(a, wa, b, wb, assumptions.to_vec());
        if let Some(Cached::Bool(x)) = self.cache.get(&key) {
            return *x;
        }
        let d = pool.sub(b, a);
        let r = if let Some(d) = pool.as_const(d) {
            d >= wa as u64 && d <= (wb as u64).wrapping_neg()
        } else if has_free_term(pool, d, assumptions) {
            // The distance can be made zero.
            self.stats.internal_decided += 1;
            false
        } else if self.external.is_some() {
            // Overlap iff b - a <u wa or a - b <u wb.
            let w = pool.width(a);
            let d2 = pool.sub(a, b);
            let cwa = pool.constant(w, wa as u64);
            let cwb = pool.constant(w, wb as u64);
            let o1 = pool.compare(Rel::Ltu, d, cwa);
            let o2 = pool.compare(Rel::Ltu, d2, cwb);
            let overlap = pool.binary(crate::symexpr::BinOp::Or, o1, o2);
            let mut q = assumptions.to_vec();
            q.push(overlap);
            let lits: Vec<ExprId> = q.iter().map(|&x| pool.simplify(x)).collect();
            self.stats.queries += 1;
            self.external_check(pool, &lits) == Verdict::Unsat
        } else {
            false
        };
        self.cache.insert(key, Cached::Bool(r));
        r
    }
}

/// Whether `d` has an odd-coefficient term that is an unconstrained full-width
/// leaf (a pointer parameter or loaded value) occurring nowhere else in `d` or
/// in `assumptions`. Such a `d` takes every value, zero included.
fn has_free_term(pool: &ExprPool, d: ExprId, assumptions: &[ExprId]) -> bool {
    let lin = pool.lin(d);
    let constrained: Vec<ExprId> = assumptions.iter().flat_map(|&a| pool.leaves(a)).collect();
    lin.terms.iter().any(|(&t, &c)| {
        let unbounded = matches!(
            pool.node(t),
            Node::Load { .. }
                | Node::Sym {
                    origin: SymOrigin::Param(_) | SymOrigin::Havoc(_),
                    ..
                }
        );
        unbounded
            && c & 1 == 1
            && pool.width(t) == lin.width
            && !constrained.contains(&t)
            && lin
                .terms
                .keys()
                .filter(|&&o| o != t)
                .all(|&o| !pool.leaves(o).contains(&t))
    })
}

pub(crate) fn assign(pool: &ExprPool, v: &mut Valuation, leaf: ExprId, val: u64) {
    match pool.node(leaf) {
        Node::Sym { origin, .. } => {
            v.syms.insert(*origin, val);
        }
        Node::Load { trace, .. } => {
            v.loads.insert(*trace, val);
        }
        Node::Loop { loop_id, seq, .. } => {
            v.loops.insert((*loop_id, *seq), val);
        }
        _ => {
            v.floats.insert(leaf, val);
        }
    }
}

/// Range facts for the special registers mentioned in `lits`.
fn hardware_ranges(pool: &mut ExprPool, lits: &[ExprId]) -> Vec<ExprId> {
    let mut specials = Vec::new();
    for &l in lits {
        for leaf in pool.leaves(l) {
            if let Node::Sym {
                origin: SymOrigin::Special(r),
                ..
            } = pool.node(leaf)
            {
                if !specials.contains(&(leaf, *r)) {
                    specials.push((leaf, *r));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (leaf, r) in specials {
        let (lo, hi) = r.range();
        let w = pool.width(leaf);
        let clo = pool.constant(w, lo);
        let chi = pool.constant(w, hi);
        out.push(pool.compare(Rel::Leu, clo, leaf));
        out.push(pool.compare(Rel::Leu, leaf, chi));
    }
    out
}

#[cfg(test)]
mod tests;
