use std::collections::{BTreeMap, HashMap, HashSet};

use crate::emulator::EmulationResult;
use crate::ptx::{Kernel, Operand, StateSpace, Statement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::solver::{assign, DeltaQuery, Solver};
use crate::symexpr::{ExprId, Node, SymOrigin, Valuation};

use super::ShuffleCandidate;

/// Unguarded scalar 32-bit global load into a 32-bit register.
pub fn is_candidate_load(k: &Kernel, index: usize) -> bool {
    let Some(Statement::Instruction(inst)) = k.body.get(index) else {
        return false;
    };
    if inst.opcode != "ld"
        || inst.state_space() != Some(StateSpace::Global)
        || inst.guard.is_some()
        || inst.has("v2")
        || inst.has("v4")
        || inst.ty().map(|t| t.bits()) != Some(32)
    {
        return false;
    }
    let (Some(Operand::Register(d)), Some(Operand::Address(a))) =
        (inst.operands.first(), inst.operands.get(1))
    else {
        return false;
    };
    let base_is_dst = matches!(&a.base, crate::ptx::AddrBase::Register(b) if b == d);
    !base_is_dst && k.register_type(d).map(|t| t.bits()) == Some(32)
}

/// Candidate (source, destination) pairs valid in every flow that reaches the destination.
pub fn detect_candidates(
    k: &Kernel,
    res: &mut EmulationResult,
    solver: &mut Solver,
    max_abs: u32,
) -> Vec<ShuffleCandidate> {
    let eligible: Vec<bool> = (0..k.body.len()).map(|i| is_candidate_load(k, i)).collect();
    let mut unanalyzed: HashSet<usize> = HashSet::new();
    for p in res.truncation_points() {
        let from = res.cfg.block_of[p.min(k.body.len().saturating_sub(1))];
        unanalyzed.extend(res.cfg.reachable_from(from));
    }
    // Per destination: flows containing it. Per pair: agreed delta and flow count.
    let mut dst_flows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pairs: HashMap<(usize, usize), (Option<i32>, usize)> = HashMap::new();
    let mut stride_ok: HashMap<ExprId, bool> = HashMap::new();
    let tid = res.tid;
    let flows: Vec<usize> = res.complete_flows().map(|(i, _)| i).collect();
    for fi in flows {
        let trace = res.flows[fi].trace.clone();
        for (j, d) in trace.iter().enumerate() {
            if !d.is_load() || !eligible[d.index] || d.guard.is_some() {
                continue;
            }
            *dst_flows.entry(d.index).or_default() += 1;
            if !res.lane_uniform_except_tid(d.addr) || !leading_stride(res, d.addr, &mut stride_ok) {
                continue;
            }
            for s in &trace[..j] {
                if !s.is_load() || !eligible[s.index] || s.guard.is_some() || !s.valid_at(d.seq) {
                    continue;
                }
                let key = (d.index, s.index);
                if matches!(pairs.get(&key), Some((None, _))) {
                    continue;
                }
                let n = if res.pool.width(s.addr) == res.pool.width(d.addr)
                    && res.lane_uniform_except_tid(s.addr)
                {
                    let q = DeltaQuery {
                        src: s.addr,
                        dst: d.addr,
                        tid,
                        max_abs,
                    };
                    solver.solve_delta(&mut res.pool, &q)
                } else {
                    None
                };
                let entry = pairs.entry(key).or_insert((n, 0));
                if entry.0 != n {
                    entry.0 = None;
                }
                entry.1 += 1;
            }
        }
    }
    let mut out = Vec::new();
    for ((di, si), (n, count)) in pairs {
        let Some(delta) = n else { continue };
        if count != dst_flows[&di] || unanalyzed.contains(&res.cfg.block_of[di]) {
            continue;
        }
        let (bs, bd) = (res.cfg.block_of[si], res.cfg.block_of[di]);
        if !res.cfg.stmt_dominates(si, di) || res.cfg.innermost_loop(bs) != res.cfg.innermost_loop(bd) {
            continue;
        }
        let id = |i: usize| k.body[i].as_instruction().expect("load index").id;
        out.push(ShuffleCandidate {
            dst: id(di),
            src: id(si),
            dst_index: di,
            src_index: si,
            delta,
            flows: count,
        });
    }
    out.sort_by_key(|c| (c.dst_index, c.delta.unsigned_abs(), c.delta, c.src_index));
    out
}

/// Neighbouring `%tid.x` values address neighbouring 4-byte elements, judged by
/// finite differences at small sampled leaf values. This only filters which
/// dimension shuffles follow; every accepted pair is still proven separately.
fn leading_stride(res: &EmulationResult, addr: ExprId, memo: &mut HashMap<ExprId, bool>) -> bool {
    if let Some(&b) = memo.get(&addr) {
        return b;
    }
    let pool = &res.pool;
    let Some(tid) = pool.as_sym(res.tid) else {
        return false;
    };
    let leaves: Vec<ExprId> = pool.leaves(addr).into_iter().filter(|&l| l != res.tid).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(addr.0 as u64);
    let ok = (0..16).all(|round| {
        let mut v = Valuation::new();
        for &l in &leaves {
            let val = match pool.node(l) {
                Node::Sym {
                    origin: SymOrigin::Special(r),
                    ..
                } => {
                    let (lo, hi) = r.range();
                    rng.gen_range(lo..=hi.min(lo + 8))
                }
                _ if round == 0 => 0,
                _ => rng.gen_range(0..64),
            };
            assign(pool, &mut v, l, val);
        }
        let t = rng.gen_range(0..1023u64);
        let at = |v: &mut Valuation, x: u64| {
            v.syms.insert(tid, x);
            pool.eval(addr, v)
        };
        matches!((at(&mut v, t), at(&mut v, t + 1)), (Ok(a), Ok(b)) if b.wrapping_sub(a) == 4)
    });
    memo.insert(addr, ok);
    ok
}
