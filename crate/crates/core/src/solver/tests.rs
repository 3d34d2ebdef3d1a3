use std::path::PathBuf;
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ptx::SpecialReg;
use crate::symexpr::{BinOp, Valuation};

const TID: SymOrigin = SymOrigin::Special(SpecialReg::TidX);

fn var(p: &mut ExprPool, w: u8, k: u32) -> ExprId {
    p.sym(w, SymOrigin::Var(k))
}

fn lt(p: &mut ExprPool, x: ExprId, c: u64) -> ExprId {
    let c = p.constant(p.width(x), c);
    p.compare(Rel::Ltu, x, c)
}

fn gt(p: &mut ExprPool, x: ExprId, c: u64) -> ExprId {
    let c = p.constant(p.width(x), c);
    p.compare(Rel::Gtu, x, c)
}

#[test]
fn satisfiability_examples() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let x = var(&mut p, 32, 0);
    let a = lt(&mut p, x, 5);
    let b = lt(&mut p, x, 10);
    let c = gt(&mut p, x, 10);
    assert_eq!(s.check_sat(&mut p, &[a, b]), Verdict::Sat);
    assert_eq!(s.check_sat(&mut p, &[a, c]), Verdict::Unsat);
    let h = p.sym(1, SymOrigin::Havoc(0));
    assert_eq!(s.check_sat(&mut p, &[h]), Verdict::Sat);
    let nh = p.not(h);
    assert_eq!(s.check_sat(&mut p, &[h, nh]), Verdict::Unsat);
}

#[test]
fn special_register_ranges_refute() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let t = p.sym(32, TID);
    let big = gt(&mut p, t, 5000);
    assert_eq!(s.check_sat(&mut p, &[big]), Verdict::Unsat);
}

#[test]
fn branch_examples() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let x = var(&mut p, 32, 0);
    let a = lt(&mut p, x, 5);
    let c1 = lt(&mut p, x, 10);
    let c2 = gt(&mut p, x, 7);
    assert_eq!(s.proves_branch(&mut p, &[a], c1), BranchVerdict::Taken);
    assert_eq!(s.proves_branch(&mut p, &[a], c2), BranchVerdict::NotTaken);
    let h = p.sym(1, SymOrigin::Havoc(3));
    assert_eq!(s.proves_branch(&mut p, &[], h), BranchVerdict::Unknown);
}

#[test]
fn disjointness_examples() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let base = p.sym(64, SymOrigin::Param(0));
    let other = p.sym(64, SymOrigin::Param(1));
    let b8 = p.add_const(base, 8);
    let b2 = p.add_const(base, 2);
    let bm4 = p.add_const(base, -4);
    assert!(s.proves_disjoint(&mut p, base, 4, b8, 4, &[]));
    assert!(s.proves_disjoint(&mut p, base, 4, bm4, 4, &[]));
    assert!(!s.proves_disjoint(&mut p, base, 4, b2, 4, &[]));
    assert!(!s.proves_disjoint(&mut p, base, 4, other, 4, &[]));
}

/// `p + c * sext(tid + o)` with `tid + o` computed in 32 bits.
fn sext_form(p: &mut ExprPool, base: ExprId, c: u64, o: i64) -> ExprId {
    let t = p.sym(32, TID);
    let to = p.add_const(t, o);
    let x = p.sext(64, to);
    let cc = p.constant(64, c);
    let m = p.mul(x, cc);
    p.add(base, m)
}

fn zext_plus_form(p: &mut ExprPool, base: ExprId, c: u64, o: i64) -> ExprId {
    let t = p.sym(32, TID);
    let x = p.zext(64, t);
    let cc = p.constant(64, c);
    let m = p.mul(x, cc);
    let a = p.add(base, m);
    p.add_const(a, o)
}

fn zext_inner_form(p: &mut ExprPool, base: ExprId, c: u64, o: i64) -> ExprId {
    let t = p.sym(32, TID);
    let to = p.add_const(t, o);
    let x = p.zext(64, to);
    let cc = p.constant(64, c);
    let m = p.mul(x, cc);
    p.add(base, m)
}

fn offset_form(p: &mut ExprPool, base: ExprId, c: u64, o: i64) -> ExprId {
    let t = p.sym(32, TID);
    let x = p.sym(32, SymOrigin::Param(7));
    let s = p.add(t, x);
    let so = p.add_const(s, o);
    let e = p.sext(64, so);
    let cc = p.constant(64, c);
    let m = p.mul(e, cc);
    p.add(base, m)
}

fn query(p: &mut ExprPool, src: ExprId, dst: ExprId) -> DeltaQuery {
    DeltaQuery {
        src,
        dst,
        tid: p.sym(32, TID),
        max_abs: 31,
    }
}

#[test]
fn delta_examples() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let base = p.sym(64, SymOrigin::Param(2));
    let a = sext_form(&mut p, base, 4, 1);
    let b = sext_form(&mut p, base, 4, -1);
    let q = query(&mut p, a, b);
    assert_eq!(s.solve_delta(&mut p, &q), Some(-2));
    let q = query(&mut p, a, a);
    assert_eq!(s.solve_delta(&mut p, &q), Some(0));
    let a = zext_plus_form(&mut p, base, 4, 0);
    let b = zext_plus_form(&mut p, base, 4, 4);
    let q = query(&mut p, a, b);
    assert_eq!(s.solve_delta(&mut p, &q), Some(1));
    let b8 = zext_plus_form(&mut p, base, 8, 0);
    let q = query(&mut p, a, b8);
    assert_eq!(s.solve_delta(&mut p, &q), None);
    // Mixed extension forms agree once extensions are pushed over tid.
    let a = zext_plus_form(&mut p, base, 4, 4);
    let b = sext_form(&mut p, base, 4, -1);
    let q = query(&mut p, a, b);
    assert_eq!(s.solve_delta(&mut p, &q), Some(-2));
}

#[test]
fn delta_rejects_wrapping_index() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let base = p.sym(64, SymOrigin::Param(2));
    // zext(tid - 3) wraps for the first lanes of warp 0, so it never equals zext(tid) - 3.
    let a = zext_inner_form(&mut p, base, 4, -3);
    let b = zext_plus_form(&mut p, base, 4, -12);
    let q = query(&mut p, a, b);
    assert_eq!(s.solve_delta(&mut p, &q), None);
}

fn random_address(p: &mut ExprPool, rng: &mut ChaCha8Rng, base: ExprId) -> (usize, u64, i64) {
    let form = rng.gen_range(0..4);
    let c = [1u64, 2, 4, 8][rng.gen_range(0..4)];
    let o = rng.gen_range(-64i64..=64);
    let _ = (p, base);
    (form, c, o)
}

fn build(p: &mut ExprPool, base: ExprId, (form, c, o): (usize, u64, i64)) -> ExprId {
    match form {
        0 => sext_form(p, base, c, o),
        1 => zext_plus_form(p, base, c, o),
        2 => zext_inner_form(p, base, c, o),
        _ => offset_form(p, base, c, o),
    }
}

/// Brute-force reference: the first N in search order for which 1000 random
/// valuations (thread index drawn from lanes whose partner is in the warp) agree.
pub(crate) fn oracle_delta(p: &ExprPool, src: ExprId, dst: ExprId, seed: u64) -> Option<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaves = p.leaves(src);
    leaves.extend(p.leaves(dst));
    leaves.retain(|&l| p.as_sym(l) != Some(TID));
    'n: for n in delta::delta_order(31) {
        let lanes: Vec<u64> = (0..32u64).filter(|&l| (0..32).contains(&(l as i64 + n as i64))).collect();
        for i in 0..1000 {
            let mut v = Valuation::new();
            for &l in &leaves {
                let val: u64 = match i % 3 {
                    0 => rng.gen_range(0..1 << 20),
                    1 => rng.gen::<u32>() as u64,
                    _ => rng.gen(),
                };
                if let Some(o) = p.as_sym(l) {
                    v.syms.insert(o, val);
                }
            }
            let warp: u64 = match rng.gen_range(0..4) {
                0 => 0,
                1 => 31,
                _ => rng.gen_range(0..32),
            };
            let lane = if i < 64 { lanes[i % lanes.len()] } else { lanes[rng.gen_range(0..lanes.len())] };
            let t = warp * 32 + lane;
            v.syms.insert(TID, t);
            let b = p.eval(dst, &v).unwrap();
            v.syms.insert(TID, (t as i64 + n as i64) as u64);
            let a = p.eval(src, &v).unwrap();
            if a != b {
                continue 'n;
            }
        }
        return Some(n);
    }
    None
}

#[test]
fn delta_agrees_with_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut found = 0;
    for case in 0..240 {
        let mut p = ExprPool::new();
        let mut s = Solver::internal_only();
        let base = p.sym(64, SymOrigin::Param(0));
        let sa = random_address(&mut p, &mut rng, base);
        // Half of the pairs are built to admit a distance.
        let sb = if rng.gen_bool(0.5) {
            let n = rng.gen_range(-31i64..=31);
            let form = if rng.gen_bool(0.7) { sa.0 } else { rng.gen_range(0..4) };
            let o = match (sa.0, form) {
                (f, g) if f == g && f != 1 => sa.2 + n,
                _ => sa.2 + n * sa.1 as i64,
            };
            (form, sa.1, o)
        } else {
            random_address(&mut p, &mut rng, base)
        };
        let a = build(&mut p, base, sa);
        let b = build(&mut p, base, sb);
        let want = oracle_delta(&p, a, b, case);
        let q = query(&mut p, a, b);
        let got = s.solve_delta(&mut p, &q);
        assert_eq!(got, want, "case {case}: {sa:?} {sb:?}\n{}\n{}", p.display(a), p.display(b));
        found += want.is_some() as usize;
    }
    assert!(found > 60, "too few solvable pairs: {found}");
}

#[test]
fn verdicts_are_deterministic() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let base = p.sym(64, SymOrigin::Param(0));
    let a = offset_form(&mut p, base, 4, 3);
    let b = offset_form(&mut p, base, 4, 1);
    let q = query(&mut p, a, b);
    let first = s.solve_delta(&mut p, &q);
    for _ in 0..3 {
        assert_eq!(s.solve_delta(&mut p, &q), first);
    }
    let mut fresh = Solver::internal_only();
    assert_eq!(fresh.solve_delta(&mut p, &q), first);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Decided branches are checked against exhaustive enumeration of an 8-bit variable.
    #[test]
    fn branch_verdicts_are_sound(bounds in proptest::collection::vec((0u8..6, any::<u8>()), 0..4),
                                 cond in (0u8..6, any::<u8>())) {
        let mut p = ExprPool::new();
        let mut s = Solver::internal_only();
        let x = var(&mut p, 8, 0);
        let rels = [Rel::Eq, Rel::Ne, Rel::Ltu, Rel::Leu, Rel::Lts, Rel::Ges];
        let mk = |p: &mut ExprPool, (r, c): (u8, u8)| {
            let c = p.constant(8, c as u64);
            p.compare(rels[r as usize], x, c)
        };
        let asm: Vec<ExprId> = bounds.iter().map(|&b| mk(&mut p, b)).collect();
        let c = mk(&mut p, cond);
        let verdict = s.proves_branch(&mut p, &asm, c);
        let models: Vec<u64> = (0..256u64)
            .filter(|&v| {
                let val = Valuation::new().with_sym(SymOrigin::Var(0), v);
                asm.iter().all(|&a| p.eval(a, &val).unwrap() == 1)
            })
            .collect();
        let holds = |v: u64| p.eval(c, &Valuation::new().with_sym(SymOrigin::Var(0), v)).unwrap() == 1;
        match verdict {
            BranchVerdict::Taken => prop_assert!(models.iter().all(|&v| holds(v))),
            BranchVerdict::NotTaken => prop_assert!(models.iter().all(|&v| !holds(v))),
            BranchVerdict::Unknown => {}
        }
        if verdict == BranchVerdict::Taken {
            let nc = p.not(c);
            let mut q = asm.clone();
            q.push(nc);
            prop_assert_eq!(s.check_sat(&mut p, &q), Verdict::Unsat);
        }
    }
}

/// Path of an external solver usable in this environment, if any.
fn external_solver() -> Option<PathBuf> {
    let candidate = std::env::var_os(SOLVER_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_SOLVER));
    std::process::Command::new(&candidate)
        .arg("-version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| candidate)
}

#[test]
fn external_solver_decides_nonlinear_queries() {
    let Some(program) = external_solver() else {
        eprintln!("no external solver found; skipping");
        return;
    };
    let mut p = ExprPool::new();
    let mut s = Solver::new(SolverConfig::with_external(program, Duration::from_secs(5)));
    let x = var(&mut p, 32, 0);
    let two = p.constant(32, 2);
    let seven = p.constant(32, 7);
    let dbl = p.binary(BinOp::Mul, x, two);
    let odd = p.compare(Rel::Eq, dbl, seven);
    assert_eq!(s.check_sat(&mut p, &[odd]), Verdict::Unsat);
    assert!(s.stats.external_calls >= 1);
    // Internal-only sessions leave it undecided.
    let mut i = Solver::internal_only();
    assert!(matches!(i.check_sat(&mut p, &[odd]), Verdict::Unknown(_)));
}

#[test]
fn missing_external_solver_degrades_to_unknown() {
    let mut p = ExprPool::new();
    let mut s = Solver::new(SolverConfig::with_external(
        PathBuf::from("/nonexistent/solver-binary"),
        Duration::from_millis(200),
    ));
    let x = var(&mut p, 32, 0);
    let two = p.constant(32, 2);
    let seven = p.constant(32, 7);
    let dbl = p.binary(BinOp::Mul, x, two);
    let odd = p.compare(Rel::Eq, dbl, seven);
    assert!(matches!(s.check_sat(&mut p, &[odd]), Verdict::Unknown(_)));
}

#[test]
fn delta_with_negative_tid_coefficient() {
    let mut p = ExprPool::new();
    let mut s = Solver::internal_only();
    let base = p.sym(64, SymOrigin::Param(0));
    // base + 4*sext(17 - tid) (+ 96 for the source).
    let t = p.sym(32, TID);
    let m1 = p.constant(32, 0xffff_ffff);
    let neg = p.mul(m1, t);
    let idx = p.add_const(neg, 17);
    let wide = p.sext(64, idx);
    let four = p.constant(64, 4);
    let scaled = p.mul(four, wide);
    let dst = p.add(base, scaled);
    let src = p.add_const(dst, 96);
    let q = query(&mut p, src, dst);
    assert_eq!(s.solve_delta(&mut p, &q), Some(24));
}
