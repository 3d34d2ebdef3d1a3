//! Acceptance criteria 1 to 8. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ptxasw_cli::{simulate, Comparison, SimulateArgs};
use ptxasw_core::emulator::{emulate_kernel, EventKind, Limits};
use ptxasw_core::fixtures;
use ptxasw_core::pipeline::{par_map, synthesize_kernel, AnalysisConfig};
use ptxasw_core::ptx::{instruction_text, parse_module, print_module, token_stream, Kernel, PtxModule, SpecialReg, Statement, StmtId};
use ptxasw_core::sim::{run_kernel_with, Dim3, SimEvent, SimOptions};
use ptxasw_core::solver::{DeltaQuery, Solver, SolverConfig};
use ptxasw_core::symexpr::{ExprId, ExprPool, SymOrigin};
use ptxasw_core::synth::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn module(src: &str) -> PtxModule {
    parse_module(src).expect("fixture parses")
}

fn with_kernel(m: &PtxModule, k: &Kernel) -> PtxModule {
    let mut out = m.clone();
    for slot in out.kernels.iter_mut().filter(|s| s.name == k.name) {
        *slot = k.clone();
    }
    out
}

fn config(mode: Mode) -> AnalysisConfig {
    AnalysisConfig {
        mode,
        ..AnalysisConfig::default()
    }
}

/// Lanes that have no source lane for some shuffle of `deltas`.
fn corner_lanes(deltas: impl IntoIterator<Item = i32>) -> BTreeSet<u64> {
    let mut lanes = BTreeSet::new();
    for n in deltas {
        let a = n.unsigned_abs() as u64;
        if n < 0 {
            lanes.extend(0..a);
        } else if n > 0 {
            lanes.extend(32 - a..32);
        }
    }
    lanes
}

// ---------------------------------------------------------------- criterion 1

fn parser_corpus() -> Check {
    let corpus: Vec<(&str, &str)> = fixtures::ALL.iter().copied().chain([("shuffled", fixtures::SHUFFLED)]).collect();
    for (name, src) in &corpus {
        let m = parse_module(src).map_err(|e| format!("{name}: {e}"))?;
        let printed = print_module(&m);
        let a = token_stream(src).map_err(|e| format!("{name}: {e}"))?;
        let b = token_stream(&printed).map_err(|e| format!("{name} reprint: {e}"))?;
        ensure(a == b, || format!("{name}: token streams differ"))?;
        let again = parse_module(&printed).map_err(|e| format!("{name} reparse: {e}"))?;
        ensure(again == m, || format!("{name}: reparse differs"))?;
    }
    for (name, src, line) in fixtures::MALFORMED {
        match parse_module(src) {
            Ok(_) => return Err(format!("{name}: accepted")),
            Err(e) => ensure(e.line() == Some(*line), || format!("{name}: {e}, expected line {line}"))?,
        }
    }
    Ok(format!(
        "{} fixtures round-trip, {} malformed inputs positioned",
        corpus.len(),
        fixtures::MALFORMED.len()
    ))
}

// ---------------------------------------------------------------- criterion 2

fn trace_fidelity() -> Check {
    let add = module(fixtures::ADD);
    let mut solver = Solver::internal_only();
    let r = emulate_kernel(&add.kernels[0], &Limits::default(), &mut solver).map_err(|e| e.to_string())?;
    let mut shapes: Vec<Vec<EventKind>> = r.flows.iter().map(|f| f.trace.iter().map(|e| e.kind).collect()).collect();
    shapes.sort_by_key(Vec::len);
    use EventKind::{Load as L, Store as S};
    ensure(shapes == vec![vec![L], vec![L, L, L, S]], || format!("add flows {shapes:?}"))?;

    let jacobi = module(fixtures::JACOBI);
    let o = synthesize_kernel(&jacobi.kernels[0], &config(Mode::Full)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = o.traces.iter().flat_map(|t| t.lines()).filter(|l| !l.is_empty()).collect();
    ensure(!lines.is_empty(), || "jacobi has no trace lines".into())?;
    let line = Regex::new(r"^(LD|ST): \S").unwrap();
    let base = Regex::new(r"load\(param\d+\)").unwrap();
    let looped = Regex::new(r"\+ [(]*[^+]*loop\(\d+, \d+\)").unwrap();
    let leading = Regex::new(r"^LD: 0x[0-9a-f]+ \+ \(load\(param\d+\)").unwrap();
    // After removing named leaves, every remaining number is a hex literal.
    let named = Regex::new(r"load\(param\d+\)|loop\(\d+, \d+\)|[a-z]+\.[xyz]|0x[0-9a-f]+").unwrap();
    for l in &lines {
        let body = l.trim_end_matches("  [invalidated]");
        ensure(line.is_match(body), || format!("bad line `{l}`"))?;
        ensure(base.is_match(body), || format!("no parameter base in `{l}`"))?;
        ensure(looped.is_match(body), || format!("no additive loop term in `{l}`"))?;
        let rest = named.replace_all(&body[4..], "");
        ensure(!rest.contains(|c: char| c.is_ascii_digit()), || format!("non-hex number in `{l}`"))?;
    }
    ensure(lines.iter().any(|l| leading.is_match(l)), || "no `LD: 0x.. + (load(paramK)` line".into())?;
    Ok(format!("add flows [LD] and [LD, LD, LD, ST]; {} jacobi trace lines match", lines.len()))
}

// ---------------------------------------------------------------- criterion 3

/// How a 32-bit index reaches the 64-bit address.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Widen {
    Sext,
    Zext,
    /// Index computed directly in 64 bits from zero-extended leaves.
    Wide,
}

/// `base + widen(c*tid + a*x + b*y + k) * 4 + off`.
#[derive(Debug, Clone)]
struct Affine {
    base: u32,
    c: i64,
    a: i64,
    b: i64,
    k: i64,
    widen: Widen,
    off: i64,
}

struct Leaves {
    base: [u64; 2],
    x: u32,
    y: u32,
}

impl Affine {
    fn eval(&self, l: &Leaves, tid: u64) -> u64 {
        let idx = match self.widen {
            Widen::Wide => (self.c as u64)
                .wrapping_mul(tid)
                .wrapping_add((self.a as u64).wrapping_mul(l.x as u64))
                .wrapping_add((self.b as u64).wrapping_mul(l.y as u64))
                .wrapping_add(self.k as u64),
            w => {
                let i = (self.c as u32)
                    .wrapping_mul(tid as u32)
                    .wrapping_add((self.a as u32).wrapping_mul(l.x))
                    .wrapping_add((self.b as u32).wrapping_mul(l.y))
                    .wrapping_add(self.k as u32);
                if w == Widen::Sext {
                    i as i32 as i64 as u64
                } else {
                    i as u64
                }
            }
        };
        l.base[self.base as usize].wrapping_add(idx.wrapping_mul(4)).wrapping_add(self.off as u64)
    }

    fn build(&self, p: &mut ExprPool) -> ExprId {
        let tid = p.sym(32, SymOrigin::Special(SpecialReg::TidX));
        let x = p.sym(32, SymOrigin::Param(2));
        let y = p.sym(32, SymOrigin::Param(3));
        let idx = match self.widen {
            Widen::Wide => {
                let leaves = [(tid, self.c), (x, self.a), (y, self.b)];
                let mut acc = p.constant(64, self.k as u64);
                for (leaf, coef) in leaves {
                    let wide = p.zext(64, leaf);
                    let c = p.constant(64, coef as u64);
                    let t = p.mul(c, wide);
                    acc = p.add(acc, t);
                }
                acc
            }
            w => {
                let mut acc = p.constant(32, self.k as u32 as u64);
                for (leaf, coef) in [(tid, self.c), (x, self.a), (y, self.b)] {
                    let c = p.constant(32, coef as u32 as u64);
                    let t = p.mul(c, leaf);
                    acc = p.add(acc, t);
                }
                if w == Widen::Sext {
                    p.sext(64, acc)
                } else {
                    p.zext(64, acc)
                }
            }
        };
        let base = p.sym(64, SymOrigin::Param(self.base));
        let four = p.constant(64, 4);
        let scaled = p.mul(four, idx);
        let sum = p.add(base, scaled);
        p.add_const(sum, self.off)
    }
}

fn random_affine(rng: &mut ChaCha8Rng) -> Affine {
    let widen = [Widen::Sext, Widen::Zext, Widen::Wide][rng.gen_range(0..3)];
    Affine {
        base: rng.gen_range(0..2),
        c: [1, 1, 1, 2, -1, 3][rng.gen_range(0..6)],
        a: [0, 0, 1, 64, -7][rng.gen_range(0..5)],
        b: [0, 0, 0, 1, 1000][rng.gen_range(0..5)],
        k: rng.gen_range(-40..40),
        widen,
        off: [0, 0, 4, -8, 12][rng.gen_range(0..5)],
    }
}

/// A destination and a source that is related to it often enough to exercise
/// every outcome: a lane shift, a shift written as a byte offset, a different
/// base or coefficient, or an unrelated address.
fn random_pair(rng: &mut ChaCha8Rng) -> (Affine, Affine) {
    let dst = random_affine(rng);
    let mut src = dst.clone();
    let shift = rng.gen_range(-40i64..40);
    match rng.gen_range(0..7) {
        0 | 1 => src.k = dst.k - shift * dst.c,
        2 => src.off = dst.off - 4 * shift * dst.c,
        3 => {
            src.k = dst.k - shift;
            src.a = dst.a + 1;
        }
        4 => src.base = 1 - dst.base,
        5 => src.c = dst.c + 1,
        _ => src = random_affine(rng),
    }
    (src, dst)
}

fn oracle_order() -> impl Iterator<Item = i32> {
    std::iter::once(0).chain((1..=31).flat_map(|n| [-n, n]))
}

/// Inverse of an odd `a` modulo 2^32.
fn inverse(a: u32) -> u32 {
    (0..5).fold(a, |inv, _| inv.wrapping_mul(2u32.wrapping_sub(a.wrapping_mul(inv))))
}

/// Leaves for which lanes near `t0` put the 32-bit index of `e` just around
/// `target`, where extension and wraparound change the address.
fn near_wrap(e: &Affine, mut l: Leaves, t0: u64, target: u32) -> Leaves {
    let fixed = |l: &Leaves, a: i64, b: i64| {
        (e.c as u32)
            .wrapping_mul(t0 as u32)
            .wrapping_add((a as u32).wrapping_mul(l.x))
            .wrapping_add((b as u32).wrapping_mul(l.y))
            .wrapping_add(e.k as u32)
    };
    // coef = 2^s * odd reaches every multiple of 2^s, so the index lands within 2^s below target.
    let solve = |coef: u32, rest: u32| {
        let s = coef.trailing_zeros();
        (target.wrapping_sub(rest) >> s).wrapping_mul(inverse(coef >> s))
    };
    if e.a != 0 {
        l.x = solve(e.a as u32, fixed(&l, 0, e.b));
    } else if e.b != 0 {
        l.y = solve(e.b as u32, fixed(&l, e.a, 0));
    }
    l
}

/// First N (in solver order) with `src(tid + N) == dst(tid)` for every sampled
/// valuation, warp, and lane pair inside the warp. Half the valuations are
/// uniform or small; the other half steer the destination index next to a
/// signed or unsigned 32-bit wrap, where rare counterexamples live.
fn brute_force_delta(src: &Affine, dst: &Affine, rng: &mut ChaCha8Rng) -> Option<i32> {
    let samples: Vec<(Leaves, u64)> = (0..1000)
        .map(|i| {
            let small = i % 4 == 0;
            let base = |rng: &mut ChaCha8Rng| if small { rng.gen_range(0..256u64) << 8 } else { rng.gen::<u64>() };
            let leaf = |rng: &mut ChaCha8Rng| if small { rng.gen_range(0..256) } else { rng.gen::<u32>() };
            let l = Leaves {
                base: [base(rng), base(rng)],
                x: leaf(rng),
                y: leaf(rng),
            };
            let warp = rng.gen_range(0..32u64) * 32;
            if i % 2 == 1 {
                let t0 = warp + rng.gen_range(0..32);
                let wrap = if rng.gen() { 0x8000_0000u32 } else { 0 };
                let target = wrap.wrapping_add(rng.gen_range(-40i32..40) as u32);
                (near_wrap(dst, l, t0, target), warp)
            } else {
                (l, warp)
            }
        })
        .collect();
    oracle_order().find(|&n| {
        samples.iter().all(|(l, warp)| {
            (0..32i64).filter(|lane| (0..32).contains(&(lane + n as i64))).all(|lane| {
                let t = warp + lane as u64;
                src.eval(l, t.wrapping_add(n as i64 as u64)) == dst.eval(l, t)
            })
        })
    })
}

fn delta_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    // The solver caches by expression id, so every pair lives in one pool.
    let mut solver = Solver::new(SolverConfig::from_env(Duration::from_secs(2)));
    let mut pool = ExprPool::new();
    let mut found = 0;
    for i in 0..200 {
        let (src, dst) = random_pair(&mut rng);
        let q = DeltaQuery {
            src: src.build(&mut pool),
            dst: dst.build(&mut pool),
            tid: pool.sym(32, SymOrigin::Special(SpecialReg::TidX)),
            max_abs: 31,
        };
        let got = solver.solve_delta(&mut pool, &q);
        let want = brute_force_delta(&src, &dst, &mut rng);
        ensure(got == want, || format!("pair {i}: solver {got:?}, oracle {want:?}\n  src {src:?}\n  dst {dst:?}"))?;
        found += want.is_some() as usize;
    }
    let path = match solver.stats.external_decided {
        0 => "internal path only".to_string(),
        n => format!("{n} queries decided by the external solver"),
    };
    Ok(format!("200/200 agree ({found} with a delta; {path})"))
}

// ---------------------------------------------------------------- criterion 4

/// Per-thread load addresses of each load statement, in execution order.
type LoadTraces = HashMap<StmtId, HashMap<(u64, u64), Vec<u64>>>;

fn load_traces(traces: &HashMap<(u64, u64), Vec<SimEvent>>) -> (LoadTraces, BTreeSet<u64>) {
    let mut loads: LoadTraces = HashMap::new();
    let mut stored = BTreeSet::new();
    for (&thread, events) in traces {
        for e in events {
            if e.store {
                stored.insert(e.addr);
            } else {
                loads.entry(e.stmt).or_default().entry(thread).or_default().push(e.addr);
            }
        }
    }
    (loads, stored)
}

/// Smallest-order N such that, for every thread, each instance of `d` reads the
/// address that the same instance of `s` read on lane `lane + N` of its warp.
fn concrete_delta(s: &HashMap<(u64, u64), Vec<u64>>, d: &HashMap<(u64, u64), Vec<u64>>, block: u64) -> Option<i32> {
    oracle_order().find(|&n| {
        let mut compared = 0;
        let ok = d.iter().all(|(&(b, t), dst)| {
            let p = t as i64 + n as i64;
            if p < 0 || p as u64 >= block || p as u64 / 32 != t / 32 {
                return true;
            }
            let Some(src) = s.get(&(b, p as u64)) else {
                return true;
            };
            compared += src.len().min(dst.len());
            src.iter().zip(dst).all(|(a, b)| a == b)
        });
        ok && compared > 0
    })
}

fn jacobi_detection() -> Check {
    let m = module(fixtures::JACOBI);
    let k = &m.kernels[0];
    let o = synthesize_kernel(k, &config(Mode::Full)).map_err(|e| e.to_string())?;

    let (grid, block) = (Dim3::x(2), Dim3::x(64));
    let mut p = fixtures::workload(k, grid, block, 1).prepare(k)?;
    let opts = SimOptions {
        trace: true,
        ..SimOptions::new()
    };
    let run = run_kernel_with(&m, &k.name, &p.cfg, &mut p.mem, &opts).map_err(|e| e.to_string())?;
    let (loads, stored) = load_traces(&run.traces);

    let mut stmts: Vec<StmtId> = loads.keys().copied().collect();
    stmts.sort();
    let touches_store = |s: &StmtId| loads[s].values().flatten().any(|a| stored.contains(a));
    let mut oracle = BTreeSet::new();
    for (j, d) in stmts.iter().enumerate() {
        for s in &stmts[..j] {
            if touches_store(s) || touches_store(d) {
                continue;
            }
            if let Some(n) = concrete_delta(&loads[s], &loads[d], block.x as u64) {
                oracle.insert((*s, *d, n));
            }
        }
    }
    let detected: BTreeSet<(StmtId, StmtId, i32)> = o.candidates.iter().map(|c| (c.src, c.dst, c.delta)).collect();
    ensure(detected == oracle, || format!("detected {detected:?}\n  oracle {oracle:?}"))?;

    // The (i+1) load sits two columns right of the (i-1) load: 8 bytes apart.
    let minus_two = oracle.iter().filter(|(s, d, n)| {
        *n == -2
            && loads[d].iter().all(|(t, dst)| {
                loads[s][t].iter().zip(dst).all(|(a, b)| a.wrapping_sub(*b) == 8)
            })
    });
    let pairs = minus_two.count();
    ensure(pairs > 0, || "no N = -2 pair between the (i+1) and (i-1) loads".into())?;

    // Independent greedy plan over the oracle pairs.
    let mut by_dst: BTreeMap<StmtId, Vec<(StmtId, i32)>> = BTreeMap::new();
    for &(s, d, n) in &oracle {
        by_dst.entry(d).or_default().push((s, n));
    }
    let (mut dsts, mut srcs) = (BTreeSet::new(), BTreeSet::new());
    let mut shuffles = 0;
    for (d, options) in by_dst {
        if srcs.contains(&d) {
            continue;
        }
        let best = options
            .into_iter()
            .filter(|(s, _)| !dsts.contains(s))
            .min_by_key(|&(s, n)| (n.unsigned_abs(), n > 0, !srcs.contains(&s), s));
        if let Some((s, n)) = best {
            dsts.insert(d);
            srcs.insert(s);
            shuffles += (n != 0) as usize;
        }
    }
    ensure(shuffles == o.plan.shuffles(), || {
        format!("oracle plan has {shuffles} shuffles, synthesis {}", o.plan.shuffles())
    })?;
    Ok(format!(
        "{} candidates match the concrete oracle, {pairs} N=-2 pairs, {}/{} shuffles (reference 6/9)",
        oracle.len(),
        shuffles,
        o.stats.loads_scanned
    ))
}

// ---------------------------------------------------------------- criterion 5

const SHAPES: [(u32, u32); 4] = [(1, 32), (1, 33), (2, 64), (1, 61)];

fn buffers_after(m: &PtxModule, k: &Kernel, grid: u32, block: u32, seed: u64) -> Result<Vec<Vec<u8>>, String> {
    let mut p = fixtures::workload(k, Dim3::x(grid), Dim3::x(block), seed).prepare(k)?;
    run_kernel_with(m, &k.name, &p.cfg, &mut p.mem, &SimOptions::new()).map_err(|e| e.to_string())?;
    Ok(p.buffers.iter().map(|(_, id)| p.mem.buffer(*id).bytes.clone()).collect())
}

fn differential() -> Check {
    let kernels = [
        ("add", fixtures::ADD),
        ("jacobi", fixtures::JACOBI),
        ("gameoflife", fixtures::GAMEOFLIFE),
        ("laplacian", fixtures::LAPLACIAN),
    ];
    let synthesized: Vec<(&str, PtxModule, PtxModule, usize)> = par_map(&kernels, 0, |&(name, src)| {
        let m = module(src);
        let o = synthesize_kernel(&m.kernels[0], &config(Mode::Full)).expect("synthesis");
        let out = with_kernel(&m, &o.output);
        (name, m, out, o.plan.shuffles())
    });
    let cases: Vec<(usize, (u32, u32), u64)> = (0..kernels.len())
        .flat_map(|k| SHAPES.iter().flat_map(move |&s| (1..=3).map(move |seed| (k, s, seed))))
        .collect();
    let results = par_map(&cases, 0, |&(i, (grid, block), seed)| -> Result<(), String> {
        let (name, orig, out, _) = &synthesized[i];
        let k = &orig.kernels[0];
        let a = buffers_after(orig, k, grid, block, seed)?;
        let b = buffers_after(out, k, grid, block, seed)?;
        ensure(a == b, || format!("{name} {grid}x{block} seed {seed}: outputs differ"))
    });
    results.into_iter().collect::<Result<Vec<()>, String>>()?;
    let shuffles: usize = synthesized.iter().map(|s| s.3).sum();
    ensure(shuffles > 0, || "no shuffles synthesized".into())?;
    Ok(format!("{} runs bit-identical, {shuffles} shuffles exercised", cases.len()))
}

// ---------------------------------------------------------------- criterion 6

/// Stores of every thread in execution order, keyed by (block, thread).
fn stores(m: &PtxModule, k: &Kernel, grid: u32, block: u32) -> Result<HashMap<(u64, u64), Vec<(u64, u64)>>, String> {
    let mut p = fixtures::workload(k, Dim3::x(grid), Dim3::x(block), 1).prepare(k)?;
    let opts = SimOptions {
        trace: true,
        ..SimOptions::new()
    };
    let r = run_kernel_with(m, &k.name, &p.cfg, &mut p.mem, &opts).map_err(|e| e.to_string())?;
    Ok(r.traces
        .into_iter()
        .map(|(t, ev)| (t, ev.iter().filter(|e| e.store).map(|e| (e.addr, e.value)).collect()))
        .collect())
}

fn diff(dir: &Path, orig: &Path, k: &Kernel, other: &Kernel, grid: u32, block: u32, seed: u64) -> Result<Comparison, String> {
    let path = dir.join(format!("{}_{}.ptx", k.name, other.reg_decls.len()));
    let m = module(&std::fs::read_to_string(orig).map_err(|e| e.to_string())?);
    std::fs::write(&path, print_module(&with_kernel(&m, other))).map_err(|e| e.to_string())?;
    let mut args = SimulateArgs::new(orig, Dim3::x(grid), Dim3::x(block));
    args.workload = Some(fixtures::workload(k, Dim3::x(grid), Dim3::x(block), seed));
    args.diff = Some(path);
    simulate(&args).map_err(|e| e.to_string())?.comparison.ok_or_else(|| "no comparison".into())
}

fn ablation() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (name, src) in [
        ("jacobi", fixtures::JACOBI),
        ("gameoflife", fixtures::GAMEOFLIFE),
        ("laplacian", fixtures::LAPLACIAN),
    ] {
        let m = module(src);
        let k = &m.kernels[0];
        let orig = dir.path().join(format!("{name}.ptx"));
        std::fs::write(&orig, src).map_err(|e| e.to_string())?;
        let synth = |mode| synthesize_kernel(k, &config(mode)).map_err(|e| e.to_string());
        let no_corner = synth(Mode::NoCorner)?;
        let no_load = synth(Mode::NoLoad)?;
        let corners = corner_lanes(no_corner.plan.edits.iter().map(|e| e.delta));
        ensure(!corners.is_empty(), || format!("{name}: no shuffles"))?;

        for (grid, block) in [(1, 32), (2, 64)] {
            // Full warps: interior lanes store exactly what the original stores.
            let want = stores(&m, k, grid, block)?;
            let got = stores(&with_kernel(&m, &no_corner.output), k, grid, block)?;
            let mut corner_diffs = 0;
            for (t, s) in &want {
                if got.get(t) == Some(s) {
                    continue;
                }
                ensure(corners.contains(&(t.1 % 32)), || format!("{name} {grid}x{block}: interior thread {t:?} differs"))?;
                corner_diffs += 1;
            }
            let cmp = diff(dir.path(), &orig, k, &no_corner.output, grid, block, 1)?;
            ensure((cmp == Comparison::Equal) == (corner_diffs == 0), || {
                format!("{name} {grid}x{block}: --diff {cmp:?} but {corner_diffs} corner threads differ")
            })?;
            notes.push(corner_diffs);
        }
        // A difference needs some input that exposes it; the differential seeds are tried in turn.
        let differs = |out: &Kernel, grid, block| -> Result<bool, String> {
            for seed in 1..=3 {
                if diff(dir.path(), &orig, k, out, grid, block, seed)? != Comparison::Equal {
                    return Ok(true);
                }
            }
            Ok(false)
        };
        ensure(differs(&no_corner.output, 1, 61)?, || format!("{name}: NO_CORNER equal at 1x61"))?;
        for (grid, block) in SHAPES {
            ensure(differs(&no_load.output, grid, block)?, || format!("{name}: NO_LOAD equal at {grid}x{block}"))?;
        }
    }
    Ok(format!(
        "NO_CORNER interior lanes exact on full warps ({} corner threads differ), differs at 1x61; NO_LOAD differs on every shape",
        notes.iter().sum::<usize>()
    ))
}

// ---------------------------------------------------------------- criterion 7

fn structure() -> Check {
    let mut checked = 0;
    for &(name, src) in fixtures::ALL {
        let m = module(src);
        for k in &m.kernels {
            for mode in [Mode::Full, Mode::NoLoad, Mode::NoCorner] {
                let o = synthesize_kernel(k, &config(mode)).map_err(|e| e.to_string())?;
                structural_diff(k, &o.output, &o.plan, mode).map_err(|e| format!("{name} {mode}: {e}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} kernel/mode outputs checked"))
}

fn structural_diff(orig: &Kernel, out: &Kernel, plan: &ptxasw_core::synth::SynthesisPlan, mode: Mode) -> Result<(), String> {
    let labels = |k: &Kernel| -> Vec<String> {
        k.body
            .iter()
            .filter_map(|s| match s {
                Statement::Label(l) => Some(l.clone()),
                _ => None,
            })
            .collect()
    };
    ensure(labels(orig) == labels(out), || "labels changed".into())?;
    let count = |k: &Kernel, op: &str| k.instructions().filter(|i| i.opcode == op).count();
    for op in ["bra", "selp"] {
        ensure(count(orig, op) == count(out, op), || format!("{op} count changed"))?;
    }
    // Every original instruction survives in order except the destinations.
    let dsts: BTreeSet<StmtId> = plan.edits.iter().map(|e| e.dst).collect();
    let mut kept = orig.instructions().filter(|i| !dsts.contains(&i.id)).map(instruction_text).peekable();
    let allowed = ["activemask", "setp", "or", "shfl", "mov", "and", "ld"];
    for i in out.instructions() {
        let t = instruction_text(i);
        if kept.peek() == Some(&t) {
            kept.next();
        } else {
            ensure(allowed.contains(&i.opcode.as_str()), || format!("unexpected instruction `{t}`"))?;
            ensure(i.opcode != "ld" || (mode == Mode::Full && i.guard.is_some()), || format!("unexpected load `{t}`"))?;
        }
    }
    ensure(kept.peek().is_none(), || format!("original instruction dropped: {:?}", kept.peek()))?;
    let added: u32 = out.reg_decls[orig.reg_decls.len()..].iter().map(|d| d.count.unwrap_or(1)).sum();
    let budget = plan.sources().len() + 1 + 3 * plan.shuffles();
    ensure(added as usize <= budget, || format!("{added} registers added, budget {budget}"))
}

// ---------------------------------------------------------------- criterion 8

fn performance() -> Check {
    let m = module(&fixtures::large_kernel(48));
    let k = &m.kernels[0];
    let o = synthesize_kernel(k, &config(Mode::Full)).map_err(|e| e.to_string())?;
    Ok(format!(
        "{} statements, {}/{} shuffles, analysis {:.0} ms",
        k.instructions().count(),
        o.stats.shuffles_emitted,
        o.stats.loads_scanned,
        o.stats.analysis_ms
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, u64, fn() -> Check); 8] = [
        (1, "parser corpus", 1, parser_corpus),
        (2, "emulator trace fidelity", 5, trace_fidelity),
        (3, "delta solver matches brute force", 60, delta_oracle),
        (4, "jacobi detection", 60, jacobi_detection),
        (5, "differential semantic preservation", 120, differential),
        (6, "ablation behaviour", 120, ablation),
        (7, "structural constraints", 60, structure),
        (8, "performance envelope", 60, performance),
    ];
    let mut failed = 0;
    for (n, title, budget, run) in criteria {
        let started = Instant::now();
        let result = run();
        let took = started.elapsed();
        let result = match result {
            Ok(detail) if took > Duration::from_secs(budget) => Err(format!("{detail}; over the {budget} s budget")),
            r => r,
        };
        let (verdict, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} {verdict}: {title} ({:.2} s) {detail}", took.as_secs_f64());
        failed += result.is_err() as u32;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
