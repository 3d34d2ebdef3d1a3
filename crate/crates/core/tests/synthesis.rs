//! Synthesis invariants over generated stencil kernels, checked against the
//! generator's own offsets and the concrete simulator.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;

use proptest::prelude::*;
use ptxasw_core::fixtures;
use ptxasw_core::pipeline::{synthesize_kernel, synthesize_module, AnalysisConfig, SolverChoice};
use ptxasw_core::ptx::{parse_module, Kernel, PtxModule, StmtId};
use ptxasw_core::sim::{run_kernel_with, BufferInit, Dim3, MemoryImage, LaunchConfig, ParamValue, SimOptions, Workload};
use ptxasw_core::synth::Mode;

/// A 1D kernel reading `in[i + 3 + o]` for each offset `o` in `-3..=3` and
/// storing the sum to `out[i]`, for `i < n`. `flag` adds a per-thread early
/// exit on `g[i] == 0`; `early_store` writes `out[i]` before the loads, which
/// the analysis cannot separate from `in`. `wide` forms `i` in 64 bits; the
/// 32-bit form may wrap, so lane shifts across the wrap are not provable.
#[derive(Debug, Clone)]
struct Stencil {
    offsets: Vec<i32>,
    flag: bool,
    early_store: bool,
    wide: bool,
}

impl Stencil {
    fn ptx(&self, name: &str) -> String {
        let mut s = String::new();
        let g = if self.flag { ",\n\t.param .u64 g" } else { "" };
        let _ = write!(
            s,
            ".visible .entry {name}(\n\t.param .u64 out,\n\t.param .u64 in,\n\t.param .u32 n{g}\n)\n{{\n\
             \t.reg .pred %p<3>;\n\t.reg .b32 %r<8>;\n\t.reg .f32 %f<{}>;\n\t.reg .b64 %rd<16>;\n\
             \tld.param.u64 %rd1, [out];\n\tld.param.u64 %rd2, [in];\n\tld.param.u32 %r1, [n];\n\
             \tmov.u32 %r2, %ctaid.x;\n\tmov.u32 %r3, %ntid.x;\n\tmov.u32 %r4, %tid.x;\n\
             \tmad.lo.s32 %r5, %r2, %r3, %r4;\n\tsetp.ge.u32 %p1, %r5, %r1;\n\t@%p1 bra $L__EXIT;\n",
            2 * self.offsets.len() + 2
        );
        if self.wide {
            s.push_str(
                "\tmul.wide.u32 %rd8, %r2, %r3;\n\tcvt.u64.u32 %rd9, %r4;\n\tadd.s64 %rd10, %rd8, %rd9;\n\
                 \tshl.b64 %rd3, %rd10, 2;\n",
            );
        } else {
            s.push_str("\tmul.wide.u32 %rd3, %r5, 4;\n");
        }
        s.push_str("\tadd.s64 %rd4, %rd2, %rd3;\n\tadd.s64 %rd5, %rd1, %rd3;\n");
        if self.flag {
            s.push_str(
                "\tld.param.u64 %rd6, [g];\n\tadd.s64 %rd7, %rd6, %rd3;\n\tld.global.u32 %r6, [%rd7];\n\
                 \tsetp.eq.u32 %p2, %r6, 0;\n\t@%p2 bra $L__EXIT;\n",
            );
        }
        if self.early_store {
            s.push_str("\tst.global.u32 [%rd5], %r5;\n");
        }
        for (j, o) in self.offsets.iter().enumerate() {
            let _ = writeln!(s, "\tld.global.f32 %f{}, [%rd4+{}];", j + 1, 4 * (o + 3));
        }
        let mut acc = 1;
        for j in 1..self.offsets.len() {
            let next = self.offsets.len() + j + 1;
            let _ = writeln!(s, "\tadd.f32 %f{next}, %f{acc}, %f{};", j + 1);
            acc = next;
        }
        let _ = write!(s, "\tst.global.f32 [%rd5], %f{acc};\n$L__EXIT:\n\tret;\n}}\n");
        s
    }

    fn module(&self) -> PtxModule {
        let src = format!(".version 7.6\n.target sm_70\n.address_size 64\n\n{}", self.ptx("stencil"));
        parse_module(&src).expect("generated kernel parses")
    }
}

fn stencil() -> impl Strategy<Value = Stencil> {
    (proptest::collection::vec(-3i32..=3, 1..6), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(offsets, flag, early_store, wide)| Stencil {
            offsets,
            flag,
            early_store,
            wide,
        },
    )
}

fn config(mode: Mode) -> AnalysisConfig {
    AnalysisConfig {
        mode,
        solver: SolverChoice::Internal,
        ..AnalysisConfig::default()
    }
}

fn launch(k: &Kernel, grid: u32, block: u32, seed: u64) -> ptxasw_core::sim::Prepared {
    let threads = grid as u64 * block as u64;
    let mut w = Workload::new(Dim3::x(grid), Dim3::x(block))
        .scalar("n", threads.saturating_sub(seed % 3))
        .buffer("in", BufferInit::Random(seed));
    if k.params.iter().any(|p| p.name == "g") {
        let flags: Vec<u8> = (0..threads).flat_map(|t| (!(t * 7 + seed).is_multiple_of(5) as u32).to_le_bytes()).collect();
        w = w.buffer("g", BufferInit::Bytes(flags));
    }
    w.prepare(k).expect("workload")
}

/// Final memory and per-thread trace of one launch.
fn run(m: &PtxModule, k: &Kernel, grid: u32, block: u32, seed: u64) -> (Vec<Vec<u8>>, HashMap<(u64, u64), Vec<ptxasw_core::sim::SimEvent>>) {
    let mut p = launch(k, grid, block, seed);
    let opts = SimOptions {
        trace: true,
        ..SimOptions::new()
    };
    let out = run_kernel_with(m, &k.name, &p.cfg, &mut p.mem, &opts).expect("simulation");
    (p.buffers.iter().map(|(_, id)| p.mem.buffer(*id).bytes.clone()).collect(), out.traces)
}

fn with_kernel(m: &PtxModule, k: &Kernel) -> PtxModule {
    let mut out = m.clone();
    out.kernels[0] = k.clone();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn candidates_are_exactly_the_offset_pairs(st in stencil()) {
        let m = st.module();
        let k = &m.kernels[0];
        let o = synthesize_kernel(k, &config(Mode::Full)).unwrap();
        let loads: Vec<StmtId> = k
            .instructions()
            .filter(|i| i.opcode == "ld" && i.has("f32"))
            .map(|i| i.id)
            .collect();
        let mut want = BTreeSet::new();
        for d in 0..loads.len() {
            for s in 0..d {
                want.insert((loads[s], loads[d], st.offsets[d] - st.offsets[s]));
            }
        }
        let got: BTreeSet<_> = o.candidates.iter().map(|c| (c.src, c.dst, c.delta)).collect();
        if st.wide {
            prop_assert_eq!(got, want);
        } else {
            prop_assert!(got.is_subset(&want), "{:?} not within {:?}", got, want);
        }
    }

    #[test]
    fn plan_invariants_hold(st in stencil(), mode in prop_oneof![Just(Mode::Full), Just(Mode::NoLoad), Just(Mode::NoCorner)]) {
        let m = st.module();
        let o = synthesize_kernel(&m.kernels[0], &config(mode)).unwrap();
        let dsts: BTreeSet<StmtId> = o.plan.edits.iter().map(|e| e.dst).collect();
        prop_assert_eq!(dsts.len(), o.plan.edits.len());
        prop_assert!(o.plan.edits.iter().all(|e| !dsts.contains(&e.src)));
        prop_assert!(o.plan.edits.iter().all(|e| e.delta.unsigned_abs() <= 31));
        let again = synthesize_kernel(&o.output, &config(mode)).unwrap();
        prop_assert_eq!(again.plan.shuffles(), 0);
    }

    #[test]
    fn full_mode_preserves_memory(st in stencil(), grid in 1u32..3, block in 1u32..97, seed in 0u64..1000) {
        let m = st.module();
        let k = &m.kernels[0];
        let o = synthesize_kernel(k, &config(Mode::Full)).unwrap();
        let (want, _) = run(&m, k, grid, block, seed);
        let (got, _) = run(&with_kernel(&m, &o.output), k, grid, block, seed);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn candidates_hold_on_concrete_lanes(st in stencil(), grid in 1u32..3, block in 1u32..97, seed in 0u64..1000) {
        let m = st.module();
        let k = &m.kernels[0];
        let o = synthesize_kernel(k, &config(Mode::Full)).unwrap();
        let (_, traces) = run(&m, k, grid, block, seed);
        let addr = |t: (u64, u64), stmt: StmtId| traces.get(&t).and_then(|ev| ev.iter().find(|e| e.stmt == stmt)).map(|e| e.addr);
        for c in &o.candidates {
            for &(b, t) in traces.keys() {
                let p = t as i64 + c.delta as i64;
                if p < 0 || p as u64 >= block as u64 || p as u64 / 32 != t / 32 {
                    continue;
                }
                if let (Some(s), Some(d)) = (addr((b, p as u64), c.src), addr((b, t), c.dst)) {
                    prop_assert_eq!(s, d, "{:?} thread {}", c, t);
                }
            }
        }
    }

    /// Full warps without divergence: every lane that has a source lane stores
    /// exactly what the original stores.
    #[test]
    fn no_corner_matches_on_interior_lanes(offsets in proptest::collection::vec(-3i32..=3, 2..6), warps in 1u32..4, seed in 0u64..1000) {
        let st = Stencil { offsets, flag: false, early_store: false, wide: true };
        let m = st.module();
        let k = &m.kernels[0];
        let o = synthesize_kernel(k, &config(Mode::NoCorner)).unwrap();
        let corner: BTreeSet<u64> = o.plan.edits.iter().flat_map(|e| {
            let a = e.delta.unsigned_abs() as u64;
            match e.delta {
                n if n < 0 => (0..a).collect::<Vec<_>>(),
                n if n > 0 => (32 - a..32).collect(),
                _ => Vec::new(),
            }
        }).collect();
        let block = 32 * warps;
        // A seed divisible by 3 keeps every thread active.
        let p = launch(k, 1, block, 3 * seed);
        let stores = |m: &PtxModule| {
            let mut p = p.clone();
            let opts = SimOptions { trace: true, ..SimOptions::new() };
            let r = run_kernel_with(m, "stencil", &p.cfg, &mut p.mem, &opts).unwrap();
            r.traces.into_iter().map(|(t, ev)| (t, ev.into_iter().filter(|e| e.store).map(|e| (e.addr, e.value)).collect::<Vec<_>>())).collect::<HashMap<_, _>>()
        };
        let want = stores(&m);
        let got = stores(&with_kernel(&m, &o.output));
        for (t, s) in &want {
            if !corner.contains(&(t.1 % 32)) {
                prop_assert_eq!(got.get(t), Some(s), "thread {:?}", t);
            }
        }
    }
}

#[test]
fn parallel_and_sequential_pipelines_agree() {
    let text: String = (0..6)
        .map(|i| {
            Stencil {
                offsets: (0..=i).map(|j| (j * 5 % 7) - 3).collect(),
                flag: i % 2 == 1,
                early_store: i % 3 == 2,
                wide: i % 2 == 0,
            }
            .ptx(&format!("k{i}"))
        })
        .collect();
    let m = parse_module(&format!(".version 7.6\n.target sm_70\n.address_size 64\n\n{text}")).unwrap();
    let cfg = config(Mode::Full);
    let (par, par_stats) = synthesize_module(&m, &cfg, 0).unwrap();
    let (seq, seq_stats) = synthesize_module(&m, &cfg, 1).unwrap();
    assert_eq!(par, seq);
    let strip = |o: &[ptxasw_core::pipeline::KernelOutcome]| {
        o.iter()
            .map(|o| {
                let mut s = o.stats.clone();
                s.analysis_ms = 0.0;
                (s, o.plan.clone())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&par_stats), strip(&seq_stats));
    assert_eq!(par.kernels.iter().map(|k| k.name.as_str()).collect::<Vec<_>>(), ["k0", "k1", "k2", "k3", "k4", "k5"]);
}

#[test]
fn hand_shuffled_kernel_computes_differences() {
    let m = parse_module(fixtures::SHUFFLED).unwrap();
    for block in [32u32, 33, 61, 64] {
        let input: Vec<f32> = (0..=block).map(|i| (i * i) as f32 * 0.5).collect();
        let mut mem = MemoryImage::new();
        let out = mem.alloc_zeroed(block as usize * 4);
        let inp = mem.alloc_u32(&input.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        let cfg = LaunchConfig::new(Dim3::x(1), Dim3::x(block))
            .param("out", ParamValue::Buffer(out))
            .param("in", ParamValue::Buffer(inp))
            .param("n", ParamValue::Scalar(block as u64));
        run_kernel_with(&m, "diff1d", &cfg, &mut mem, &SimOptions::new()).unwrap();
        let got = mem.words(out);
        for i in 0..block as usize {
            assert_eq!(f32::from_bits(got[i]), input[i + 1] - input[i], "block {block} lane {i}");
        }
    }
}
