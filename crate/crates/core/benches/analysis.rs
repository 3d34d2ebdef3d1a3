//! Parallel against sequential paths: per-kernel synthesis of a module and a
//! batch of differential simulations.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ptxasw_core::fixtures;
use ptxasw_core::pipeline::{par_map, synthesize_module, AnalysisConfig, SolverChoice};
use ptxasw_core::ptx::{parse_module, PtxModule};
use ptxasw_core::sim::{run_kernel, Dim3};

/// Every fixture kernel plus two synthetic ones, in one module.
fn corpus() -> PtxModule {
    let mut m = parse_module(&fixtures::large_kernel(8)).unwrap();
    let mut second = parse_module(&fixtures::large_kernel(6)).unwrap();
    second.kernels[0].name.push_str("_b");
    m.kernels.extend(second.kernels);
    for &(_, src) in fixtures::ALL {
        m.kernels.extend(parse_module(src).unwrap().kernels);
    }
    m
}

fn synthesis(c: &mut Criterion) {
    let m = corpus();
    let cfg = AnalysisConfig {
        solver: SolverChoice::Internal,
        ..AnalysisConfig::default()
    };
    let mut g = c.benchmark_group("synthesize_module");
    g.sample_size(10);
    for (label, jobs) in [("parallel", 0), ("sequential", 1)] {
        g.bench_with_input(BenchmarkId::from_parameter(label), &jobs, |b, &jobs| {
            b.iter(|| synthesize_module(black_box(&m), &cfg, jobs).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let m = parse_module(fixtures::JACOBI).unwrap();
    let k = &m.kernels[0];
    let launches: Vec<_> = (0..16u64)
        .map(|seed| {
            fixtures::workload(k, Dim3::x(2), Dim3::x(64), seed)
                .prepare(k)
                .unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("simulate_batch");
    g.sample_size(10);
    for (label, jobs) in [("parallel", 0), ("sequential", 1)] {
        g.bench_with_input(BenchmarkId::from_parameter(label), &jobs, |b, &jobs| {
            b.iter(|| {
                par_map(&launches, jobs, |p| {
                    let mut p = p.clone();
                    run_kernel(&m, "jacobi", &p.cfg, &mut p.mem).unwrap();
                    p.mem.words(p.buffers[0].1)
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, synthesis, simulation);
criterion_main!(benches);
