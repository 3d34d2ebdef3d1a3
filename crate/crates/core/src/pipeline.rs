//! End-to-end synthesis of a module: emulate, detect, plan and rewrite each
//! kernel, with kernels processed in parallel.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::emulator::{emulate_kernel, EmuError, Limits};
use crate::ptx::{Kernel, PtxModule};
use crate::solver::{Solver, SolverConfig, SolverStats};
use crate::synth::{detect_candidates, generate_code, select_plan, Mode, ShuffleCandidate, SynthesisPlan};

/// Largest lane distance a shuffle can express within one warp.
pub const MAX_DELTA: u32 = 31;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SolverChoice {
    /// `PTXASW_SOLVER`, else `z3` on the search path; internal only if neither starts.
    #[default]
    Env,
    Program(PathBuf),
    Internal,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub mode: Mode,
    /// Largest |N| considered, at most [`MAX_DELTA`].
    pub max_abs_delta: u32,
    pub limits: Limits,
    pub solver: SolverChoice,
}

impl Default for AnalysisConfig {
    fn default() -> AnalysisConfig {
        AnalysisConfig {
            mode: Mode::Full,
            max_abs_delta: MAX_DELTA,
            limits: Limits::default(),
            solver: SolverChoice::Env,
        }
    }
}

impl AnalysisConfig {
    pub fn solver(&self) -> Solver {
        let timeout = self.limits.solver_timeout;
        match &self.solver {
            SolverChoice::Env => Solver::new(SolverConfig::from_env(timeout)),
            SolverChoice::Program(p) => Solver::new(SolverConfig::with_external(p.clone(), timeout)),
            SolverChoice::Internal => Solver::internal_only(),
        }
    }
}

/// Result of synthesizing one kernel.
#[derive(Debug, Clone)]
pub struct KernelOutcome {
    pub output: Kernel,
    pub candidates: Vec<ShuffleCandidate>,
    pub plan: SynthesisPlan,
    pub stats: KernelStats,
    /// Printed memory trace of each flow, `LD: <addr>` / `ST: <addr>` per line.
    pub traces: Vec<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KernelStats {
    pub kernel: String,
    /// Global loads of any width in the input kernel.
    pub loads_scanned: usize,
    pub candidates: usize,
    pub shuffles_emitted: usize,
    pub movs_emitted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_delta: Option<f64>,
    pub mode: Mode,
    pub analysis_ms: f64,
    pub flows: usize,
    pub pruned_flows: usize,
    pub truncated_flows: usize,
    pub solver: SolverStats,
}

#[derive(Debug, thiserror::Error)]
#[error("kernel `{kernel}`: {source}")]
pub struct KernelError {
    pub kernel: String,
    #[source]
    pub source: EmuError,
}

pub fn synthesize_kernel(k: &Kernel, cfg: &AnalysisConfig) -> Result<KernelOutcome, KernelError> {
    let started = Instant::now();
    let mut solver = cfg.solver();
    let fail = |source| KernelError {
        kernel: k.name.clone(),
        source,
    };
    let mut res = emulate_kernel(k, &cfg.limits, &mut solver).map_err(fail)?;
    let candidates = detect_candidates(k, &mut res, &mut solver, cfg.max_abs_delta.min(MAX_DELTA));
    let plan = select_plan(&k.name, &candidates, cfg.mode);
    let output = generate_code(k, &plan);
    let stats = KernelStats {
        kernel: k.name.clone(),
        loads_scanned: k.global_load_count(),
        candidates: candidates.len(),
        shuffles_emitted: plan.shuffles(),
        movs_emitted: plan.moves(),
        mean_abs_delta: plan.mean_abs_delta(),
        mode: cfg.mode,
        analysis_ms: (started.elapsed().as_secs_f64() * 1e3).max(1e-6),
        flows: res.flows.len(),
        pruned_flows: res.stats.pruned_branches,
        truncated_flows: res.stats.truncated,
        solver: solver.stats,
    };
    let traces = (0..res.flows.len()).map(|f| res.dump_trace(f)).collect();
    Ok(KernelOutcome {
        output,
        candidates,
        plan,
        stats,
        traces,
    })
}

/// Synthesize every kernel of `m` with up to `jobs` worker threads (0 = all cores).
/// Kernel order in the output matches the input.
pub fn synthesize_module(
    m: &PtxModule,
    cfg: &AnalysisConfig,
    jobs: usize,
) -> Result<(PtxModule, Vec<KernelOutcome>), KernelError> {
    let outcomes: Vec<KernelOutcome> = par_map(&m.kernels, jobs, |k| synthesize_kernel(k, cfg))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut out = m.clone();
    for (k, o) in out.kernels.iter_mut().zip(&outcomes) {
        *k = o.output.clone();
    }
    Ok((out, outcomes))
}

/// Order-preserving map over `items` on up to `jobs` threads (0 = all cores);
/// sequential when `jobs == 1` or without the `parallel` feature.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if jobs != 1 && items.len() > 1 {
        use rayon::prelude::*;
        let run = || items.par_iter().map(&f).collect();
        return match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        };
    }
    let _ = jobs;
    items.iter().map(f).collect()
}
