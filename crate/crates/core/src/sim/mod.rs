//! Concrete lockstep SIMT interpreter for the PTX subset.
//!
//! Blocks run one after another. Inside a block, warps of 32 lanes run in
//! lockstep with a reconvergence stack that rejoins divergent lanes at the
//! immediate post-dominator of the branch. `bar.sync` parks a warp until every
//! live warp of the block arrives.

mod exec;
mod float;
mod workload;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::ptx::{Kernel, PtxModule, StmtId};

pub use workload::{parse_scalar, BufferInit, BufferSpec, Prepared, Workload};

/// First address handed out by the global allocator.
pub const HEAP_BASE: u64 = 0x1000_0000;
/// Alignment of every global buffer.
pub const BUFFER_ALIGN: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Dim3 {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Dim3 {
    pub fn x(x: u32) -> Dim3 {
        Dim3 { x, y: 1, z: 1 }
    }

    pub fn count(&self) -> u64 {
        self.x as u64 * self.y as u64 * self.z as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamValue {
    /// Raw bits, truncated to the parameter type.
    Scalar(u64),
    /// Base address of a buffer.
    Buffer(BufferId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchConfig {
    pub grid: Dim3,
    pub block: Dim3,
    pub params: Vec<(String, ParamValue)>,
}

impl LaunchConfig {
    pub fn new(grid: Dim3, block: Dim3) -> LaunchConfig {
        LaunchConfig {
            grid,
            block,
            params: Vec::new(),
        }
    }

    pub fn param(mut self, name: &str, v: ParamValue) -> LaunchConfig {
        self.params.push((name.to_string(), v));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Buffer {
    pub base: u64,
    pub bytes: Vec<u8>,
}

/// Global memory: non-overlapping buffers from a bump allocator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    buffers: Vec<Buffer>,
    next: u64,
}

impl Default for MemoryImage {
    fn default() -> MemoryImage {
        MemoryImage::new()
    }
}

impl MemoryImage {
    pub fn new() -> MemoryImage {
        MemoryImage {
            buffers: Vec::new(),
            next: HEAP_BASE,
        }
    }

    pub fn alloc(&mut self, bytes: Vec<u8>) -> BufferId {
        let base = self.next;
        let len = bytes.len().max(1) as u64;
        self.next = (base + len).div_ceil(BUFFER_ALIGN) * BUFFER_ALIGN;
        self.buffers.push(Buffer { base, bytes });
        BufferId(self.buffers.len() - 1)
    }

    pub fn alloc_zeroed(&mut self, len: usize) -> BufferId {
        self.alloc(vec![0; len])
    }

    pub fn alloc_u32(&mut self, words: &[u32]) -> BufferId {
        self.alloc(words.iter().flat_map(|w| w.to_le_bytes()).collect())
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn words(&self, id: BufferId) -> Vec<u32> {
        self.buffers[id.0]
            .bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }

    fn locate(&self, addr: u64, len: u64) -> Option<(usize, usize)> {
        // Buffers are sorted by base.
        let i = self.buffers.partition_point(|b| b.base <= addr).checked_sub(1)?;
        let b = &self.buffers[i];
        let off = addr - b.base;
        (off + len <= b.bytes.len() as u64).then_some((i, off as usize))
    }

    pub fn read(&self, addr: u64, len: usize) -> Option<u64> {
        let (i, off) = self.locate(addr, len as u64)?;
        Some(le_read(&self.buffers[i].bytes[off..off + len]))
    }

    pub fn write(&mut self, addr: u64, len: usize, v: u64) -> Option<()> {
        let (i, off) = self.locate(addr, len as u64)?;
        le_write(&mut self.buffers[i].bytes[off..off + len], v);
        Some(())
    }
}

fn le_read(b: &[u8]) -> u64 {
    b.iter().rev().fold(0, |acc, &x| (acc << 8) | x as u64)
}

fn le_write(b: &mut [u8], v: u64) {
    for (i, x) in b.iter_mut().enumerate() {
        *x = (v >> (8 * i)) as u8;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("kernel {0} not found")]
    UnknownKernel(String),
    #[error("parameter {0} is not bound")]
    UnboundParam(String),
    #[error("out-of-bounds access at {addr:#x} (statement {})", stmt.0)]
    OutOfBounds { addr: u64, stmt: StmtId },
    #[error("line {line}: unsupported instruction `{text}`")]
    Unsupported { line: u32, text: String },
    #[error("line {line}: register {register} read before any write")]
    UninitializedRegister { line: u32, register: String },
    #[error("block {block}: warps cannot make progress")]
    Deadlock { block: u64 },
    #[error("step limit of {0} warp instructions exceeded")]
    StepLimit(u64),
}

/// One memory access of one thread, for trace comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub store: bool,
    pub stmt: StmtId,
    pub addr: u64,
    /// Bytes accessed.
    pub width: u8,
    pub value: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Record global and shared accesses per thread.
    pub trace: bool,
    /// Upper bound on warp-instructions per block.
    pub max_steps: u64,
}

impl SimOptions {
    pub fn new() -> SimOptions {
        SimOptions {
            trace: false,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    /// Warp-instructions executed.
    pub steps: u64,
    /// Per (linear block, linear thread) access trace when tracing was requested.
    pub traces: HashMap<(u64, u64), Vec<SimEvent>>,
}

/// Run `kernel` of `m` over every block of `cfg`, mutating `mem`.
pub fn run_kernel(
    m: &PtxModule,
    kernel: &str,
    cfg: &LaunchConfig,
    mem: &mut MemoryImage,
) -> Result<SimOutcome, SimError> {
    run_kernel_with(m, kernel, cfg, mem, &SimOptions::new())
}

pub fn run_kernel_with(
    m: &PtxModule,
    kernel: &str,
    cfg: &LaunchConfig,
    mem: &mut MemoryImage,
    opts: &SimOptions,
) -> Result<SimOutcome, SimError> {
    let k = m
        .kernels
        .iter()
        .find(|k| k.name == kernel)
        .ok_or_else(|| SimError::UnknownKernel(kernel.to_string()))?;
    run(k, cfg, mem, opts)
}

fn run(k: &Kernel, cfg: &LaunchConfig, mem: &mut MemoryImage, opts: &SimOptions) -> Result<SimOutcome, SimError> {
    let mut params = Vec::with_capacity(k.params.len());
    for p in &k.params {
        let v = cfg
            .params
            .iter()
            .find(|(n, _)| *n == p.name)
            .map(|(_, v)| *v)
            .ok_or_else(|| SimError::UnboundParam(p.name.clone()))?;
        params.push(match v {
            ParamValue::Scalar(bits) => bits,
            ParamValue::Buffer(id) => mem.buffer(id).base,
        });
    }
    let prog = exec::Program::new(k, params);
    let mut out = SimOutcome::default();
    let g = cfg.grid;
    for bz in 0..g.z {
        for by in 0..g.y {
            for bx in 0..g.x {
                let ctaid = [bx, by, bz];
                prog.run_block(ctaid, cfg, mem, opts, &mut out)?;
            }
        }
    }
    Ok(out)
}
