use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use ptxasw_core::ptx::{parse_module, PtxModule, ScalarType};
use ptxasw_core::sim::{parse_scalar, run_kernel_with, BufferSpec, Dim3, SimError, SimOptions, Workload};
use sha2::{Digest, Sha256};

use crate::{EXIT_ANALYSIS, EXIT_DIFF, EXIT_OK, EXIT_PARSE};

/// Launch dimensions: `X`, `X,Y`, `X,Y,Z` or `XxYxZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimArg(pub Dim3);

impl FromStr for DimArg {
    type Err = String;

    fn from_str(s: &str) -> Result<DimArg, String> {
        let parts: Vec<u32> = s
            .split([',', 'x'])
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        if parts.is_empty() || parts.len() > 3 || parts.contains(&0) {
            return Err(format!("`{s}`: expected one to three positive extents"));
        }
        let at = |i: usize| parts.get(i).copied().unwrap_or(1);
        Ok(DimArg(Dim3 {
            x: at(0),
            y: at(1),
            z: at(2),
        }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub input: PathBuf,
    /// Kernel to launch; the first kernel of the module by default.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, default_value = "1")]
    pub grid: DimArg,
    #[arg(long, default_value = "32")]
    pub block: DimArg,
    /// Buffer contents: NAME=zero|iota|const(V)|random(SEED)|file(PATH), optionally suffixed [WORDS].
    #[arg(long = "buf", value_name = "NAME=GEN")]
    pub buffers: Vec<String>,
    /// Scalar parameter value: NAME=VALUE.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    /// Run this module on identical inputs and compare final memory.
    #[arg(long)]
    pub diff: Option<PathBuf>,
    /// Write each final buffer to DIR/NAME.bin.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
    /// Warp-instructions per block before the run is aborted.
    #[arg(long, default_value_t = SimOptions::new().max_steps)]
    pub max_steps: u64,
    /// Base launch that `--buf` and `--param` refine; grid and block still come from the flags.
    #[arg(skip)]
    pub workload: Option<Workload>,
}

impl SimulateArgs {
    pub fn new(input: impl Into<PathBuf>, grid: Dim3, block: Dim3) -> SimulateArgs {
        SimulateArgs {
            input: input.into(),
            kernel: None,
            grid: DimArg(grid),
            block: DimArg(block),
            buffers: Vec::new(),
            params: Vec::new(),
            diff: None,
            dump_dir: None,
            max_steps: SimOptions::new().max_steps,
            workload: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    Differs {
        buffer: String,
        offset: usize,
        left: u8,
        right: u8,
    },
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub kernel: String,
    /// Final contents of every pointer parameter, in parameter order.
    pub buffers: Vec<(String, Vec<u8>)>,
    pub comparison: Option<Comparison>,
}

impl SimulateOutcome {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (name, bytes) in &self.buffers {
            let digest = Sha256::digest(bytes);
            let preview: Vec<String> = bytes
                .chunks_exact(4)
                .take(8)
                .map(|c| format!("{:08x}", u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let _ = writeln!(
                s,
                "{name}: {} bytes sha256:{} [{}]",
                bytes.len(),
                digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>(),
                preview.join(" ")
            );
        }
        match &self.comparison {
            Some(Comparison::Equal) => s.push_str("EQUAL\n"),
            Some(Comparison::Differs {
                buffer,
                offset,
                left,
                right,
            }) => {
                let _ = writeln!(s, "DIFF {buffer} at byte {offset}: 0x{left:02x} != 0x{right:02x}");
            }
            None => {}
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    /// Unreadable or malformed input, bad flags.
    #[error("{0}")]
    Input(String),
    #[error("{0}: {1}")]
    Sim(String, SimError),
}

fn input_err(e: impl std::fmt::Display) -> SimulateError {
    SimulateError::Input(e.to_string())
}

fn load(path: &Path) -> Result<PtxModule, SimulateError> {
    let src = std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    parse_module(&src).map_err(|e| input_err(format!("{}:{e}", path.display())))
}

fn split_binding(s: &str) -> Result<(&str, &str), SimulateError> {
    s.split_once('=').ok_or_else(|| input_err(format!("`{s}`: expected NAME=VALUE")))
}

/// Launch the kernel, and the same kernel of `--diff` on identical inputs.
pub fn simulate(args: &SimulateArgs) -> Result<SimulateOutcome, SimulateError> {
    let m = load(&args.input)?;
    let name = match &args.kernel {
        Some(k) => k.clone(),
        None => m.kernels.first().map(|k| k.name.clone()).ok_or_else(|| input_err("module has no kernels"))?,
    };
    let k = m.kernel(&name).ok_or_else(|| input_err(format!("no kernel `{name}`")))?;
    let mut w = args.workload.clone().unwrap_or_else(|| Workload::new(args.grid.0, args.block.0));
    w.grid = args.grid.0;
    w.block = args.block.0;
    for b in &args.buffers {
        let (n, spec) = split_binding(b)?;
        w.buffers.insert(n.to_string(), BufferSpec::from_str(spec).map_err(|e| input_err(format!("--buf {n}: {e}")))?);
    }
    for p in &args.params {
        let (n, v) = split_binding(p)?;
        let ty = k.params.iter().find(|q| q.name == n).map_or(ScalarType::U32, |q| q.ty);
        w.scalars.insert(n.to_string(), parse_scalar(v, ty).map_err(|e| input_err(format!("--param {n}: {e}")))?);
    }
    let prepared = w.prepare(k).map_err(input_err)?;
    let opts = SimOptions {
        trace: false,
        max_steps: args.max_steps,
    };
    let run = |m: &PtxModule, path: &Path| -> Result<Vec<(String, Vec<u8>)>, SimulateError> {
        let mut p = prepared.clone();
        run_kernel_with(m, &name, &p.cfg, &mut p.mem, &opts)
            .map_err(|e| SimulateError::Sim(path.display().to_string(), e))?;
        Ok(p
            .buffers
            .iter()
            .map(|(n, id)| (n.clone(), p.mem.buffer(*id).bytes.clone()))
            .collect())
    };
    let buffers = run(&m, &args.input)?;
    let comparison = match &args.diff {
        Some(other) => {
            let other = run(&load(other)?, other)?;
            Some(compare(&buffers, &other))
        }
        None => None,
    };
    if let Some(dir) = &args.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
        for (n, bytes) in &buffers {
            let p = dir.join(format!("{n}.bin"));
            std::fs::write(&p, bytes).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        }
    }
    Ok(SimulateOutcome {
        kernel: name,
        buffers,
        comparison,
    })
}

fn compare(a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) -> Comparison {
    for ((name, x), (_, y)) in a.iter().zip(b) {
        let differs = x.iter().zip(y).position(|(p, q)| p != q);
        if let Some(offset) = differs {
            return Comparison::Differs {
                buffer: name.clone(),
                offset,
                left: x[offset],
                right: y[offset],
            };
        }
    }
    Comparison::Equal
}

pub(crate) fn cmd_simulate(args: &SimulateArgs) -> i32 {
    match simulate(args) {
        Ok(out) => {
            print!("{}", out.summary());
            match out.comparison {
                Some(Comparison::Differs { .. }) => EXIT_DIFF,
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimulateError::Input(_) => EXIT_PARSE,
                SimulateError::Sim(..) => EXIT_ANALYSIS,
            }
        }
    }
}

