//! Launch description independent of a particular kernel: buffer generators,
//! scalar bindings and defaults for whatever the description leaves out.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BufferId, Dim3, LaunchConfig, MemoryImage, ParamValue};
use crate::ptx::{Kernel, ScalarType};

/// Largest default buffer, in 32-bit words.
const MAX_DEFAULT_WORDS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BufferInit {
    Zero,
    /// Word `i` holds `i`.
    Iota,
    Const(u32),
    Random(u64),
    Bytes(Vec<u8>),
}

impl BufferInit {
    fn fill(&self, words: usize) -> Vec<u8> {
        match self {
            BufferInit::Zero => vec![0; words * 4],
            BufferInit::Iota => (0..words as u32).flat_map(u32::to_le_bytes).collect(),
            BufferInit::Const(v) => v.to_le_bytes().repeat(words),
            BufferInit::Random(seed) => {
                let mut b = vec![0; words * 4];
                ChaCha8Rng::seed_from_u64(*seed).fill_bytes(&mut b);
                b
            }
            BufferInit::Bytes(b) => {
                let mut b = b.clone();
                b.resize(b.len().max(words * 4), 0);
                b
            }
        }
    }
}

/// `zero`, `iota`, `const(V)`, `random(SEED)` or `file(PATH)`, optionally
/// followed by `[WORDS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferSpec {
    pub init: BufferInit,
    pub words: Option<usize>,
}

impl FromStr for BufferSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<BufferSpec, String> {
        let (gen, words) = match s.strip_suffix(']').and_then(|t| t.rsplit_once('[')) {
            Some((g, n)) => (g, Some(n.parse::<usize>().map_err(|e| format!("buffer length `{n}`: {e}"))?)),
            None => (s, None),
        };
        let arg = |name: &str| {
            gen.strip_prefix(name)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
        };
        let init = if gen == "zero" {
            BufferInit::Zero
        } else if gen == "iota" {
            BufferInit::Iota
        } else if let Some(v) = arg("const") {
            BufferInit::Const(parse_int(v)? as u32)
        } else if let Some(v) = arg("random") {
            BufferInit::Random(parse_int(v)?)
        } else if let Some(p) = arg("file") {
            BufferInit::Bytes(std::fs::read(p).map_err(|e| format!("{p}: {e}"))?)
        } else {
            return Err(format!(
                "unknown buffer generator `{gen}` (expected zero, iota, const(V), random(SEED) or file(PATH))"
            ));
        };
        Ok(BufferSpec { init, words })
    }
}

fn parse_int(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let r = match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse::<u64>(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

/// Scalar parameter value: an integer, or a float for float-typed parameters.
pub fn parse_scalar(s: &str, ty: ScalarType) -> Result<u64, String> {
    match ty {
        ScalarType::F32 => s.parse::<f32>().map(|f| f.to_bits() as u64).map_err(|e| format!("`{s}`: {e}")),
        ScalarType::F64 => s.parse::<f64>().map(f64::to_bits).map_err(|e| format!("`{s}`: {e}")),
        _ => match s.strip_prefix('-') {
            Some(n) => parse_int(n).map(|v| (v as i64).wrapping_neg() as u64),
            None => parse_int(s),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub grid: Dim3,
    pub block: Dim3,
    /// Raw bits per scalar parameter name.
    pub scalars: BTreeMap<String, u64>,
    pub buffers: BTreeMap<String, BufferSpec>,
}

/// Memory and launch configuration built from a [`Workload`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mem: MemoryImage,
    pub cfg: LaunchConfig,
    /// One entry per pointer parameter, in parameter order.
    pub buffers: Vec<(String, BufferId)>,
}

impl Workload {
    pub fn new(grid: Dim3, block: Dim3) -> Workload {
        Workload {
            grid,
            block,
            scalars: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn scalar(mut self, name: &str, bits: u64) -> Workload {
        self.scalars.insert(name.to_string(), bits);
        self
    }

    pub fn buffer(mut self, name: &str, init: BufferInit) -> Workload {
        self.buffers.insert(name.to_string(), BufferSpec { init, words: None });
        self
    }

    /// Bind every parameter of `k`. 64-bit integer parameters are buffers; other
    /// scalars default to `grid.x * block.x + 2` (integers) or 1.0 (floats).
    /// Buffers default to zero-filled and are sized to cover eight words per
    /// thread or the product of the integer scalars, whichever is larger.
    pub fn prepare(&self, k: &Kernel) -> Result<Prepared, String> {
        for name in self.scalars.keys().chain(self.buffers.keys()) {
            if k.param_index(name).is_none() {
                return Err(format!("kernel `{}` has no parameter `{name}`", k.name));
            }
        }
        let is_buffer = |ty: ScalarType| ty.bits() == 64 && !ty.is_float();
        let extent = self.grid.x as u64 * self.block.x as u64 + 2;
        let mut scalars = Vec::new();
        for p in k.params.iter().filter(|p| !is_buffer(p.ty)) {
            let v = match self.scalars.get(&p.name) {
                Some(&v) => v,
                None if p.ty == ScalarType::F32 => 1.0f32.to_bits() as u64,
                None if p.ty == ScalarType::F64 => 1.0f64.to_bits(),
                None => extent,
            };
            scalars.push((p.name.clone(), p.ty, v));
        }
        let threads = self.grid.count() * self.block.count();
        let product = scalars
            .iter()
            .filter(|(_, ty, _)| !ty.is_float())
            .fold(1u64, |acc, (_, _, v)| acc.saturating_mul(*v & 0xffff_ffff));
        let default_words = (8 * threads).max(product).min(MAX_DEFAULT_WORDS) as usize;

        let mut mem = MemoryImage::new();
        let mut cfg = LaunchConfig::new(self.grid, self.block);
        let mut buffers = Vec::new();
        for p in &k.params {
            if is_buffer(p.ty) {
                let spec = self.buffers.get(&p.name);
                let words = spec.and_then(|s| s.words).unwrap_or(default_words);
                let bytes = spec.map_or(BufferInit::Zero, |s| s.init.clone()).fill(words);
                let id = mem.alloc(bytes);
                buffers.push((p.name.clone(), id));
                cfg = cfg.param(&p.name, ParamValue::Buffer(id));
            } else {
                let (_, _, v) = scalars.iter().find(|(n, _, _)| *n == p.name).expect("bound above");
                cfg = cfg.param(&p.name, ParamValue::Scalar(*v));
            }
        }
        Ok(Prepared { mem, cfg, buffers })
    }
}

impl fmt::Display for BufferInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferInit::Zero => f.write_str("zero"),
            BufferInit::Iota => f.write_str("iota"),
            BufferInit::Const(v) => write!(f, "const({v})"),
            BufferInit::Random(s) => write!(f, "random({s})"),
            BufferInit::Bytes(b) => write!(f, "file({} bytes)", b.len()),
        }
    }
}
