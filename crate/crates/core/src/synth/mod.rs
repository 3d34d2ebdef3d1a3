//! Shuffle synthesis: find global loads whose value another lane of the same warp
//! has already loaded, and replace them with warp shuffles.

mod codegen;
mod detect;
mod plan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use codegen::{generate_code, RESERVED_PREFIX};
pub use detect::{detect_candidates, is_candidate_load};
pub use plan::select_plan;

use crate::ptx::StmtId;

/// What replaces a covered load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Shuffle plus the original load for corner lanes.
    #[default]
    Full,
    /// No exchange at all: the destination copies the thread's own source value.
    NoLoad,
    /// Shuffle only; corner lanes receive unspecified values.
    NoCorner,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoLoad => "no-load",
            Mode::NoCorner => "no-corner",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(Mode::Full),
            "no-load" => Ok(Mode::NoLoad),
            "no-corner" => Ok(Mode::NoCorner),
            other => Err(format!("unknown mode `{other}` (expected full, no-load or no-corner)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Value comes from a lower lane (N < 0).
    Up,
    /// Value comes from a higher lane (N > 0).
    Down,
    Same,
}

impl Direction {
    pub fn of(delta: i32) -> Direction {
        match delta.signum() {
            -1 => Direction::Up,
            1 => Direction::Down,
            _ => Direction::Same,
        }
    }
}

/// Load `dst` of lane `l` reads what load `src` read in lane `l + delta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleCandidate {
    pub dst: StmtId,
    pub src: StmtId,
    /// Body indices of the two loads.
    pub dst_index: usize,
    pub src_index: usize,
    pub delta: i32,
    /// Flows that contain the destination; all of them agree on `delta`.
    pub flows: usize,
}

impl ShuffleCandidate {
    pub fn direction(&self) -> Direction {
        Direction::of(self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edit {
    pub dst: StmtId,
    pub src: StmtId,
    pub dst_index: usize,
    pub src_index: usize,
    pub delta: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPlan {
    pub kernel: String,
    pub mode: Mode,
    /// At most one edit per destination, in body order.
    pub edits: Vec<Edit>,
}

impl SynthesisPlan {
    /// Edits that exchange values between lanes.
    pub fn shuffles(&self) -> usize {
        self.edits.iter().filter(|e| e.delta != 0).count()
    }

    /// Edits with N = 0, which become plain moves.
    pub fn moves(&self) -> usize {
        self.edits.len() - self.shuffles()
    }

    pub fn mean_abs_delta(&self) -> Option<f64> {
        let n = self.shuffles();
        (n > 0).then(|| {
            self.edits.iter().map(|e| e.delta.unsigned_abs() as f64).sum::<f64>() / n as f64
        })
    }

    /// Body indices of distinct source loads, ascending.
    pub fn sources(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.edits.iter().map(|e| e.src_index).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}
