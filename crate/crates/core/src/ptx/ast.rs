//! In-memory form of a PTX module restricted to the subset this tool understands.

use std::fmt;

/// Scalar PTX types as they appear in `.reg`, `.param` and instruction suffixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    U8,
    U16,
    U32,
    U64,
    S8,
    S16,
    S32,
    S64,
    B8,
    B16,
    B32,
    B64,
    F16,
    F32,
    F64,
    Pred,
}

impl ScalarType {
    pub fn parse(s: &str) -> Option<ScalarType> {
        let s = s.strip_prefix('.').unwrap_or(s);
        Some(match s {
            "u8" => ScalarType::U8,
            "u16" => ScalarType::U16,
            "u32" => ScalarType::U32,
            "u64" => ScalarType::U64,
            "s8" => ScalarType::S8,
            "s16" => ScalarType::S16,
            "s32" => ScalarType::S32,
            "s64" => ScalarType::S64,
            "b8" => ScalarType::B8,
            "b16" => ScalarType::B16,
            "b32" => ScalarType::B32,
            "b64" => ScalarType::B64,
            "f16" => ScalarType::F16,
            "f32" => ScalarType::F32,
            "f64" => ScalarType::F64,
            "pred" => ScalarType::Pred,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::U8 => "u8",
            ScalarType::U16 => "u16",
            ScalarType::U32 => "u32",
            ScalarType::U64 => "u64",
            ScalarType::S8 => "s8",
            ScalarType::S16 => "s16",
            ScalarType::S32 => "s32",
            ScalarType::S64 => "s64",
            ScalarType::B8 => "b8",
            ScalarType::B16 => "b16",
            ScalarType::B32 => "b32",
            ScalarType::B64 => "b64",
            ScalarType::F16 => "f16",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
            ScalarType::Pred => "pred",
        }
    }

    /// Width in bits; predicates are one bit wide.
    pub fn bits(self) -> u8 {
        match self {
            ScalarType::Pred => 1,
            ScalarType::U8 | ScalarType::S8 | ScalarType::B8 => 8,
            ScalarType::U16 | ScalarType::S16 | ScalarType::B16 | ScalarType::F16 => 16,
            ScalarType::U32 | ScalarType::S32 | ScalarType::B32 | ScalarType::F32 => 32,
            ScalarType::U64 | ScalarType::S64 | ScalarType::B64 | ScalarType::F64 => 64,
        }
    }

    pub fn bytes(self) -> u8 {
        (self.bits() / 8).max(1)
    }

    pub fn is_signed(self) -> bool {
        matches!(
            self,
            ScalarType::S8 | ScalarType::S16 | ScalarType::S32 | ScalarType::S64
        )
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F16 | ScalarType::F32 | ScalarType::F64)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, ".{}", self.name())
    }
}

/// Special (read-only, hardware-provided) registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpecialReg {
    TidX,
    TidY,
    TidZ,
    NtidX,
    NtidY,
    NtidZ,
    CtaidX,
    CtaidY,
    CtaidZ,
    NctaidX,
    NctaidY,
    NctaidZ,
    LaneId,
}

impl SpecialReg {
    pub const ALL: [SpecialReg; 13] = [
        SpecialReg::TidX,
        SpecialReg::TidY,
        SpecialReg::TidZ,
        SpecialReg::NtidX,
        SpecialReg::NtidY,
        SpecialReg::NtidZ,
        SpecialReg::CtaidX,
        SpecialReg::CtaidY,
        SpecialReg::CtaidZ,
        SpecialReg::NctaidX,
        SpecialReg::NctaidY,
        SpecialReg::NctaidZ,
        SpecialReg::LaneId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpecialReg::TidX => "%tid.x",
            SpecialReg::TidY => "%tid.y",
            SpecialReg::TidZ => "%tid.z",
            SpecialReg::NtidX => "%ntid.x",
            SpecialReg::NtidY => "%ntid.y",
            SpecialReg::NtidZ => "%ntid.z",
            SpecialReg::CtaidX => "%ctaid.x",
            SpecialReg::CtaidY => "%ctaid.y",
            SpecialReg::CtaidZ => "%ctaid.z",
            SpecialReg::NctaidX => "%nctaid.x",
            SpecialReg::NctaidY => "%nctaid.y",
            SpecialReg::NctaidZ => "%nctaid.z",
            SpecialReg::LaneId => "%laneid",
        }
    }

    pub fn parse(s: &str) -> Option<SpecialReg> {
        SpecialReg::ALL.iter().copied().find(|r| r.name() == s)
    }

    /// Inclusive value range guaranteed by the hardware launch limits.
    pub fn range(self) -> (u64, u64) {
        match self {
            SpecialReg::TidX | SpecialReg::TidY => (0, 1023),
            SpecialReg::TidZ => (0, 63),
            SpecialReg::NtidX | SpecialReg::NtidY => (1, 1024),
            SpecialReg::NtidZ => (1, 64),
            SpecialReg::CtaidX => (0, 0x7fff_fffe),
            SpecialReg::CtaidY | SpecialReg::CtaidZ => (0, 0xfffe),
            SpecialReg::NctaidX => (1, 0x7fff_ffff),
            SpecialReg::NctaidY | SpecialReg::NctaidZ => (1, 0xffff),
            SpecialReg::LaneId => (0, 31),
        }
    }
}

impl fmt::Display for SpecialReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImmKind {
    Int,
    /// `0fXXXXXXXX` single-precision bit pattern.
    F32,
    /// `0dXXXXXXXXXXXXXXXX` double-precision bit pattern (decimal literals are stored this way too).
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Immediate {
    pub bits: u64,
    pub kind: ImmKind,
}

impl Immediate {
    pub fn int(v: i64) -> Immediate {
        Immediate {
            bits: v as u64,
            kind: ImmKind::Int,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AddrBase {
    Register(String),
    /// Kernel parameter or variable name.
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Address {
    pub base: AddrBase,
    pub offset: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Register(String),
    Special(SpecialReg),
    Immediate(Immediate),
    Address(Address),
    /// Label or variable name used as a value (branch targets, `mov %rd, smem`).
    Symbol(String),
    /// Well-formed operand text outside the modelled subset (vectors, `%p|%q`, sinks).
    Raw(String),
}

impl Operand {
    pub fn reg(name: &str) -> Operand {
        Operand::Register(name.to_string())
    }

    pub fn imm(v: i64) -> Operand {
        Operand::Immediate(Immediate::int(v))
    }

    pub fn as_register(&self) -> Option<&str> {
        match self {
            Operand::Register(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Guard {
    pub negated: bool,
    pub pred: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct StmtId(pub u32);

impl fmt::Display for StmtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Instruction {
    pub id: StmtId,
    pub guard: Option<Guard>,
    /// Base mnemonic, e.g. `ld`.
    pub opcode: String,
    /// Every dotted suffix in source order, e.g. `["global", "nc", "f32"]`.
    pub suffixes: Vec<String>,
    pub operands: Vec<Operand>,
    /// Original statement text (without the trailing `;`) for untouched statements.
    pub raw: Option<String>,
    /// 1-based source line, 0 for synthesized statements.
    pub line: u32,
}

// Source text and line numbers are presentation only.
impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.guard == other.guard
            && self.opcode == other.opcode
            && self.suffixes == other.suffixes
            && self.operands == other.operands
    }
}

impl Eq for Instruction {}

impl Instruction {
    pub fn new(opcode: &str, suffixes: &[&str], operands: Vec<Operand>) -> Instruction {
        Instruction {
            id: StmtId(0),
            guard: None,
            opcode: opcode.to_string(),
            suffixes: suffixes.iter().map(|s| s.to_string()).collect(),
            operands,
            raw: None,
            line: 0,
        }
    }

    pub fn with_guard(mut self, negated: bool, pred: &str) -> Instruction {
        self.guard = Some(Guard {
            negated,
            pred: pred.to_string(),
        });
        self.raw = None;
        self
    }

    pub fn has(&self, suffix: &str) -> bool {
        self.suffixes.iter().any(|s| s == suffix)
    }

    /// Type suffixes in source order (`cvt.rn.f32.s32` gives `[f32, s32]`).
    pub fn types(&self) -> Vec<ScalarType> {
        self.suffixes
            .iter()
            .filter_map(|s| ScalarType::parse(s))
            .collect()
    }

    /// The last type suffix, which governs operand width for most opcodes.
    pub fn ty(&self) -> Option<ScalarType> {
        self.suffixes.iter().rev().find_map(|s| ScalarType::parse(s))
    }

    /// Non-type suffixes in source order.
    pub fn options(&self) -> Vec<&str> {
        self.suffixes
            .iter()
            .filter(|s| ScalarType::parse(s).is_none())
            .map(|s| s.as_str())
            .collect()
    }

    pub fn full_opcode(&self) -> String {
        let mut s = self.opcode.clone();
        for suf in &self.suffixes {
            s.push('.');
            s.push_str(suf);
        }
        s
    }

    pub fn is_branch(&self) -> bool {
        self.opcode == "bra"
    }

    pub fn is_exit(&self) -> bool {
        self.opcode == "ret" || self.opcode == "exit"
    }

    pub fn branch_target(&self) -> Option<&str> {
        if !self.is_branch() {
            return None;
        }
        match self.operands.first() {
            Some(Operand::Symbol(l)) => Some(l),
            _ => None,
        }
    }

    /// Memory state space for `ld`/`st`; generic addressing is reported as global.
    pub fn state_space(&self) -> Option<StateSpace> {
        if self.opcode != "ld" && self.opcode != "st" {
            return None;
        }
        Some(if self.has("param") {
            StateSpace::Param
        } else if self.has("shared") {
            StateSpace::Shared
        } else if self.has("local") {
            StateSpace::Local
        } else {
            StateSpace::Global
        })
    }

    pub fn is_global_load(&self) -> bool {
        self.opcode == "ld" && self.state_space() == Some(StateSpace::Global)
    }

    /// Registers written by this instruction.
    pub fn defs(&self) -> Vec<&str> {
        match self.opcode.as_str() {
            "st" | "bra" | "ret" | "exit" | "bar" | "barrier" | "membar" | "fence" => Vec::new(),
            _ => match self.operands.first() {
                Some(Operand::Register(r)) => vec![r.as_str()],
                Some(Operand::Raw(text)) => raw_registers(text),
                _ => Vec::new(),
            },
        }
    }

    /// Registers read by this instruction, including the guard predicate and address bases.
    pub fn uses(&self) -> Vec<&str> {
        let mut out = Vec::new();
        if let Some(g) = &self.guard {
            out.push(g.pred.as_str());
        }
        let skip_first = !self.defs().is_empty();
        for (i, op) in self.operands.iter().enumerate() {
            if i == 0 && skip_first {
                continue;
            }
            match op {
                Operand::Register(r) => out.push(r.as_str()),
                Operand::Address(Address {
                    base: AddrBase::Register(r),
                    ..
                }) => out.push(r.as_str()),
                Operand::Raw(text) => out.extend(raw_registers(text)),
                _ => {}
            }
        }
        out
    }
}

/// Register names inside raw operand text such as `{%f1, %f2}` or `%r5|%p1`.
pub fn raw_registers(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                // special register such as %tid.x
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                continue;
            }
            out.push(&text[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSpace {
    Global,
    Shared,
    Param,
    Local,
}

impl fmt::Display for StateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateSpace::Global => "global",
            StateSpace::Shared => "shared",
            StateSpace::Param => "param",
            StateSpace::Local => "local",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Instruction(Instruction),
    Label(String),
    /// Body directive passed through untouched (`.loc`, `.pragma`, `.local` declarations).
    Directive(String),
}

impl Statement {
    pub fn as_instruction(&self) -> Option<&Instruction> {
        match self {
            Statement::Instruction(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: ScalarType,
    pub align: Option<u32>,
    /// `.ptr .global .align 8` attribute text, if present.
    pub ptr_attrs: Option<String>,
    pub array_len: Option<u32>,
}

/// `.reg .b32 %r<6>;` declares `%r0`..`%r5`; `.reg .b32 %x;` has no count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegDecl {
    pub name: String,
    pub ty: ScalarType,
    pub count: Option<u32>,
}

impl RegDecl {
    pub fn declares(&self, reg: &str) -> bool {
        match self.count {
            None => self.name == reg,
            Some(n) => reg
                .strip_prefix(self.name.as_str())
                .and_then(|idx| {
                    if idx.is_empty() || (idx.len() > 1 && idx.starts_with('0')) {
                        None
                    } else {
                        idx.parse::<u32>().ok()
                    }
                })
                .is_some_and(|i| i < n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedDecl {
    pub name: String,
    pub align: Option<u32>,
    pub ty: ScalarType,
    /// Element count; `None` for a scalar.
    pub len: Option<u32>,
}

impl SharedDecl {
    pub fn size_bytes(&self) -> u64 {
        self.ty.bytes() as u64 * self.len.unwrap_or(1) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    /// Linkage directives preceding `.entry` (e.g. `.visible`).
    pub linkage: Vec<String>,
    pub params: Vec<Param>,
    /// Performance-tuning directives between the parameter list and the body.
    pub perf_directives: Vec<String>,
    pub reg_decls: Vec<RegDecl>,
    pub shared_decls: Vec<SharedDecl>,
    pub body: Vec<Statement>,
}

impl Kernel {
    pub fn register_type(&self, reg: &str) -> Option<ScalarType> {
        self.reg_decls
            .iter()
            .rev()
            .find(|d| d.declares(reg))
            .map(|d| d.ty)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.body.iter().filter_map(Statement::as_instruction)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.body
            .iter()
            .position(|s| matches!(s, Statement::Label(l) if l == label))
    }

    /// Number of global-memory load statements.
    pub fn global_load_count(&self) -> usize {
        self.instructions().filter(|i| i.is_global_load()).count()
    }

    /// Reassign statement ids in body order, starting from zero.
    pub fn renumber(&mut self) {
        let mut next = 0;
        for stmt in &mut self.body {
            if let Statement::Instruction(inst) = stmt {
                inst.id = StmtId(next);
                next += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PtxModule {
    pub version: (u32, u32),
    pub target: String,
    pub address_size: u32,
    pub kernels: Vec<Kernel>,
    /// Top-level directives outside the modelled subset, printed verbatim.
    pub verbatim_preamble: Vec<String>,
}

impl PtxModule {
    pub fn kernel(&self, name: &str) -> Option<&Kernel> {
        self.kernels.iter().find(|k| k.name == name)
    }
}
