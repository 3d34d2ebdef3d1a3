use std::fmt::Write;

use super::ast::*;

/// Render a module back to assembler-accepted PTX text.
///
/// Statements that still carry their original source text are printed from it,
/// so untouched code keeps its exact tokens.
pub fn print_module(m: &PtxModule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".version {}.{}", m.version.0, m.version.1);
    let _ = writeln!(out, ".target {}", m.target);
    let _ = writeln!(out, ".address_size {}", m.address_size);
    for line in &m.verbatim_preamble {
        out.push_str(line);
        out.push('\n');
    }
    for k in &m.kernels {
        out.push('\n');
        print_kernel(&mut out, k);
    }
    out
}

fn print_kernel(out: &mut String, k: &Kernel) {
    for l in &k.linkage {
        out.push_str(l);
        out.push(' ');
    }
    let _ = write!(out, ".entry {}(", k.name);
    for (i, p) in k.params.iter().enumerate() {
        out.push_str(if i == 0 { "\n\t" } else { ",\n\t" });
        out.push_str(".param ");
        if let Some(a) = p.align {
            let _ = write!(out, ".align {a} ");
        }
        let _ = write!(out, "{}", p.ty);
        if let Some(attrs) = &p.ptr_attrs {
            let _ = write!(out, " {attrs}");
        }
        let _ = write!(out, " {}", p.name);
        if let Some(n) = p.array_len {
            let _ = write!(out, "[{n}]");
        }
    }
    if !k.params.is_empty() {
        out.push('\n');
    }
    out.push_str(")\n");
    for d in &k.perf_directives {
        out.push_str(d);
        out.push('\n');
    }
    out.push_str("{\n");
    for d in &k.reg_decls {
        let _ = write!(out, "\t.reg {} \t{}", d.ty, d.name);
        if let Some(n) = d.count {
            let _ = write!(out, "<{n}>");
        }
        out.push_str(";\n");
    }
    for s in &k.shared_decls {
        out.push_str("\t.shared ");
        if let Some(a) = s.align {
            let _ = write!(out, ".align {a} ");
        }
        let _ = write!(out, "{} {}", s.ty, s.name);
        if let Some(n) = s.len {
            let _ = write!(out, "[{n}]");
        }
        out.push_str(";\n");
    }
    if !k.reg_decls.is_empty() || !k.shared_decls.is_empty() {
        out.push('\n');
    }
    for stmt in &k.body {
        match stmt {
            Statement::Label(l) => {
                let _ = writeln!(out, "{l}:");
            }
            Statement::Directive(d) => {
                let _ = writeln!(out, "\t{d}");
            }
            Statement::Instruction(inst) => {
                out.push('\t');
                out.push_str(&instruction_text(inst));
                out.push_str(";\n");
            }
        }
    }
    out.push_str("}\n");
}

/// Statement text without the trailing `;`.
pub fn instruction_text(inst: &Instruction) -> String {
    if let Some(raw) = &inst.raw {
        return raw.clone();
    }
    let mut s = String::new();
    if let Some(g) = &inst.guard {
        let _ = write!(s, "@{}{} ", if g.negated { "!" } else { "" }, g.pred);
    }
    s.push_str(&inst.full_opcode());
    for (i, op) in inst.operands.iter().enumerate() {
        s.push_str(if i == 0 { " \t" } else { ", " });
        s.push_str(&operand_text(op));
    }
    s
}

pub fn operand_text(op: &Operand) -> String {
    match op {
        Operand::Register(r) => r.clone(),
        Operand::Special(s) => s.name().to_string(),
        Operand::Immediate(imm) => immediate_text(imm),
        Operand::Address(a) => {
            let base = match &a.base {
                AddrBase::Register(r) => r.as_str(),
                AddrBase::Symbol(s) => s.as_str(),
            };
            if a.offset == 0 {
                format!("[{base}]")
            } else {
                format!("[{base}+{}]", a.offset)
            }
        }
        Operand::Symbol(s) => s.clone(),
        Operand::Raw(r) => r.clone(),
    }
}

pub fn immediate_text(imm: &Immediate) -> String {
    match imm.kind {
        ImmKind::F32 => format!("0f{:08X}", imm.bits as u32),
        ImmKind::F64 => format!("0d{:016X}", imm.bits),
        ImmKind::Int => {
            let v = imm.bits as i64;
            if (-65536..=65536).contains(&v) {
                v.to_string()
            } else {
                format!("0x{:x}", imm.bits)
            }
        }
    }
}
