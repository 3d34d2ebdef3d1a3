use std::collections::HashMap;

use crate::ptx::{Guard, Instruction, Kernel, Operand, RegDecl, ScalarType, SpecialReg, Statement};

use super::{Direction, Edit, Mode, SynthesisPlan};

/// Fresh register names start with this prefix, or with `%ptxasw<k>_` if the kernel already uses it.
pub const RESERVED_PREFIX: &str = "%ptxasw_";

const FULL_WARP: i64 = 0xffff_ffff;

fn fresh_prefix(k: &Kernel) -> String {
    let taken = |p: &str| {
        k.reg_decls.iter().any(|d| d.name.starts_with(p))
            || k.instructions().any(|i| {
                i.defs().iter().chain(i.uses().iter()).any(|r| r.starts_with(p))
            })
    };
    if !taken(RESERVED_PREFIX) {
        return RESERVED_PREFIX.to_string();
    }
    (1..)
        .map(|n| format!("%ptxasw{n}_"))
        .find(|p| !taken(p))
        .expect("unbounded search")
}

struct Names {
    prefix: String,
}

impl Names {
    fn warp_id(&self) -> String {
        format!("{}wid", self.prefix)
    }
    fn source(&self, k: usize) -> String {
        format!("{}s{k}", self.prefix)
    }
    fn mask(&self, j: usize) -> String {
        format!("{}m{j}", self.prefix)
    }
    fn out_of_range(&self, j: usize) -> String {
        format!("{}p{j}", self.prefix)
    }
    fn partial(&self, j: usize) -> String {
        format!("{}q{j}", self.prefix)
    }
}

fn inst(opcode: &str, suffixes: &[&str], operands: Vec<Operand>) -> Statement {
    Statement::Instruction(Instruction::new(opcode, suffixes, operands))
}

/// Apply `plan` to `k`. Control flow is untouched: corner lanes are handled by
/// predication, never by new branches or selects.
pub fn generate_code(k: &Kernel, plan: &SynthesisPlan) -> Kernel {
    let mut out = k.clone();
    if plan.edits.is_empty() {
        return out;
    }
    let names = Names {
        prefix: fresh_prefix(k),
    };
    let sources: HashMap<usize, usize> = plan
        .sources()
        .into_iter()
        .enumerate()
        .map(|(slot, idx)| (idx, slot))
        .collect();
    let edits: HashMap<usize, &Edit> = plan.edits.iter().map(|e| (e.dst_index, e)).collect();
    let corner = plan.mode == Mode::Full && plan.shuffles() > 0;

    let mut body = Vec::with_capacity(k.body.len() + 6 * plan.edits.len() + 2);
    if corner {
        let wid = Operand::reg(&names.warp_id());
        body.push(inst("mov", &["u32"], vec![wid.clone(), Operand::Special(SpecialReg::TidX)]));
        body.push(inst("and", &["b32"], vec![wid.clone(), wid, Operand::imm(31)]));
    }
    let mut shuffle_no = 0;
    for (idx, stmt) in k.body.iter().enumerate() {
        match edits.get(&idx) {
            Some(e) => {
                let load = stmt.as_instruction().expect("edit targets a load");
                let src = names.source(sources[&e.src_index]);
                if e.delta == 0 || plan.mode == Mode::NoLoad {
                    body.push(inst("mov", &["b32"], vec![load.operands[0].clone(), Operand::reg(&src)]));
                } else {
                    emit_shuffle(&mut body, &names, shuffle_no, load, &src, e.delta, plan.mode);
                    shuffle_no += 1;
                }
            }
            None => body.push(stmt.clone()),
        }
        if let Some(&slot) = sources.get(&idx) {
            let load = stmt.as_instruction().expect("source is a load");
            body.push(inst(
                "mov",
                &["b32"],
                vec![Operand::reg(&names.source(slot)), load.operands[0].clone()],
            ));
        }
    }
    out.body = body;

    let decl = |name: String, ty, count| RegDecl { name, ty, count };
    out.reg_decls.push(decl(format!("{}s", names.prefix), ScalarType::B32, Some(sources.len() as u32)));
    if shuffle_no > 0 {
        let n = Some(shuffle_no as u32);
        out.reg_decls.push(decl(format!("{}m", names.prefix), ScalarType::B32, n));
        if corner {
            out.reg_decls.push(decl(format!("{}p", names.prefix), ScalarType::Pred, n));
            out.reg_decls.push(decl(format!("{}q", names.prefix), ScalarType::Pred, n));
        }
    }
    if corner {
        out.reg_decls.push(decl(names.warp_id(), ScalarType::U32, None));
    }
    out.renumber();
    out
}

fn emit_shuffle(
    body: &mut Vec<Statement>,
    names: &Names,
    j: usize,
    load: &Instruction,
    src: &str,
    delta: i32,
    mode: Mode,
) {
    let mask = Operand::reg(&names.mask(j));
    let dist = delta.unsigned_abs() as i64;
    let (dir, clamp) = match Direction::of(delta) {
        Direction::Up => ("up", 0),
        _ => ("down", 0x1f),
    };
    body.push(inst("activemask", &["b32"], vec![mask.clone()]));
    if mode == Mode::Full {
        // Lanes without an in-range partner, and every lane of a partial warp, reload.
        let p = Operand::reg(&names.out_of_range(j));
        let q = Operand::reg(&names.partial(j));
        let wid = Operand::reg(&names.warp_id());
        body.push(if delta < 0 {
            inst("setp", &["lt", "u32"], vec![p.clone(), wid, Operand::imm(dist)])
        } else {
            inst("setp", &["gt", "u32"], vec![p.clone(), wid, Operand::imm(31 - dist)])
        });
        body.push(inst("setp", &["ne", "u32"], vec![q.clone(), mask.clone(), Operand::imm(FULL_WARP)]));
        body.push(inst("or", &["pred"], vec![p.clone(), p, q]));
    }
    body.push(inst(
        "shfl",
        &["sync", dir, "b32"],
        vec![load.operands[0].clone(), Operand::reg(src), Operand::imm(dist), Operand::imm(clamp), mask],
    ));
    if mode == Mode::Full {
        let mut reload = load.clone();
        reload.raw = None;
        reload.guard = Some(Guard {
            negated: false,
            pred: names.out_of_range(j),
        });
        body.push(Statement::Instruction(reload));
    }
}
