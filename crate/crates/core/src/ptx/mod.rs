//! PTX subset: AST, parser and printer.

mod ast;
mod lexer;
mod parser;
mod printer;

pub use ast::*;
pub use parser::parse_module;
pub use printer::{immediate_text, instruction_text, operand_text, print_module};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: syntax error, expected {expected}")]
    Syntax {
        line: u32,
        column: u32,
        expected: String,
    },
    #[error("unsupported directive {0}")]
    UnsupportedDirective(String),
    #[error("unsupported PTX version {0} (need 6.0 or newer)")]
    UnsupportedVersion(String),
    #[error("duplicate kernel name {0}")]
    DuplicateKernel(String),
    #[error("line {line}: register {register} is not declared")]
    UndeclaredRegister { line: u32, register: String },
    #[error("line {line}: guard {register} is not a .pred register")]
    NonPredicateGuard { line: u32, register: String },
    #[error("line {line}: branch to unknown label {label}")]
    UnknownLabel { line: u32, label: String },
}

impl ParseError {
    /// Source line the error points at, when it has one.
    pub fn line(&self) -> Option<u32> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UndeclaredRegister { line, .. }
            | ParseError::NonPredicateGuard { line, .. }
            | ParseError::UnknownLabel { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Token stream of PTX text with comments and whitespace removed; used to compare
/// printed output with its input.
pub fn token_stream(src: &str) -> Result<Vec<String>, ParseError> {
    Ok(lexer::tokenize(src)?
        .iter()
        .map(|t| t.text(src).to_string())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn parses_add_kernel() {
        let m = parse_module(fixtures::ADD).unwrap();
        assert_eq!(m.kernels.len(), 1);
        let k = &m.kernels[0];
        assert_eq!(k.name, "add");
        assert_eq!(k.params.len(), 4);
        let ops: Vec<String> = k.instructions().map(|i| i.full_opcode()).collect();
        assert!(ops.contains(&"ld.global.u32".to_string()));
        assert!(ops.contains(&"st.global.f32".to_string()));
        assert!(ops.contains(&"ret".to_string()));
        assert!(k.label_index("$LABEL_EXIT").is_some());
        let bra = k.instructions().find(|i| i.is_branch()).unwrap();
        assert_eq!(bra.guard.as_ref().unwrap().pred, "%p1");
        assert_eq!(bra.branch_target(), Some("$LABEL_EXIT"));
    }

    #[test]
    fn preamble_only_module() {
        let m = parse_module("// comment only\n.version 7.6\n.target sm_70\n.address_size 64").unwrap();
        assert!(m.kernels.is_empty());
        assert_eq!(m.version, (7, 6));
        assert_eq!(m.address_size, 64);
        let printed = print_module(&m);
        assert_eq!(printed, ".version 7.6\n.target sm_70\n.address_size 64\n");
    }

    #[test]
    fn missing_address_operand_is_positioned() {
        let err = parse_module("ld.global.f32 %f1").unwrap_err();
        assert_eq!(err.line(), Some(1));

        let src = ".version 7.6\n.target sm_70\n.address_size 64\n.visible .entry k()\n{\n\t.reg .f32 %f<2>;\n\tld.global.f32 %f1;\n\tret;\n}\n";
        match parse_module(src).unwrap_err() {
            ParseError::Syntax { line, expected, .. } => {
                assert_eq!(line, 7);
                assert!(expected.contains("operand"), "{expected}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_func_and_old_versions() {
        let e = parse_module(".version 7.0\n.target sm_70\n.func (.reg .b32 r) f()\n{\nret;\n}\n")
            .unwrap_err();
        assert_eq!(e, ParseError::UnsupportedDirective(".func".into()));
        let e = parse_module(".version 5.0\n.target sm_70\n").unwrap_err();
        assert!(matches!(e, ParseError::UnsupportedVersion(_)));
    }

    #[test]
    fn undeclared_register_and_label() {
        let base = ".version 7.6\n.target sm_70\n.address_size 64\n.visible .entry k()\n{\n\t.reg .b32 %r<3>;\n";
        let e = parse_module(&format!("{base}\tmov.u32 %r7, 1;\n\tret;\n}}\n")).unwrap_err();
        assert!(matches!(e, ParseError::UndeclaredRegister { line: 7, .. }), "{e:?}");
        let e = parse_module(&format!("{base}\tbra $NOPE;\n}}\n")).unwrap_err();
        assert!(matches!(e, ParseError::UnknownLabel { .. }), "{e:?}");
        let e = parse_module(&format!("{base}\t@%r1 bra $L;\n$L:\n\tret;\n}}\n")).unwrap_err();
        assert!(matches!(e, ParseError::NonPredicateGuard { .. }), "{e:?}");
    }

    #[test]
    fn operand_forms() {
        let src = ".version 7.6\n.target sm_70\n.address_size 64\n.visible .entry k(.param .u64 p)\n{\n\t.reg .b64 %rd<3>;\n\t.reg .f32 %f<3>;\n\tld.param.u64 %rd1, [p+8];\n\tld.global.f32 %f1, [%rd1+-4];\n\tmov.f32 %f2, 0f3F800000;\n\tmov.b64 %rd2, -1;\n\tret;\n}\n";
        let m = parse_module(src).unwrap();
        let insts: Vec<&Instruction> = m.kernels[0].instructions().collect();
        assert_eq!(
            insts[0].operands[1],
            Operand::Address(Address {
                base: AddrBase::Symbol("p".into()),
                offset: 8
            })
        );
        assert_eq!(
            insts[1].operands[1],
            Operand::Address(Address {
                base: AddrBase::Register("%rd1".into()),
                offset: -4
            })
        );
        assert_eq!(
            insts[2].operands[1],
            Operand::Immediate(Immediate {
                bits: 0x3F80_0000,
                kind: ImmKind::F32
            })
        );
        assert_eq!(insts[3].operands[1], Operand::imm(-1));
    }

    #[test]
    fn statement_ids_increase_in_order() {
        let m = parse_module(fixtures::JACOBI).unwrap();
        let ids: Vec<u32> = m.kernels[0].instructions().map(|i| i.id.0).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let again = parse_module(&print_module(&m)).unwrap();
        let ids2: Vec<u32> = again.kernels[0].instructions().map(|i| i.id.0).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn corpus_round_trips() {
        for (name, src) in fixtures::ALL {
            let m = parse_module(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            let printed = print_module(&m);
            let again = parse_module(&printed).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(m, again, "{name}");
            assert_eq!(
                token_stream(src).unwrap(),
                token_stream(&printed).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn synthesized_instruction_prints_five_operand_shuffle() {
        let inst = Instruction::new(
            "shfl",
            &["sync", "up", "b32"],
            vec![
                Operand::reg("%f9"),
                Operand::reg("%s0"),
                Operand::imm(2),
                Operand::imm(0),
                Operand::reg("%m0"),
            ],
        );
        assert_eq!(instruction_text(&inst), "shfl.sync.up.b32 \t%f9, %s0, 2, 0, %m0");
    }

    #[test]
    fn opaque_instructions_survive() {
        let src = ".version 7.6\n.target sm_70\n.address_size 64\n.visible .entry k()\n{\n\t.reg .f32 %f<4>;\n\tmov.f32 %f1, 0f00000000;\n\tsqrt.rn.f32 %f2, %f1;\n\tmov.b32 {%f1, %f3}, %f2;\n\tret;\n}\n";
        let m = parse_module(src).unwrap();
        let printed = print_module(&m);
        assert!(printed.contains("sqrt.rn.f32 %f2, %f1;"));
        assert!(printed.contains("mov.b32 {%f1, %f3}, %f2;"));
        assert_eq!(parse_module(&printed).unwrap(), m);
    }
}
