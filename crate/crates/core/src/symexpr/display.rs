use std::fmt::Write;

use super::{mask, BinOp, ExprId, ExprPool, Node, Rel, SymOrigin, UnOp};

impl ExprPool {
    /// Render `e` in trace notation: hex constants, right-nested sums,
    /// `load(paramK)` for parameters, `loop(id, seq)` for loop values.
    /// Extensions are not shown.
    pub fn display(&self, e: ExprId) -> String {
        let mut s = String::new();
        self.fmt_expr(&mut s, e, false);
        s
    }

    fn strip_ext(&self, mut e: ExprId) -> ExprId {
        while let Node::Extend { arg, .. } = self.node(e) {
            e = *arg;
        }
        e
    }

    fn fmt_expr(&self, s: &mut String, e: ExprId, nested: bool) {
        let e = self.strip_ext(e);
        let w = self.width(e);
        match self.node(e) {
            Node::Const { bits, .. } => {
                let _ = write!(s, "0x{bits:x}");
            }
            Node::Sym { origin, .. } => match origin {
                SymOrigin::Param(k) => {
                    let _ = write!(s, "load(param{k})");
                }
                SymOrigin::Special(r) => s.push_str(&r.name()[1..]),
                SymOrigin::Havoc(n) => {
                    let _ = write!(s, "havoc{n}");
                }
                SymOrigin::Var(n) => {
                    let _ = write!(s, "v{n}");
                }
                SymOrigin::Shared(n) => {
                    let _ = write!(s, "shared{n}");
                }
            },
            Node::Load { addr, trace, .. } => {
                let _ = write!(s, "ld#{trace}[");
                self.fmt_expr(s, *addr, false);
                s.push(']');
            }
            Node::Loop { loop_id, seq, .. } => {
                let _ = write!(s, "loop({loop_id}, {seq})");
            }
            Node::FloatOp { tag, args, .. } => {
                let _ = write!(s, "{tag}(");
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        s.push_str(", ");
                    }
                    self.fmt_expr(s, *a, false);
                }
                s.push(')');
            }
            Node::Unary { op, arg } => {
                match op {
                    UnOp::Not if w == 1 => s.push('!'),
                    UnOp::Not => s.push('~'),
                    UnOp::Neg => s.push_str("(- "),
                }
                self.fmt_expr(s, *arg, true);
                if *op == UnOp::Neg {
                    s.push(')');
                }
            }
            Node::Binary {
                op: BinOp::Mul,
                lhs,
                rhs,
            } if self.as_const(*rhs) == Some(mask(w)) => {
                s.push_str("(- ");
                self.fmt_expr(s, *lhs, true);
                s.push(')');
            }
            Node::Binary { op, lhs, rhs } => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::MulWideS => "*ws",
                    BinOp::MulWideU => "*wu",
                    BinOp::And => "&",
                    BinOp::Or => "|",
                    BinOp::Xor => "^",
                    BinOp::Shl => "<<",
                    BinOp::Lshr => ">>u",
                    BinOp::Ashr => ">>s",
                };
                // Constant coefficients read better in front.
                let (l, r) = match (op, self.as_const(*rhs)) {
                    (BinOp::Mul, Some(_)) => (*rhs, *lhs),
                    _ => (*lhs, *rhs),
                };
                if nested {
                    s.push('(');
                }
                self.fmt_expr(s, l, true);
                let _ = write!(s, " {sym} ");
                self.fmt_expr(s, r, true);
                if nested {
                    s.push(')');
                }
            }
            Node::Compare { rel, lhs, rhs } => {
                let sym = match rel {
                    Rel::Eq => "==",
                    Rel::Ne => "!=",
                    Rel::Ltu => "<u",
                    Rel::Leu => "<=u",
                    Rel::Gtu => ">u",
                    Rel::Geu => ">=u",
                    Rel::Lts => "<s",
                    Rel::Les => "<=s",
                    Rel::Gts => ">s",
                    Rel::Ges => ">=s",
                };
                if nested {
                    s.push('(');
                }
                self.fmt_expr(s, *lhs, true);
                let _ = write!(s, " {sym} ");
                self.fmt_expr(s, *rhs, true);
                if nested {
                    s.push(')');
                }
            }
            Node::Extend { .. } => unreachable!("stripped above"),
            Node::Truncate { to, arg } => {
                let _ = write!(s, "trunc{to}(");
                self.fmt_expr(s, *arg, false);
                s.push(')');
            }
            Node::Ite { cond, then, els } => {
                s.push_str("ite(");
                self.fmt_expr(s, *cond, false);
                s.push_str(", ");
                self.fmt_expr(s, *then, false);
                s.push_str(", ");
                self.fmt_expr(s, *els, false);
                s.push(')');
            }
        }
    }
}
