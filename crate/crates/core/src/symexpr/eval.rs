use std::collections::HashMap;

use super::build::shift;
use super::{mask, sext, BinOp, ExprId, ExprPool, Node, SymError, SymOrigin, UnOp};

/// Concrete values for the uninterpreted leaves of an expression.
#[derive(Debug, Clone, Default)]
pub struct Valuation {
    pub syms: HashMap<SymOrigin, u64>,
    /// Keyed by load trace id.
    pub loads: HashMap<u32, u64>,
    /// Keyed by (loop id, sequence tag).
    pub loops: HashMap<(u32, u32), u64>,
    /// Values for float-op nodes, used unless `float_semantics` is set.
    pub floats: HashMap<ExprId, u64>,
    /// Compute float ops with IEEE arithmetic instead of reading `floats`.
    pub float_semantics: bool,
}

impl Valuation {
    pub fn new() -> Valuation {
        Valuation::default()
    }

    pub fn with_sym(mut self, origin: SymOrigin, v: u64) -> Valuation {
        self.syms.insert(origin, v);
        self
    }
}

impl ExprPool {
    /// Evaluate `e` with two's-complement semantics. Results are masked to the width of `e`.
    pub fn eval(&self, e: ExprId, v: &Valuation) -> Result<u64, SymError> {
        let mut vals: HashMap<ExprId, u64> = HashMap::new();
        for id in self.postorder(e) {
            let w = self.width(id);
            let get = |x: &ExprId| vals[x];
            let r = match self.node(id) {
                Node::Const { bits, .. } => *bits,
                Node::Sym { origin, .. } => *v
                    .syms
                    .get(origin)
                    .ok_or_else(|| SymError::MissingSymbol(format!("{origin:?}")))?,
                Node::Load { trace, .. } => *v
                    .loads
                    .get(trace)
                    .ok_or_else(|| SymError::MissingSymbol(format!("load trace {trace}")))?,
                Node::Loop { loop_id, seq, .. } => *v
                    .loops
                    .get(&(*loop_id, *seq))
                    .ok_or_else(|| SymError::MissingSymbol(format!("loop({loop_id}, {seq})")))?,
                Node::FloatOp { tag, args, .. } => {
                    let computed = if v.float_semantics {
                        let a: Vec<u64> = args.iter().map(get).collect();
                        float_eval(tag, &a)
                    } else {
                        None
                    };
                    match computed {
                        Some(x) => x,
                        None => *v
                            .floats
                            .get(&id)
                            .ok_or_else(|| SymError::MissingSymbol(format!("float op {tag}")))?,
                    }
                }
                Node::Unary { op, arg } => match op {
                    UnOp::Not => !get(arg),
                    UnOp::Neg => get(arg).wrapping_neg(),
                },
                Node::Binary { op, lhs, rhs } => {
                    let (a, b) = (get(lhs), get(rhs));
                    let wl = self.width(*lhs);
                    match op {
                        BinOp::Add => a.wrapping_add(b),
                        BinOp::Sub => a.wrapping_sub(b),
                        BinOp::Mul => a.wrapping_mul(b),
                        BinOp::MulWideS => sext(a, wl).wrapping_mul(sext(b, wl)),
                        BinOp::MulWideU => a.wrapping_mul(b),
                        BinOp::And => a & b,
                        BinOp::Or => a | b,
                        BinOp::Xor => a ^ b,
                        BinOp::Shl | BinOp::Lshr | BinOp::Ashr => shift(*op, a, b, wl),
                    }
                }
                Node::Compare { rel, lhs, rhs } => {
                    rel.holds(get(lhs), get(rhs), self.width(*lhs)) as u64
                }
                Node::Extend { signed, arg, .. } => {
                    let x = get(arg);
                    if *signed {
                        sext(x, self.width(*arg))
                    } else {
                        x
                    }
                }
                Node::Truncate { arg, .. } => get(arg),
                Node::Ite { cond, then, els } => {
                    if get(cond) != 0 {
                        get(then)
                    } else {
                        get(els)
                    }
                }
            };
            vals.insert(id, r & mask(w));
        }
        Ok(vals[&e])
    }
}

/// IEEE evaluation of a float-op tag such as `add.f32` or `fma.rn.f64`.
pub(crate) fn float_eval(tag: &str, a: &[u64]) -> Option<u64> {
    let mut parts = tag.split('.');
    let op = parts.next()?;
    let ty = tag.rsplit('.').next()?;
    let f32op = |f: &dyn Fn(&[f32]) -> f32| {
        let xs: Vec<f32> = a.iter().map(|&b| f32::from_bits(b as u32)).collect();
        f(&xs).to_bits() as u64
    };
    let f64op = |f: &dyn Fn(&[f64]) -> f64| {
        let xs: Vec<f64> = a.iter().map(|&b| f64::from_bits(b)).collect();
        f(&xs).to_bits()
    };
    macro_rules! both {
        ($f:expr) => {
            match ty {
                "f32" => Some(f32op(&$f)),
                "f64" => Some(f64op(&$f)),
                _ => None,
            }
        };
    }
    match (op, a.len()) {
        ("add", 2) => both!(|x| x[0] + x[1]),
        ("sub", 2) => both!(|x| x[0] - x[1]),
        ("mul", 2) => both!(|x| x[0] * x[1]),
        ("div", 2) => both!(|x| x[0] / x[1]),
        ("min", 2) => both!(|x| x[0].min(x[1])),
        ("max", 2) => both!(|x| x[0].max(x[1])),
        ("fma" | "mad", 3) => both!(|x| x[0].mul_add(x[1], x[2])),
        ("neg", 1) => both!(|x| -x[0]),
        ("abs", 1) => both!(|x| x[0].abs()),
        _ => None,
    }
}
