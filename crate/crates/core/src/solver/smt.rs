//! External solver speaking SMT-LIB2 (QF_BV) over a child-process pipe.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::Duration;

use crate::symexpr::{BinOp, ExprId, ExprPool, Node, Rel, UnOp};

use super::{UnknownReason, Verdict};

const END_MARKER: &str = "ptxasw-end";

/// How to launch the external solver.
#[derive(Debug, Clone)]
pub struct ExternalConfig {
    pub program: PathBuf,
    pub timeout: Duration,
}

impl ExternalConfig {
    fn args(&self) -> Vec<String> {
        let name = self
            .program
            .file_name()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let ms = self.timeout.as_millis().max(1);
        if name.contains("cvc") {
            vec![
                "--lang=smt2".into(),
                "--incremental".into(),
                format!("--tlimit-per={ms}"),
            ]
        } else {
            vec!["-in".into(), format!("-t:{ms}")]
        }
    }
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub(crate) struct External {
    config: ExternalConfig,
    proc: Option<Process>,
    /// Set after a failed launch; the process is not retried.
    broken: bool,
}

impl External {
    pub fn new(config: ExternalConfig) -> External {
        External {
            config,
            proc: None,
            broken: false,
        }
    }

    fn spawn(&mut self) -> Option<&mut Process> {
        if self.broken {
            return None;
        }
        if self.proc.is_none() {
            let spawned = Command::new(&self.config.program)
                .args(self.config.args())
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn();
            let mut child = match spawned {
                Ok(c) => c,
                Err(e) => {
                    log::warn!(
                        "external solver {} unavailable: {e}",
                        self.config.program.display()
                    );
                    self.broken = true;
                    return None;
                }
            };
            let mut stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    match line {
                        Ok(l) => {
                            if tx.send(l).is_err() {
                                break;
                            }
                        }
                        Err(_) => break,
                    }
                }
            });
            if writeln!(stdin, "(set-option :print-success false)\n(set-logic QF_BV)").is_err() {
                self.broken = true;
                return None;
            }
            self.proc = Some(Process {
                child,
                stdin,
                lines: rx,
            });
        }
        self.proc.as_mut()
    }

    /// Satisfiability of the conjunction of width-1 expressions `lits`.
    pub fn check(&mut self, pool: &ExprPool, lits: &[ExprId]) -> Verdict {
        let script = match encode(pool, lits) {
            Some(s) => s,
            None => return Verdict::Unknown(UnknownReason::Unsupported),
        };
        let timeout = self.config.timeout + Duration::from_millis(500);
        let Some(p) = self.spawn() else {
            return Verdict::Unknown(UnknownReason::Unsupported);
        };
        let msg = format!("(push 1)\n{script}(check-sat)\n(pop 1)\n(echo \"{END_MARKER}\")\n");
        if p.stdin.write_all(msg.as_bytes()).and_then(|_| p.stdin.flush()).is_err() {
            self.proc = None;
            return Verdict::Unknown(UnknownReason::Unsupported);
        }
        let mut verdict = Verdict::Unknown(UnknownReason::Unsupported);
        loop {
            match p.lines.recv_timeout(timeout) {
                Ok(line) => {
                    let t = line.trim().trim_matches('"');
                    match t {
                        "sat" => verdict = Verdict::Sat,
                        "unsat" => verdict = Verdict::Unsat,
                        "unknown" | "timeout" => {
                            verdict = Verdict::Unknown(UnknownReason::Timeout)
                        }
                        END_MARKER => return verdict,
                        other => log::debug!("solver: {other}"),
                    }
                }
                Err(_) => {
                    // Hung or dead: restart on the next query.
                    self.proc = None;
                    return Verdict::Unknown(UnknownReason::Timeout);
                }
            }
        }
    }
}

fn bv(width: u8, bits: u64) -> String {
    format!("(_ bv{bits} {width})")
}

/// SMT-LIB2 declarations and assertions for `lits`. Uninterpreted leaves become
/// fresh bitvector variables, one per distinct leaf node.
pub(crate) fn encode(pool: &ExprPool, lits: &[ExprId]) -> Option<String> {
    let mut out = String::new();
    let mut names: HashMap<ExprId, String> = HashMap::new();
    let mut declared = HashSet::new();
    for &l in lits {
        for id in pool.postorder(l) {
            if names.contains_key(&id) {
                continue;
            }
            let w = pool.width(id);
            let name = format!("e{}", id.0);
            let get = |x: &ExprId| names[x].clone();
            let body = match pool.node(id) {
                Node::Const { bits, .. } => bv(w, *bits),
                Node::Sym { .. } | Node::Load { .. } | Node::Loop { .. } | Node::FloatOp { .. } => {
                    if declared.insert(id) {
                        let _ = writeln!(out, "(declare-fun {name} () (_ BitVec {w}))");
                    }
                    names.insert(id, name);
                    continue;
                }
                Node::Unary { op, arg } => match op {
                    UnOp::Not => format!("(bvnot {})", get(arg)),
                    UnOp::Neg => format!("(bvneg {})", get(arg)),
                },
                Node::Binary { op, lhs, rhs } => {
                    let (wl, wr) = (pool.width(*lhs), pool.width(*rhs));
                    let (a, mut b) = (get(lhs), get(rhs));
                    match op {
                        BinOp::MulWideS | BinOp::MulWideU => {
                            let ext = if *op == BinOp::MulWideS { "sign_extend" } else { "zero_extend" };
                            format!("(bvmul ((_ {ext} {wl}) {a}) ((_ {ext} {wl}) {b}))")
                        }
                        BinOp::Shl | BinOp::Lshr | BinOp::Ashr => {
                            if wr > wl {
                                return None;
                            }
                            if wr < wl {
                                b = format!("((_ zero_extend {}) {b})", wl - wr);
                            }
                            let f = match op {
                                BinOp::Shl => "bvshl",
                                BinOp::Lshr => "bvlshr",
                                _ => "bvashr",
                            };
                            format!("({f} {a} {b})")
                        }
                        _ => {
                            let f = match op {
                                BinOp::Add => "bvadd",
                                BinOp::Sub => "bvsub",
                                BinOp::Mul => "bvmul",
                                BinOp::And => "bvand",
                                BinOp::Or => "bvor",
                                _ => "bvxor",
                            };
                            format!("({f} {a} {b})")
                        }
                    }
                }
                Node::Compare { rel, lhs, rhs } => {
                    let (a, b) = (get(lhs), get(rhs));
                    let p = match rel {
                        Rel::Eq => format!("(= {a} {b})"),
                        Rel::Ne => format!("(not (= {a} {b}))"),
                        Rel::Ltu => format!("(bvult {a} {b})"),
                        Rel::Leu => format!("(bvule {a} {b})"),
                        Rel::Gtu => format!("(bvugt {a} {b})"),
                        Rel::Geu => format!("(bvuge {a} {b})"),
                        Rel::Lts => format!("(bvslt {a} {b})"),
                        Rel::Les => format!("(bvsle {a} {b})"),
                        Rel::Gts => format!("(bvsgt {a} {b})"),
                        Rel::Ges => format!("(bvsge {a} {b})"),
                    };
                    format!("(ite {p} #b1 #b0)")
                }
                Node::Extend { signed, to, arg } => {
                    let ext = if *signed { "sign_extend" } else { "zero_extend" };
                    format!("((_ {ext} {}) {})", to - pool.width(*arg), get(arg))
                }
                Node::Truncate { to, arg } => format!("((_ extract {} 0) {})", to - 1, get(arg)),
                Node::Ite { cond, then, els } => {
                    format!("(ite (= {} #b1) {} {})", get(cond), get(then), get(els))
                }
            };
            let _ = writeln!(out, "(define-fun {name} () (_ BitVec {w}) {body})");
            names.insert(id, name);
        }
        let _ = writeln!(out, "(assert (= {} #b1))", names[&l]);
    }
    Some(out)
}
