use std::collections::HashSet;

use super::ast::*;
use super::lexer::{tokenize, TokKind, Token};
use super::ParseError;

/// Parse PTX source text into a module.
pub fn parse_module(src: &str) -> Result<PtxModule, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        src,
        toks: tokens,
        pos: 0,
    };
    let module = p.module()?;
    validate(&module)?;
    Ok(module)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
}

const LINE_DIRECTIVES: [&str; 3] = [".file", ".loc", ".section"];

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_text(&self) -> Option<&'a str> {
        let src = self.src;
        self.toks.get(self.pos).map(|t| t.text(src))
    }

    fn peek_is(&self, text: &str) -> bool {
        self.peek_text() == Some(text)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, expected: impl Into<String>) -> ParseError {
        let (line, column) = match self.peek() {
            Some(t) => (t.line, t.col),
            None => match self.toks.last() {
                Some(t) => (t.line, t.col + (t.end - t.start) as u32),
                None => (1, 1),
            },
        };
        ParseError::Syntax {
            line,
            column,
            expected: expected.into(),
        }
    }

    fn expect(&mut self, text: &str) -> Result<Token, ParseError> {
        if self.peek_is(text) {
            Ok(self.bump().unwrap())
        } else {
            Err(self.err_here(format!("'{text}'")))
        }
    }

    fn expect_kind(&mut self, kind: TokKind, what: &str) -> Result<Token, ParseError> {
        match self.peek() {
            Some(t) if t.kind == kind => Ok(self.bump().unwrap()),
            _ => Err(self.err_here(what)),
        }
    }

    fn number_u32(&mut self, what: &str) -> Result<u32, ParseError> {
        let t = self.expect_kind(TokKind::Number, what)?;
        let text = t.text(self.src);
        parse_int(text)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or(ParseError::Syntax {
                line: t.line,
                column: t.col,
                expected: what.to_string(),
            })
    }

    /// Raw text from the current token up to and including the next `;`.
    fn raw_until_semicolon(&mut self) -> Result<String, ParseError> {
        let start = self.peek().map(|t| t.start).unwrap_or(self.src.len());
        loop {
            match self.bump() {
                Some(t) if t.kind == TokKind::Punct(';') => {
                    return Ok(self.src[start..t.end].to_string());
                }
                Some(_) => {}
                None => return Err(self.err_here("';'")),
            }
        }
    }

    /// Raw text from the current token to the end of its source line.
    fn raw_line(&mut self) -> String {
        let first = self.peek().cloned().expect("caller checked a token exists");
        let end = self.src[first.start..]
            .find('\n')
            .map(|o| first.start + o)
            .unwrap_or(self.src.len());
        while self.peek().is_some_and(|t| t.start < end) {
            self.pos += 1;
        }
        self.src[first.start..end].trim_end().to_string()
    }

    fn module(&mut self) -> Result<PtxModule, ParseError> {
        let mut version = None;
        let mut target = None;
        let mut address_size = None;
        let mut kernels = Vec::new();
        let mut preamble = Vec::new();
        let mut linkage: Vec<String> = Vec::new();
        while let Some(tok) = self.peek().cloned() {
            let text = tok.text(self.src);
            match (tok.kind.clone(), text) {
                (TokKind::Directive, ".version") => {
                    self.bump();
                    let t = self.expect_kind(TokKind::Number, "version number")?;
                    let v = t.text(self.src);
                    let parsed = v.split_once('.').and_then(|(a, b)| {
                        Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?))
                    });
                    let (major, minor) = parsed.ok_or(ParseError::Syntax {
                        line: t.line,
                        column: t.col,
                        expected: "version of the form MAJOR.MINOR".into(),
                    })?;
                    if major < 6 {
                        return Err(ParseError::UnsupportedVersion(v.to_string()));
                    }
                    version = Some((major, minor));
                }
                (TokKind::Directive, ".target") => {
                    self.bump();
                    let mut parts = vec![self
                        .expect_kind(TokKind::Ident, "target name")?
                        .text(self.src)
                        .to_string()];
                    while self.peek_is(",") {
                        self.bump();
                        parts.push(
                            self.expect_kind(TokKind::Ident, "target option")?
                                .text(self.src)
                                .to_string(),
                        );
                    }
                    target = Some(parts.join(", "));
                }
                (TokKind::Directive, ".address_size") => {
                    self.bump();
                    let bits = self.number_u32("address size")?;
                    if bits != 32 && bits != 64 {
                        return Err(ParseError::Syntax {
                            line: tok.line,
                            column: tok.col,
                            expected: "address size 32 or 64".into(),
                        });
                    }
                    address_size = Some(bits);
                }
                (TokKind::Directive, ".visible" | ".weak") => {
                    self.bump();
                    linkage.push(text.to_string());
                }
                (TokKind::Directive, ".entry") => {
                    self.bump();
                    let k = self.kernel(std::mem::take(&mut linkage))?;
                    kernels.push(k);
                }
                (TokKind::Directive, ".func") => {
                    return Err(ParseError::UnsupportedDirective(".func".into()));
                }
                (TokKind::Directive, d) if LINE_DIRECTIVES.contains(&d) => {
                    preamble.push(self.raw_line());
                }
                (TokKind::Directive, _) => {
                    let mut raw = linkage.join(" ");
                    if !raw.is_empty() {
                        raw.push(' ');
                    }
                    linkage.clear();
                    raw.push_str(&self.raw_until_semicolon()?);
                    preamble.push(raw);
                }
                _ => return Err(self.err_here("a top-level directive")),
            }
        }
        if !linkage.is_empty() {
            return Err(self.err_here("'.entry'"));
        }
        let version = version.ok_or_else(|| self.err_here("'.version'"))?;
        let target = target.ok_or_else(|| self.err_here("'.target'"))?;
        Ok(PtxModule {
            version,
            target,
            address_size: address_size.unwrap_or(32),
            kernels,
            verbatim_preamble: preamble,
        })
    }

    fn kernel(&mut self, linkage: Vec<String>) -> Result<Kernel, ParseError> {
        let name = self
            .expect_kind(TokKind::Ident, "kernel name")?
            .text(self.src)
            .to_string();
        let mut params = Vec::new();
        if self.peek_is("(") {
            self.bump();
            if !self.peek_is(")") {
                loop {
                    params.push(self.param()?);
                    if self.peek_is(",") {
                        self.bump();
                        continue;
                    }
                    break;
                }
            }
            self.expect(")")?;
        }
        let mut perf = Vec::new();
        while self
            .peek()
            .is_some_and(|t| t.kind == TokKind::Directive)
        {
            let first = self.bump().unwrap();
            let mut end = first.end;
            while let Some(t) = self.peek() {
                if t.kind == TokKind::Number || t.kind == TokKind::Punct(',') {
                    end = t.end;
                    self.pos += 1;
                } else {
                    break;
                }
            }
            perf.push(self.src[first.start..end].to_string());
        }
        self.expect("{")?;
        let mut kernel = Kernel {
            name,
            linkage,
            params,
            perf_directives: perf,
            reg_decls: Vec::new(),
            shared_decls: Vec::new(),
            body: Vec::new(),
        };
        self.body(&mut kernel)?;
        kernel.renumber();
        Ok(kernel)
    }

    fn param(&mut self) -> Result<Param, ParseError> {
        self.expect(".param")?;
        let mut align = None;
        let mut ty = None;
        let mut ptr_attrs: Option<String> = None;
        while let Some(t) = self.peek().cloned() {
            if t.kind != TokKind::Directive {
                break;
            }
            let text = t.text(self.src);
            self.bump();
            if text == ".align" {
                let n = self.number_u32("alignment")?;
                match ptr_attrs.as_mut() {
                    Some(attrs) => attrs.push_str(&format!(" .align {n}")),
                    None => align = Some(n),
                }
            } else if text == ".ptr" {
                ptr_attrs = Some(".ptr".into());
            } else if let (Some(attrs), true) = (
                ptr_attrs.as_mut(),
                matches!(text, ".global" | ".shared" | ".const" | ".local"),
            ) {
                attrs.push(' ');
                attrs.push_str(text);
            } else if let Some(st) = ScalarType::parse(text) {
                ty = Some(st);
            } else {
                return Err(ParseError::Syntax {
                    line: t.line,
                    column: t.col,
                    expected: "parameter type or attribute".into(),
                });
            }
        }
        let ty = ty.ok_or_else(|| self.err_here("parameter type"))?;
        let name = self
            .expect_kind(TokKind::Ident, "parameter name")?
            .text(self.src)
            .to_string();
        let mut array_len = None;
        if self.peek_is("[") {
            self.bump();
            array_len = Some(self.number_u32("array length")?);
            self.expect("]")?;
        }
        Ok(Param {
            name,
            ty,
            align,
            ptr_attrs,
            array_len,
        })
    }

    fn body(&mut self, k: &mut Kernel) -> Result<(), ParseError> {
        let mut depth = 0usize;
        loop {
            let tok = match self.peek().cloned() {
                Some(t) => t,
                None => return Err(self.err_here("'}'")),
            };
            let text = tok.text(self.src);
            match tok.kind {
                TokKind::Punct('}') => {
                    self.bump();
                    if depth == 0 {
                        return Ok(());
                    }
                    depth -= 1;
                }
                TokKind::Punct('{') => {
                    self.bump();
                    depth += 1;
                }
                TokKind::Directive if text == ".reg" => {
                    self.bump();
                    self.reg_decl(k)?;
                }
                TokKind::Directive if text == ".shared" => {
                    self.bump();
                    let d = self.shared_decl()?;
                    k.shared_decls.push(d);
                }
                TokKind::Directive if LINE_DIRECTIVES.contains(&text) => {
                    let raw = self.raw_line();
                    k.body.push(Statement::Directive(raw));
                }
                TokKind::Directive => {
                    let raw = self.raw_until_semicolon()?;
                    k.body.push(Statement::Directive(raw));
                }
                TokKind::Ident
                    if self
                        .toks
                        .get(self.pos + 1)
                        .is_some_and(|t| t.kind == TokKind::Punct(':')) =>
                {
                    self.bump();
                    self.bump();
                    k.body.push(Statement::Label(text.to_string()));
                }
                TokKind::Ident | TokKind::Punct('@') => {
                    let inst = self.instruction()?;
                    k.body.push(Statement::Instruction(inst));
                }
                _ => return Err(self.err_here("an instruction, label or declaration")),
            }
        }
    }

    fn reg_decl(&mut self, k: &mut Kernel) -> Result<(), ParseError> {
        let t = self.expect_kind(TokKind::Directive, "register type")?;
        let ty = ScalarType::parse(t.text(self.src)).ok_or(ParseError::Syntax {
            line: t.line,
            column: t.col,
            expected: "register type".into(),
        })?;
        loop {
            let name = self
                .expect_kind(TokKind::Ident, "register name")?
                .text(self.src)
                .to_string();
            let mut count = None;
            if self.peek_is("<") {
                self.bump();
                count = Some(self.number_u32("register count")?);
                self.expect(">")?;
            }
            k.reg_decls.push(RegDecl { name, ty, count });
            if self.peek_is(",") {
                self.bump();
                continue;
            }
            break;
        }
        self.expect(";")?;
        Ok(())
    }

    fn shared_decl(&mut self) -> Result<SharedDecl, ParseError> {
        let mut align = None;
        let mut ty = None;
        while self
            .peek()
            .is_some_and(|t| t.kind == TokKind::Directive)
        {
            let t = self.bump().unwrap();
            let text = t.text(self.src);
            if text == ".align" {
                align = Some(self.number_u32("alignment")?);
            } else if let Some(st) = ScalarType::parse(text) {
                ty = Some(st);
            } else {
                return Err(ParseError::UnsupportedDirective(format!(".shared {text}")));
            }
        }
        let ty = ty.ok_or_else(|| self.err_here("shared variable type"))?;
        let name = self
            .expect_kind(TokKind::Ident, "shared variable name")?
            .text(self.src)
            .to_string();
        let mut len = None;
        if self.peek_is("[") {
            self.bump();
            len = Some(self.number_u32("array length")?);
            self.expect("]")?;
        }
        self.expect(";")?;
        Ok(SharedDecl {
            name,
            align,
            ty,
            len,
        })
    }

    fn instruction(&mut self) -> Result<Instruction, ParseError> {
        let first = self.peek().cloned().unwrap();
        let mut guard = None;
        if self.peek_is("@") {
            self.bump();
            let negated = if self.peek_is("!") {
                self.bump();
                true
            } else {
                false
            };
            let pred = self
                .expect_kind(TokKind::Ident, "guard predicate register")?
                .text(self.src)
                .to_string();
            guard = Some(Guard { negated, pred });
        }
        let op_tok = self.expect_kind(TokKind::Ident, "opcode")?;
        let full = op_tok.text(self.src);
        let mut parts = full.split('.');
        let opcode = parts.next().unwrap_or_default().to_string();
        let suffixes: Vec<String> = parts.map(str::to_string).collect();
        if suffixes.iter().any(String::is_empty) {
            return Err(ParseError::Syntax {
                line: op_tok.line,
                column: op_tok.col,
                expected: "opcode suffix".into(),
            });
        }

        // Split operands on top-level commas.
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut depth = 0i32;
        let mut span_start = self.pos;
        let end_tok;
        loop {
            let t = match self.peek().cloned() {
                Some(t) => t,
                None => return Err(self.err_here("';'")),
            };
            match t.kind {
                TokKind::Punct('[') | TokKind::Punct('{') => depth += 1,
                TokKind::Punct(']') | TokKind::Punct('}') => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(self.err_here("';'"));
                    }
                }
                TokKind::Punct(',') if depth == 0 => {
                    spans.push((span_start, self.pos));
                    span_start = self.pos + 1;
                }
                TokKind::Punct(';') if depth == 0 => {
                    if span_start < self.pos || !spans.is_empty() {
                        spans.push((span_start, self.pos));
                    }
                    end_tok = t;
                    self.bump();
                    break;
                }
                TokKind::Directive | TokKind::Punct('@') if depth == 0 => {
                    return Err(self.err_here("';'"));
                }
                TokKind::Punct(';') => return Err(self.err_here("closing bracket")),
                _ => {}
            }
            if t.line != op_tok.line && depth == 0 && t.kind == TokKind::Ident {
                // A statement never continues onto a line that starts a new opcode or label.
                if self
                    .toks
                    .get(self.pos + 1)
                    .is_some_and(|n| n.kind == TokKind::Punct(':'))
                {
                    return Err(self.err_here("';'"));
                }
            }
            self.bump();
        }
        let mut operands = Vec::with_capacity(spans.len());
        for (a, b) in spans {
            if a >= b {
                let t = &self.toks[a.min(self.toks.len() - 1)];
                return Err(ParseError::Syntax {
                    line: t.line,
                    column: t.col,
                    expected: "operand".into(),
                });
            }
            operands.push(self.operand(a, b)?);
        }
        let inst = Instruction {
            id: StmtId(0),
            guard,
            opcode,
            suffixes,
            operands,
            raw: Some(self.src[first.start..end_tok.start].trim_end().to_string()),
            line: first.line,
        };
        check_shape(&inst, &op_tok)?;
        Ok(inst)
    }

    fn operand(&self, a: usize, b: usize) -> Result<Operand, ParseError> {
        let toks = &self.toks[a..b];
        let src = self.src;
        let raw = || Operand::Raw(src[toks[0].start..toks[toks.len() - 1].end].to_string());
        let first = &toks[0];
        let text = first.text(src);
        if toks.len() == 1 {
            return Ok(match first.kind {
                TokKind::Ident if text.starts_with('%') => match SpecialReg::parse(text) {
                    Some(s) => Operand::Special(s),
                    None if text.contains('.') => raw(),
                    None => Operand::Register(text.to_string()),
                },
                TokKind::Ident if text == "_" => raw(),
                TokKind::Ident => Operand::Symbol(text.to_string()),
                TokKind::Number => match parse_immediate(text, false) {
                    Some(imm) => Operand::Immediate(imm),
                    None => {
                        return Err(ParseError::Syntax {
                            line: first.line,
                            column: first.col,
                            expected: "numeric literal".into(),
                        })
                    }
                },
                _ => raw(),
            });
        }
        if toks.len() == 2 && first.kind == TokKind::Punct('-') && toks[1].kind == TokKind::Number
        {
            if let Some(imm) = parse_immediate(toks[1].text(src), true) {
                return Ok(Operand::Immediate(imm));
            }
        }
        if first.kind == TokKind::Punct('[') && toks[toks.len() - 1].kind == TokKind::Punct(']') {
            if let Some(addr) = self.address(&toks[1..toks.len() - 1]) {
                return Ok(Operand::Address(addr));
            }
        }
        Ok(raw())
    }

    fn address(&self, toks: &[Token]) -> Option<Address> {
        let src = self.src;
        let base_tok = toks.first()?;
        if base_tok.kind != TokKind::Ident {
            return None;
        }
        let text = base_tok.text(src);
        let base = if text.starts_with('%') {
            if text.contains('.') {
                return None;
            }
            AddrBase::Register(text.to_string())
        } else {
            AddrBase::Symbol(text.to_string())
        };
        let offset: i64 = match &toks[1..] {
            [] => 0,
            [plus, num] if plus.kind == TokKind::Punct('+') && num.kind == TokKind::Number => {
                parse_int(num.text(src))? as i64
            }
            [plus, minus, num]
                if plus.kind == TokKind::Punct('+')
                    && minus.kind == TokKind::Punct('-')
                    && num.kind == TokKind::Number =>
            {
                -(parse_int(num.text(src))? as i64)
            }
            [minus, num] if minus.kind == TokKind::Punct('-') && num.kind == TokKind::Number => {
                -(parse_int(num.text(src))? as i64)
            }
            _ => return None,
        };
        let offset = i32::try_from(offset).ok()?;
        Some(Address { base, offset })
    }
}

fn parse_int(text: &str) -> Option<u64> {
    let t = text.strip_suffix('U').unwrap_or(text);
    if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        t.parse::<u64>().ok()
    }
}

pub(crate) fn parse_immediate(text: &str, negative: bool) -> Option<Immediate> {
    let lower = text.to_ascii_lowercase();
    if let Some(h) = lower.strip_prefix("0f") {
        if h.len() != 8 {
            return None;
        }
        let bits = u32::from_str_radix(h, 16).ok()?;
        let bits = if negative { bits ^ 0x8000_0000 } else { bits };
        return Some(Immediate {
            bits: bits as u64,
            kind: ImmKind::F32,
        });
    }
    if let Some(h) = lower.strip_prefix("0d") {
        if h.len() != 16 {
            return None;
        }
        let bits = u64::from_str_radix(h, 16).ok()?;
        let bits = if negative { bits ^ (1 << 63) } else { bits };
        return Some(Immediate {
            bits,
            kind: ImmKind::F64,
        });
    }
    if !lower.starts_with("0x") && (lower.contains('.') || lower.contains('e')) {
        let v: f64 = lower.parse().ok()?;
        let v = if negative { -v } else { v };
        return Some(Immediate {
            bits: v.to_bits(),
            kind: ImmKind::F64,
        });
    }
    let v = parse_int(text)?;
    Some(Immediate {
        bits: if negative { v.wrapping_neg() } else { v },
        kind: ImmKind::Int,
    })
}

/// Operand-count and operand-kind checks for the modelled opcodes.
fn check_shape(inst: &Instruction, op_tok: &Token) -> Result<(), ParseError> {
    let n = inst.operands.len();
    let expected: Option<&[usize]> = match inst.opcode.as_str() {
        "mov" | "not" | "neg" | "abs" | "cvt" | "cvta" | "ld" | "st" => Some(&[2]),
        "add" | "sub" | "mul" | "and" | "or" | "xor" | "shl" | "shr" | "min" | "max" => {
            Some(&[3])
        }
        "mad" | "fma" | "selp" => Some(&[4]),
        "setp" => Some(&[3, 4]),
        "bra" | "activemask" => Some(&[1]),
        "ret" | "exit" => Some(&[0]),
        "shfl" => Some(&[4, 5]),
        "bar" => Some(&[1, 2]),
        _ => None,
    };
    let err = |what: String| ParseError::Syntax {
        line: op_tok.line,
        column: op_tok.col,
        expected: what,
    };
    if let Some(counts) = expected {
        if !counts.contains(&n) {
            return Err(err(format!(
                "{} operand(s) for '{}'",
                counts
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" or "),
                inst.opcode
            )));
        }
    }
    match inst.opcode.as_str() {
        "ld" if !matches!(inst.operands[1], Operand::Address(_)) => {
            Err(err("address operand for 'ld'".into()))
        }
        "st" if !matches!(inst.operands[0], Operand::Address(_)) => {
            Err(err("address operand for 'st'".into()))
        }
        "bra" if !matches!(inst.operands[0], Operand::Symbol(_)) => {
            Err(err("label operand for 'bra'".into()))
        }
        _ => Ok(()),
    }
}

fn validate(m: &PtxModule) -> Result<(), ParseError> {
    let mut names = HashSet::new();
    for k in &m.kernels {
        if !names.insert(k.name.as_str()) {
            return Err(ParseError::DuplicateKernel(k.name.clone()));
        }
        let labels: HashSet<&str> = k
            .body
            .iter()
            .filter_map(|s| match s {
                Statement::Label(l) => Some(l.as_str()),
                _ => None,
            })
            .collect();
        for inst in k.instructions() {
            if let Some(g) = &inst.guard {
                match k.register_type(&g.pred) {
                    Some(ScalarType::Pred) => {}
                    Some(_) => {
                        return Err(ParseError::NonPredicateGuard {
                            line: inst.line,
                            register: g.pred.clone(),
                        })
                    }
                    None => {
                        return Err(ParseError::UndeclaredRegister {
                            line: inst.line,
                            register: g.pred.clone(),
                        })
                    }
                }
            }
            for r in inst.defs().into_iter().chain(inst.uses()) {
                if k.register_type(r).is_none() {
                    return Err(ParseError::UndeclaredRegister {
                        line: inst.line,
                        register: r.to_string(),
                    });
                }
            }
            if let Some(target) = inst.branch_target() {
                if !labels.contains(target) {
                    return Err(ParseError::UnknownLabel {
                        line: inst.line,
                        label: target.to_string(),
                    });
                }
            }
        }
    }
    Ok(())
}
