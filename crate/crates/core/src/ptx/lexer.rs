use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokKind {
    /// Identifiers, opcodes (`ld.global.f32`), registers (`%r1`, `%tid.x`) and labels.
    Ident,
    /// `.version`, `.u64`, ...
    Directive,
    /// Numeric literal, kept as source text.
    Number,
    Str,
    Punct(char),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c == b'$' || c == b'%'
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c == b'.'
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let col = (i - line_start) as u32 + 1;
        if c == b'\n' {
            line += 1;
            i += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(ParseError::Syntax {
                        line,
                        column: col,
                        expected: "end of block comment".into(),
                    });
                }
                if bytes[i] == b'\n' {
                    line += 1;
                    line_start = i + 1;
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        let kind = if c == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphabetic()) {
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            TokKind::Directive
        } else if is_ident_start(c) {
            i += 1;
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            TokKind::Ident
        } else if c.is_ascii_digit() {
            i += 1;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric()
                    || bytes[i] == b'.'
                    || ((bytes[i] == b'+' || bytes[i] == b'-')
                        && matches!(bytes[i - 1], b'e' | b'E')
                        && !src[start..i].starts_with("0x")
                        && !src[start..i].starts_with("0f")
                        && !src[start..i].starts_with("0d")))
            {
                i += 1;
            }
            TokKind::Number
        } else if c == b'"' {
            i += 1;
            while i < bytes.len() && bytes[i] != b'"' {
                if bytes[i] == b'\n' {
                    return Err(ParseError::Syntax {
                        line,
                        column: col,
                        expected: "closing quote".into(),
                    });
                }
                i += 1;
            }
            i += 1;
            TokKind::Str
        } else if b",;{}[]()@!+-<>|:=".contains(&c) {
            i += 1;
            TokKind::Punct(c as char)
        } else {
            return Err(ParseError::Syntax {
                line,
                column: col,
                expected: format!("a token, found '{}'", c as char),
            });
        };
        out.push(Token {
            kind,
            start,
            end: i.min(bytes.len()),
            line,
            col,
        });
    }
    Ok(out)
}
