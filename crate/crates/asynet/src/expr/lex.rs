//! Tokenizer for the expression language.

use super::parse::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Tok {
    Num(f64),
    Ident(String),
    True,
    False,
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    AndAnd,
    OrOr,
    Bang,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    BangEq,
}

impl Tok {
    pub(super) fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::True => "`true`".into(),
            Tok::False => "`false`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrack => "`[`".into(),
            Tok::RBrack => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::AndAnd => "`&&`".into(),
            Tok::OrOr => "`||`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::BangEq => "`!=`".into(),
        }
    }
}

/// A token plus its byte offset in the source, for error reporting.
pub(super) struct Spanned {
    pub tok: Tok,
    pub at: usize,
}

pub(super) fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let at = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => push(&mut out, Tok::LParen, at, &mut i, 1),
            b')' => push(&mut out, Tok::RParen, at, &mut i, 1),
            b'[' => push(&mut out, Tok::LBrack, at, &mut i, 1),
            b']' => push(&mut out, Tok::RBrack, at, &mut i, 1),
            b',' => push(&mut out, Tok::Comma, at, &mut i, 1),
            b'+' => push(&mut out, Tok::Plus, at, &mut i, 1),
            b'-' => push(&mut out, Tok::Minus, at, &mut i, 1),
            b'*' => push(&mut out, Tok::Star, at, &mut i, 1),
            b'/' => push(&mut out, Tok::Slash, at, &mut i, 1),
            b'&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    push(&mut out, Tok::AndAnd, at, &mut i, 2);
                } else {
                    return Err(ParseError::at(at, "single `&`; conjunction is `&&`"));
                }
            }
            b'|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    push(&mut out, Tok::OrOr, at, &mut i, 2);
                } else {
                    return Err(ParseError::at(at, "single `|`; disjunction is `||`"));
                }
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    push(&mut out, Tok::BangEq, at, &mut i, 2);
                } else {
                    push(&mut out, Tok::Bang, at, &mut i, 1);
                }
            }
            b'<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    push(&mut out, Tok::Le, at, &mut i, 2);
                } else {
                    push(&mut out, Tok::Lt, at, &mut i, 1);
                }
            }
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    push(&mut out, Tok::Ge, at, &mut i, 2);
                } else {
                    push(&mut out, Tok::Gt, at, &mut i, 1);
                }
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    push(&mut out, Tok::EqEq, at, &mut i, 2);
                } else {
                    return Err(ParseError::at(at, "single `=`; equality is `==`"));
                }
            }
            b'0'..=b'9' => {
                let end = scan_number(bytes, i).map_err(|()| {
                    ParseError::at(at, "malformed numeric literal")
                })?;
                let text = &src[i..end];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ParseError::at(at, "malformed numeric literal"))?;
                if !v.is_finite() {
                    return Err(ParseError::at(at, "numeric literal overflows f64"));
                }
                out.push(Spanned { tok: Tok::Num(v), at });
                i = end;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = i + 1;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                let word = &src[i..end];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push(Spanned { tok, at });
                i = end;
            }
            _ => {
                return Err(ParseError::at(
                    at,
                    format!("unexpected character `{}`", &src[at..].chars().next().unwrap()),
                ));
            }
        }
    }
    Ok(out)
}

fn push(out: &mut Vec<Spanned>, tok: Tok, at: usize, i: &mut usize, len: usize) {
    out.push(Spanned { tok, at });
    *i += len;
}

/// `digits ('.' digits)? ([eE] [+-]? digits)?`
fn scan_number(bytes: &[u8], start: usize) -> Result<usize, ()> {
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return Err(());
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return Err(());
        }
    }
    Ok(i)
}
