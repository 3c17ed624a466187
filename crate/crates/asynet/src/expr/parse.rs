//! Recursive-descent parser.
//!
//! Arithmetic and boolean syntax share one precedence tower
//! (`|| < && < ! < comparison < +- < */ < unary - < atoms`), are parsed into
//! a joint tree, and are separated by type afterwards, so parenthesized
//! predicates and parenthesized arithmetic both work without backtracking.

use super::lex::{tokenize, Spanned, Tok};
use super::{BinOp, CmpOp, Expr, Func, Pred};

/// A syntax error with the byte offset it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{msg} (at byte {at})")]
pub struct ParseError {
    pub at: usize,
    pub msg: String,
}

impl ParseError {
    pub(super) fn at(at: usize, msg: impl Into<String>) -> ParseError {
        ParseError {
            at,
            msg: msg.into(),
        }
    }
}

/// Parse an arithmetic expression. Boolean syntax is rejected with an error.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let syn = p.or_level()?;
    p.expect_end()?;
    syn.into_expr(0)
}

/// Parse a predicate. A bare arithmetic expression is rejected: a predicate
/// must be a comparison, a boolean combination, or `true`/`false`.
pub fn parse_pred(src: &str) -> Result<Pred, ParseError> {
    let mut p = Parser::new(src)?;
    let syn = p.or_level()?;
    p.expect_end()?;
    syn.into_pred(0)
}

/// Parse result before arithmetic and boolean layers are separated.
enum Syn {
    Expr(Expr),
    Pred(Pred),
}

impl Syn {
    fn into_expr(self, at: usize) -> Result<Expr, ParseError> {
        match self {
            Syn::Expr(e) => Ok(e),
            Syn::Pred(_) => Err(ParseError::at(
                at,
                "condition used where a numeric expression was expected",
            )),
        }
    }

    fn into_pred(self, at: usize) -> Result<Pred, ParseError> {
        match self {
            Syn::Pred(p) => Ok(p),
            Syn::Expr(_) => Err(ParseError::at(
                at,
                "numeric expression used where a condition was expected \
                 (compare it with one of `< <= == >= > !=`)",
            )),
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Parser, ParseError> {
        let toks = tokenize(src)?;
        Ok(Parser {
            pos: 0,
            len: src.len(),
            toks,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |s| s.at)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(ParseError::at(
                self.at(),
                format!("unexpected {} after complete expression", t.describe()),
            )),
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::at(
                self.at(),
                format!("expected {what}, found {}", t.describe()),
            ),
            None => ParseError::at(self.at(), format!("expected {what}, found end of input")),
        }
    }

    fn or_level(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        let mut lhs = self.and_level()?;
        while self.eat(&Tok::OrOr) {
            let l = lhs.into_pred(at)?;
            let r_at = self.at();
            let r = self.and_level()?.into_pred(r_at)?;
            lhs = Syn::Pred(l.or(r));
        }
        Ok(lhs)
    }

    fn and_level(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        let mut lhs = self.not_level()?;
        while self.eat(&Tok::AndAnd) {
            let l = lhs.into_pred(at)?;
            let r_at = self.at();
            let r = self.not_level()?.into_pred(r_at)?;
            lhs = Syn::Pred(l.and(r));
        }
        Ok(lhs)
    }

    fn not_level(&mut self) -> Result<Syn, ParseError> {
        if self.eat(&Tok::Bang) {
            let at = self.at();
            let inner = self.not_level()?.into_pred(at)?;
            Ok(Syn::Pred(inner.not()))
        } else {
            self.cmp_level()
        }
    }

    fn cmp_level(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        let lhs = self.sum_level()?;
        let op = match self.peek() {
            Some(Tok::Lt) => Some(CmpOp::Lt),
            Some(Tok::Le) => Some(CmpOp::Le),
            Some(Tok::EqEq) => Some(CmpOp::Eq),
            Some(Tok::Ge) => Some(CmpOp::Ge),
            Some(Tok::Gt) => Some(CmpOp::Gt),
            Some(Tok::BangEq) => {
                self.bump();
                let l = lhs.into_expr(at)?;
                let r_at = self.at();
                let r = self.sum_level()?.into_expr(r_at)?;
                return Ok(Syn::Pred(Pred::cmp(CmpOp::Eq, l, r).not()));
            }
            _ => None,
        };
        match op {
            None => Ok(lhs),
            Some(op) => {
                self.bump();
                let l = lhs.into_expr(at)?;
                let r_at = self.at();
                let r = self.sum_level()?.into_expr(r_at)?;
                Ok(Syn::Pred(Pred::cmp(op, l, r)))
            }
        }
    }

    fn sum_level(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        let mut lhs = self.prod_level()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let l = lhs.into_expr(at)?;
            let r_at = self.at();
            let r = self.prod_level()?.into_expr(r_at)?;
            lhs = Syn::Expr(Expr::Bin(op, Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn prod_level(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        let mut lhs = self.neg_level()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.bump();
            let l = lhs.into_expr(at)?;
            let r_at = self.at();
            let r = self.neg_level()?.into_expr(r_at)?;
            lhs = Syn::Expr(Expr::Bin(op, Box::new(l), Box::new(r)));
        }
        Ok(lhs)
    }

    fn neg_level(&mut self) -> Result<Syn, ParseError> {
        if self.eat(&Tok::Minus) {
            let at = self.at();
            let inner = self.neg_level()?.into_expr(at)?;
            // Fold negated literals so `-2` parses, prints, and re-parses as
            // the same tree.
            Ok(Syn::Expr(match inner {
                Expr::Number(v) => Expr::Number(-v),
                other => other.neg(),
            }))
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Syn, ParseError> {
        let at = self.at();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Syn::Expr(Expr::Number(v))),
            Some(Tok::True) => Ok(Syn::Pred(Pred::Lit(true))),
            Some(Tok::False) => Ok(Syn::Pred(Pred::Lit(false))),
            Some(Tok::LParen) => {
                let inner = self.or_level()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => self.ident_tail(at, name),
            Some(t) => Err(ParseError::at(
                at,
                format!("expected a value, found {}", t.describe()),
            )),
            None => Err(ParseError::at(at, "expected a value, found end of input")),
        }
    }

    fn ident_tail(&mut self, at: usize, name: String) -> Result<Syn, ParseError> {
        match name.as_str() {
            "x" => {
                self.expect(Tok::LBrack, "`[` after `x`")?;
                let node = self.index()?;
                self.expect(Tok::RBrack, "`]`")?;
                self.expect(Tok::LBrack, "`[` (state references are `x[node][coord]`)")?;
                let coord = self.index()?;
                self.expect(Tok::RBrack, "`]`")?;
                Ok(Syn::Expr(Expr::State { node, coord }))
            }
            "tau" => {
                self.expect(Tok::LBrack, "`[` after `tau`")?;
                let clock = match self.bump() {
                    Some(Tok::Ident(n)) => n,
                    _ => return Err(ParseError::at(self.at(), "expected a clock name")),
                };
                self.expect(Tok::RBrack, "`]`")?;
                Ok(Syn::Expr(Expr::Clock(clock)))
            }
            _ => {
                if self.eat(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or_else(|| {
                        ParseError::at(at, format!("unknown function `{name}`"))
                    })?;
                    let mut args = vec![];
                    if !self.eat(&Tok::RParen) {
                        loop {
                            let a_at = self.at();
                            args.push(self.or_level()?.into_expr(a_at)?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                        self.expect(Tok::RParen, "`)` or `,`")?;
                    }
                    if args.len() != func.arity() {
                        return Err(ParseError::at(
                            at,
                            format!(
                                "`{name}` takes {} argument{}, got {}",
                                func.arity(),
                                if func.arity() == 1 { "" } else { "s" },
                                args.len()
                            ),
                        ));
                    }
                    Ok(Syn::Expr(Expr::Call(func, args)))
                } else if Func::from_name(&name).is_some() {
                    Err(ParseError::at(
                        at,
                        format!("`{name}` is a function name; call it with `(`"),
                    ))
                } else {
                    Ok(Syn::Expr(Expr::Param(name)))
                }
            }
        }
    }

    fn index(&mut self) -> Result<usize, ParseError> {
        let at = self.at();
        match self.bump() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 => {
                Ok(v as usize)
            }
            Some(Tok::Num(_)) => Err(ParseError::at(at, "indices are positive integers (1-based)")),
            _ => Err(ParseError::at(at, "expected an index")),
        }
    }
}
