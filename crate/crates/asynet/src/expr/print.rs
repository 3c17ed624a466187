//! Canonical printing. `parse(format!("{e}"))` reproduces the tree exactly;
//! the round trip is property-tested.

use std::fmt;

use super::{BinOp, CmpOp, Expr, Pred};

// Binding strength of each arithmetic production, used to decide where
// parentheses are required.
const PREC_SUM: u8 = 1;
const PREC_PROD: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 4;

fn expr_prec(e: &Expr) -> u8 {
    match e {
        // Negative literals print with a leading `-`, so they bind like a
        // unary negation.
        Expr::Number(v) if *v < 0.0 => PREC_NEG,
        Expr::Number(_) | Expr::State { .. } | Expr::Clock(_) | Expr::Param(_) => PREC_ATOM,
        Expr::Call(..) => PREC_ATOM,
        Expr::Neg(_) => PREC_NEG,
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_SUM,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_PROD,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    let prec = expr_prec(e);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        // `{:?}` keeps scientific notation for extreme magnitudes and
        // round-trips every finite f64.
        Expr::Number(v) => write!(f, "{v:?}")?,
        Expr::State { node, coord } => write!(f, "x[{node}][{coord}]")?,
        Expr::Clock(name) => write!(f, "tau[{name}]")?,
        Expr::Param(name) => write!(f, "{name}")?,
        Expr::Neg(inner) => {
            write!(f, "-")?;
            write_expr(f, inner, PREC_NEG)?;
        }
        Expr::Bin(op, a, b) => {
            let (sym, lp, rp) = match op {
                // Left-associative: the right operand needs parens at equal
                // precedence for `-` and `/`.
                BinOp::Add => (" + ", PREC_SUM, PREC_SUM),
                BinOp::Sub => (" - ", PREC_SUM, PREC_SUM + 1),
                BinOp::Mul => (" * ", PREC_PROD, PREC_PROD),
                BinOp::Div => (" / ", PREC_PROD, PREC_PROD + 1),
            };
            write_expr(f, a, lp)?;
            write!(f, "{sym}")?;
            write_expr(f, b, rp)?;
        }
        Expr::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_expr(f, a, 0)?;
            }
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_NOT: u8 = 3;

fn pred_prec(p: &Pred) -> u8 {
    match p {
        Pred::Or(..) => PREC_OR,
        Pred::And(..) => PREC_AND,
        Pred::Not(_) => PREC_NOT,
        // Comparisons bind tighter than `!`, and literals never need parens.
        Pred::Lit(_) | Pred::Cmp(..) => u8::MAX,
    }
}

fn write_pred(f: &mut fmt::Formatter<'_>, p: &Pred, min_prec: u8) -> fmt::Result {
    // `a != b` round-trips through its parsed form `!(a == b)`.
    if let Pred::Not(inner) = p {
        if let Pred::Cmp(CmpOp::Eq, a, b) = inner.as_ref() {
            let parens = PREC_NOT < min_prec;
            if parens {
                write!(f, "(")?;
            }
            write_expr(f, a, PREC_SUM)?;
            write!(f, " != ")?;
            write_expr(f, b, PREC_SUM)?;
            if parens {
                write!(f, ")")?;
            }
            return Ok(());
        }
    }
    let prec = pred_prec(p);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match p {
        Pred::Lit(b) => write!(f, "{b}")?,
        Pred::Cmp(op, a, b) => {
            write_expr(f, a, PREC_SUM)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(f, b, PREC_SUM)?;
        }
        Pred::Not(inner) => {
            write!(f, "!")?;
            write_pred(f, inner, PREC_NOT + 1)?;
        }
        Pred::And(a, b) => {
            write_pred(f, a, PREC_AND)?;
            write!(f, " && ")?;
            write_pred(f, b, PREC_AND + 1)?;
        }
        Pred::Or(a, b) => {
            write_pred(f, a, PREC_OR)?;
            write!(f, " || ")?;
            write_pred(f, b, PREC_OR + 1)?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_pred(f, self, 0)
    }
}
