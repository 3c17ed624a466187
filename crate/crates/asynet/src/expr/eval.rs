//! Compiled postfix evaluation.

use std::f64::consts::TAU;

/// Evaluation stack size; [`super::BindError::TooDeep`] is raised at bind
/// time for the (pathological) expressions that would exceed it.
pub const MAX_EVAL_STACK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum Op {
    Num(f64),
    /// Flat state coordinate index.
    X(u32),
    /// Clock index.
    Tau(u32),
    /// Parameter index.
    Param(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Abs,
    Min,
    Max,
    CircDist,
}

impl Op {
    /// Net stack effect: operands consumed vs. results produced.
    fn arity(self) -> usize {
        match self {
            Op::Num(_) | Op::X(_) | Op::Tau(_) | Op::Param(_) => 0,
            Op::Neg | Op::Sin | Op::Cos | Op::Abs => 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max | Op::CircDist => 2,
        }
    }
}

pub(super) fn max_stack(ops: &[Op]) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for op in ops {
        depth = depth - op.arity() + 1;
        max = max.max(depth);
    }
    max
}

/// The variables an expression is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct EvalCtx<'a> {
    /// Flat state vector.
    pub x: &'a [f64],
    /// Clock values.
    pub tau: &'a [f64],
    /// Parameter values, in declaration order.
    pub params: &'a [f64],
}

/// Runtime evaluation failures.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivideByZero,
    #[error("expression produced NaN")]
    NotANumber,
}

#[inline]
pub(super) fn run(ops: &[Op], ctx: &EvalCtx) -> Result<f64, EvalError> {
    let mut stack = [0.0f64; MAX_EVAL_STACK];
    let mut top = 0usize;
    for op in ops {
        match *op {
            Op::Num(v) => {
                stack[top] = v;
                top += 1;
            }
            Op::X(i) => {
                stack[top] = ctx.x[i as usize];
                top += 1;
            }
            Op::Tau(i) => {
                stack[top] = ctx.tau[i as usize];
                top += 1;
            }
            Op::Param(i) => {
                stack[top] = ctx.params[i as usize];
                top += 1;
            }
            Op::Neg => stack[top - 1] = -stack[top - 1],
            Op::Sin => stack[top - 1] = stack[top - 1].sin(),
            Op::Cos => stack[top - 1] = stack[top - 1].cos(),
            Op::Abs => stack[top - 1] = stack[top - 1].abs(),
            Op::Add => {
                top -= 1;
                stack[top - 1] += stack[top];
            }
            Op::Sub => {
                top -= 1;
                stack[top - 1] -= stack[top];
            }
            Op::Mul => {
                top -= 1;
                stack[top - 1] *= stack[top];
            }
            Op::Div => {
                top -= 1;
                if stack[top] == 0.0 {
                    return Err(EvalError::DivideByZero);
                }
                stack[top - 1] /= stack[top];
            }
            Op::Min => {
                top -= 1;
                stack[top - 1] = stack[top - 1].min(stack[top]);
            }
            Op::Max => {
                top -= 1;
                stack[top - 1] = stack[top - 1].max(stack[top]);
            }
            Op::CircDist => {
                top -= 1;
                stack[top - 1] = circ_dist(stack[top - 1], stack[top]);
            }
        }
    }
    debug_assert_eq!(top, 1);
    let v = stack[0];
    if v.is_nan() {
        return Err(EvalError::NotANumber);
    }
    Ok(v)
}

/// Shortest angular distance between two angles in radians, in `[0, π]`.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}
