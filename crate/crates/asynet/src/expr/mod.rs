//! The expression language used throughout the crate.
//!
//! Vector-field components, event-map guards, constraint regions, and
//! termination conditions are all written in one small arithmetic/boolean
//! language and evaluated against a network's state vector:
//!
//! * `x[i][c]` — coordinate `c` of node `i` (both indices 1-based in the
//!   surface syntax; the binder converts to flat 0-based offsets),
//! * `tau[name]` — a declared local clock,
//! * bare identifiers — declared named parameters,
//! * numeric literals, `+ - * /`, unary `-`, and the functions
//!   `sin`, `cos`, `abs`, `min`, `max`, `circ_dist`,
//! * comparisons `< <= == >= > !=` against another expression, combined
//!   with `&& || !` and the literals `true` / `false`.
//!
//! Parsing is context-free; binding resolves names against a
//! [`Declarations`] table and compiles a postfix program for evaluation.
//! Comparisons are normalized to `g ⋈ 0`: equality-like operators
//! (`==`, `<=`, `>=`) hold within a configurable tolerance band `eps`,
//! strict ones (`<`, `>`) are plain IEEE comparisons, and `a != b` is
//! sugar for `!(a == b)`. Boolean connectives short-circuit left to right.
//!
//! Division by zero is a runtime evaluation error, not a silent `inf`/`NaN`.

mod eval;
mod lex;
mod parse;
mod print;

pub use eval::{circ_dist, EvalCtx, EvalError, MAX_EVAL_STACK};
pub use parse::{parse_expr, parse_pred, ParseError};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Built-in functions with fixed arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Sin,
    Cos,
    Abs,
    Min,
    Max,
    /// Shortest angular distance between two angles in radians, in `[0, π]`.
    CircDist,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::CircDist => "circ_dist",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Sin | Func::Cos | Func::Abs => 1,
            Func::Min | Func::Max | Func::CircDist => 2,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "circ_dist" => Func::CircDist,
            _ => return None,
        })
    }
}

/// Comparison operators of guard atoms, normalized against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    /// Truth of `g ⋈ 0` under the tolerance `eps` for equality-like operators.
    #[inline]
    pub fn holds(self, g: f64, eps: f64) -> bool {
        match self {
            CmpOp::Lt => g < 0.0,
            CmpOp::Le => g <= eps,
            CmpOp::Eq => g.abs() <= eps,
            CmpOp::Ge => g >= -eps,
            CmpOp::Gt => g > 0.0,
        }
    }
}

/// A syntactic arithmetic expression, as produced by [`parse_expr`].
///
/// State references keep their 1-based surface indices so that printing and
/// re-parsing round-trips exactly; [`Expr::bind`] converts them to flat
/// offsets.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    /// `x[node][coord]`, 1-based.
    State { node: usize, coord: usize },
    /// `tau[name]`.
    Clock(String),
    /// A named parameter.
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Number(v)
    }

    /// `x[node][coord]` with 1-based indices, as in the surface syntax.
    pub fn state(node: usize, coord: usize) -> Expr {
        Expr::State { node, coord }
    }

    pub fn clock(name: impl Into<String>) -> Expr {
        Expr::Clock(name.into())
    }

    pub fn param(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    pub fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }

    pub fn add(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Add, Box::new(self), Box::new(rhs))
    }

    pub fn sub(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Sub, Box::new(self), Box::new(rhs))
    }

    pub fn mul(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Mul, Box::new(self), Box::new(rhs))
    }

    pub fn div(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Div, Box::new(self), Box::new(rhs))
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Expr {
        debug_assert_eq!(args.len(), func.arity());
        Expr::Call(func, args)
    }

    /// Renumber node references, e.g. when embedding a network into a larger
    /// product. The map takes and returns 1-based node indices.
    pub fn remap_nodes(&self, map: &impl Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Number(_) | Expr::Clock(_) | Expr::Param(_) => self.clone(),
            Expr::State { node, coord } => Expr::State {
                node: map(*node),
                coord: *coord,
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.remap_nodes(map))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.remap_nodes(map)),
                Box::new(b.remap_nodes(map)),
            ),
            Expr::Call(f, args) => {
                Expr::Call(*f, args.iter().map(|a| a.remap_nodes(map)).collect())
            }
        }
    }

    /// Replace selected state references by constants (1-based indices).
    /// References for which `anchor` returns `None` are kept.
    pub fn substitute_state(&self, anchor: &impl Fn(usize, usize) -> Option<f64>) -> Expr {
        match self {
            Expr::Number(_) | Expr::Clock(_) | Expr::Param(_) => self.clone(),
            Expr::State { node, coord } => match anchor(*node, *coord) {
                Some(v) => Expr::Number(v),
                None => self.clone(),
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute_state(anchor))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.substitute_state(anchor)),
                Box::new(b.substitute_state(anchor)),
            ),
            Expr::Call(f, args) => Expr::Call(
                *f,
                args.iter().map(|a| a.substitute_state(anchor)).collect(),
            ),
        }
    }

    /// Rename clock references.
    pub fn remap_clocks(&self, map: &impl Fn(&str) -> String) -> Expr {
        match self {
            Expr::Number(_) | Expr::State { .. } | Expr::Param(_) => self.clone(),
            Expr::Clock(name) => Expr::Clock(map(name)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.remap_clocks(map))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.remap_clocks(map)),
                Box::new(b.remap_clocks(map)),
            ),
            Expr::Call(f, args) => {
                Expr::Call(*f, args.iter().map(|a| a.remap_clocks(map)).collect())
            }
        }
    }

    /// Rename parameter references.
    pub fn remap_params(&self, map: &impl Fn(&str) -> String) -> Expr {
        match self {
            Expr::Number(_) | Expr::State { .. } | Expr::Clock(_) => self.clone(),
            Expr::Param(name) => Expr::Param(map(name)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.remap_params(map))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.remap_params(map)),
                Box::new(b.remap_params(map)),
            ),
            Expr::Call(f, args) => {
                Expr::Call(*f, args.iter().map(|a| a.remap_params(map)).collect())
            }
        }
    }

    /// Replace selected clock references by constants. References for which
    /// `value` returns `None` are kept.
    pub fn substitute_clocks(&self, value: &impl Fn(&str) -> Option<f64>) -> Expr {
        match self {
            Expr::Number(_) | Expr::State { .. } | Expr::Param(_) => self.clone(),
            Expr::Clock(name) => match value(name) {
                Some(v) => Expr::Number(v),
                None => self.clone(),
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute_clocks(value))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.substitute_clocks(value)),
                Box::new(b.substitute_clocks(value)),
            ),
            Expr::Call(f, args) => {
                Expr::Call(*f, args.iter().map(|a| a.substitute_clocks(value)).collect())
            }
        }
    }

    /// Bind names and indices against `decls` and compile for evaluation.
    pub fn bind(&self, decls: &Declarations) -> Result<BoundExpr, BindError> {
        BoundExpr::new(self.clone(), decls)
    }
}

/// A syntactic predicate, as produced by [`parse_pred`].
#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    Lit(bool),
    Cmp(CmpOp, Expr, Expr),
    Not(Box<Pred>),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

impl Pred {
    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Pred {
        Pred::Cmp(op, lhs, rhs)
    }

    pub fn not(self) -> Pred {
        Pred::Not(Box::new(self))
    }

    pub fn and(self, rhs: Pred) -> Pred {
        Pred::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Pred) -> Pred {
        Pred::Or(Box::new(self), Box::new(rhs))
    }

    pub fn remap_nodes(&self, map: &impl Fn(usize) -> usize) -> Pred {
        self.map_exprs(&|e| e.remap_nodes(map))
    }

    pub fn substitute_state(&self, anchor: &impl Fn(usize, usize) -> Option<f64>) -> Pred {
        self.map_exprs(&|e| e.substitute_state(anchor))
    }

    pub fn substitute_clocks(&self, value: &impl Fn(&str) -> Option<f64>) -> Pred {
        self.map_exprs(&|e| e.substitute_clocks(value))
    }

    pub fn remap_clocks(&self, map: &impl Fn(&str) -> String) -> Pred {
        self.map_exprs(&|e| e.remap_clocks(map))
    }

    pub fn remap_params(&self, map: &impl Fn(&str) -> String) -> Pred {
        self.map_exprs(&|e| e.remap_params(map))
    }

    pub fn map_exprs(&self, f: &impl Fn(&Expr) -> Expr) -> Pred {
        match self {
            Pred::Lit(b) => Pred::Lit(*b),
            Pred::Cmp(op, a, b) => Pred::Cmp(*op, f(a), f(b)),
            Pred::Not(p) => Pred::Not(Box::new(p.map_exprs(f))),
            Pred::And(a, b) => Pred::And(Box::new(a.map_exprs(f)), Box::new(b.map_exprs(f))),
            Pred::Or(a, b) => Pred::Or(Box::new(a.map_exprs(f)), Box::new(b.map_exprs(f))),
        }
    }

    /// Visit every comparison atom.
    pub fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(CmpOp, &'a Expr, &'a Expr)) {
        match self {
            Pred::Lit(_) => {}
            Pred::Cmp(op, a, b) => f(*op, a, b),
            Pred::Not(p) => p.visit_atoms(f),
            Pred::And(a, b) | Pred::Or(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
        }
    }

    pub fn bind(&self, decls: &Declarations) -> Result<BoundPred, BindError> {
        BoundPred::new(self.clone(), decls)
    }
}

// Expressions and predicates serialize as their canonical text, so data
// files stay human-readable and round-trip through the parser.
impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse::parse_expr(&text).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Pred {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pred {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse::parse_pred(&text).map_err(serde::de::Error::custom)
    }
}

/// Name and dimension tables an expression is resolved against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Declarations {
    /// Coordinate count of each node; node `i` (0-based) occupies the flat
    /// range `offsets[i] .. offsets[i] + node_dims[i]`.
    node_dims: Vec<usize>,
    offsets: Vec<usize>,
    clocks: Vec<String>,
    params: Vec<String>,
}

impl Declarations {
    pub fn new(
        node_dims: Vec<usize>,
        clocks: Vec<String>,
        params: Vec<String>,
    ) -> Declarations {
        let mut offsets = Vec::with_capacity(node_dims.len());
        let mut acc = 0;
        for &d in &node_dims {
            offsets.push(acc);
            acc += d;
        }
        Declarations {
            node_dims,
            offsets,
            clocks,
            params,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_dims.len()
    }

    pub fn node_dim(&self, node: usize) -> usize {
        self.node_dims[node]
    }

    /// Total flat state dimension.
    pub fn dim(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.node_dims[self.node_dims.len() - 1])
    }

    /// Flat offset of a node's first coordinate (0-based node index).
    pub fn node_offset(&self, node: usize) -> usize {
        self.offsets[node]
    }

    /// Flat index of `(node, coord)`, both 0-based.
    pub fn flat_index(&self, node: usize, coord: usize) -> usize {
        debug_assert!(coord < self.node_dims[node]);
        self.offsets[node] + coord
    }

    /// Inverse of [`Declarations::flat_index`].
    pub fn node_of_flat(&self, flat: usize) -> (usize, usize) {
        let node = match self.offsets.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (node, flat - self.offsets[node])
    }

    pub fn clock_count(&self) -> usize {
        self.clocks.len()
    }

    pub fn clock_names(&self) -> &[String] {
        &self.clocks
    }

    pub fn clock_index(&self, name: &str) -> Option<usize> {
        self.clocks.iter().position(|c| c == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p == name)
    }
}

/// Errors raised while resolving an expression against [`Declarations`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("undeclared parameter `{0}`")]
    UndeclaredParam(String),
    #[error("undeclared clock `{0}`")]
    UndeclaredClock(String),
    #[error("node index {node} out of range (network has {count} nodes; indices are 1-based)")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("coordinate index {coord} out of range for node {node} (which has {dim} coordinates; indices are 1-based)")]
    CoordOutOfRange { node: usize, coord: usize, dim: usize },
    #[error("state and node indices are 1-based; 0 is not a valid index")]
    ZeroIndex,
    #[error("expression nests deeper than the evaluator's stack limit ({MAX_EVAL_STACK})")]
    TooDeep,
}

/// Variables an expression reads, discovered syntactically during binding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Deps {
    /// Flat state coordinate indices.
    pub coords: BTreeSet<usize>,
    /// Clock indices.
    pub clocks: BTreeSet<usize>,
    /// Parameter indices.
    pub params: BTreeSet<usize>,
}

impl Deps {
    pub fn union_with(&mut self, other: &Deps) {
        self.coords.extend(&other.coords);
        self.clocks.extend(&other.clocks);
        self.params.extend(&other.params);
    }

    /// True when the expression reads no state coordinates and no clocks.
    pub fn is_constant(&self) -> bool {
        self.coords.is_empty() && self.clocks.is_empty()
    }
}

/// A reference to a continuous variable: a flat state coordinate or a clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarRef {
    X(usize),
    Tau(usize),
}

/// An expression resolved against a network's declarations and compiled to a
/// postfix program.
#[derive(Debug, Clone)]
pub struct BoundExpr {
    ast: Expr,
    ops: Vec<eval::Op>,
    deps: Deps,
}

impl PartialEq for BoundExpr {
    fn eq(&self, other: &Self) -> bool {
        self.ops == other.ops
    }
}

impl BoundExpr {
    fn new(ast: Expr, decls: &Declarations) -> Result<BoundExpr, BindError> {
        let mut ops = Vec::new();
        let mut deps = Deps::default();
        compile(&ast, decls, &mut ops, &mut deps)?;
        if eval::max_stack(&ops) > eval::MAX_EVAL_STACK {
            return Err(BindError::TooDeep);
        }
        Ok(BoundExpr { ast, ops, deps })
    }

    /// A constant expression (no parse/bind context needed).
    pub fn constant(v: f64) -> BoundExpr {
        BoundExpr {
            ast: Expr::Number(v),
            ops: vec![eval::Op::Num(v)],
            deps: Deps::default(),
        }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn deps(&self) -> &Deps {
        &self.deps
    }

    /// Evaluate against a state/clock/parameter context.
    #[inline]
    pub fn eval(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        eval::run(&self.ops, ctx)
    }

    /// Decompose as an affine function `Σ wᵥ·v + c` of the continuous
    /// variables, with parameters folded to their current values. Returns
    /// `None` when the expression is not affine (or divides by a parameter
    /// equal to zero).
    pub fn affine(&self, params: &[f64]) -> Option<AffineForm> {
        affine_of(&self.ops, params)
    }
}

/// `Σ terms[v]·v + offset` over continuous variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub terms: Vec<(VarRef, f64)>,
    pub offset: f64,
}

impl AffineForm {
    /// The single-variable form `w·v + c` with `w ≠ 0`, if that is what this is.
    pub fn single_var(&self) -> Option<(VarRef, f64, f64)> {
        match self.terms.as_slice() {
            [(v, w)] if *w != 0.0 => Some((*v, *w, self.offset)),
            _ => None,
        }
    }
}

fn compile(
    e: &Expr,
    decls: &Declarations,
    ops: &mut Vec<eval::Op>,
    deps: &mut Deps,
) -> Result<(), BindError> {
    use eval::Op;
    match e {
        Expr::Number(v) => ops.push(Op::Num(*v)),
        Expr::State { node, coord } => {
            if *node == 0 || *coord == 0 {
                return Err(BindError::ZeroIndex);
            }
            let (n0, c0) = (*node - 1, *coord - 1);
            if n0 >= decls.node_count() {
                return Err(BindError::NodeOutOfRange {
                    node: *node,
                    count: decls.node_count(),
                });
            }
            if c0 >= decls.node_dim(n0) {
                return Err(BindError::CoordOutOfRange {
                    node: *node,
                    coord: *coord,
                    dim: decls.node_dim(n0),
                });
            }
            let flat = decls.flat_index(n0, c0);
            deps.coords.insert(flat);
            ops.push(Op::X(flat as u32));
        }
        Expr::Clock(name) => {
            let idx = decls
                .clock_index(name)
                .ok_or_else(|| BindError::UndeclaredClock(name.clone()))?;
            deps.clocks.insert(idx);
            ops.push(Op::Tau(idx as u32));
        }
        Expr::Param(name) => {
            let idx = decls
                .param_index(name)
                .ok_or_else(|| BindError::UndeclaredParam(name.clone()))?;
            deps.params.insert(idx);
            ops.push(Op::Param(idx as u32));
        }
        Expr::Neg(inner) => {
            compile(inner, decls, ops, deps)?;
            ops.push(Op::Neg);
        }
        Expr::Bin(op, a, b) => {
            compile(a, decls, ops, deps)?;
            compile(b, decls, ops, deps)?;
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
        }
        Expr::Call(f, args) => {
            for a in args {
                compile(a, decls, ops, deps)?;
            }
            ops.push(match f {
                Func::Sin => Op::Sin,
                Func::Cos => Op::Cos,
                Func::Abs => Op::Abs,
                Func::Min => Op::Min,
                Func::Max => Op::Max,
                Func::CircDist => Op::CircDist,
            });
        }
    }
    Ok(())
}

/// Abstract-evaluate a postfix program over affine forms instead of numbers.
/// Any opcode that cannot preserve affinity (a function call, a product of
/// two non-constant forms, a division by a non-constant or by zero) aborts.
fn affine_of(ops: &[eval::Op], params: &[f64]) -> Option<AffineForm> {
    use eval::Op;

    fn constant(v: f64) -> AffineForm {
        AffineForm {
            terms: vec![],
            offset: v,
        }
    }
    fn variable(v: VarRef) -> AffineForm {
        AffineForm {
            terms: vec![(v, 1.0)],
            offset: 0.0,
        }
    }
    fn add_scaled(mut a: AffineForm, b: AffineForm, sign: f64) -> AffineForm {
        for (v, w) in b.terms {
            match a.terms.iter_mut().find(|(u, _)| *u == v) {
                Some(t) => t.1 += sign * w,
                None => a.terms.push((v, sign * w)),
            }
        }
        a.offset += sign * b.offset;
        a
    }
    fn scale(mut f: AffineForm, k: f64) -> AffineForm {
        for t in &mut f.terms {
            t.1 *= k;
        }
        f.offset *= k;
        f
    }

    let mut stack: Vec<AffineForm> = Vec::with_capacity(8);
    for op in ops {
        match op {
            Op::Num(v) => stack.push(constant(*v)),
            Op::X(i) => stack.push(variable(VarRef::X(*i as usize))),
            Op::Tau(i) => stack.push(variable(VarRef::Tau(*i as usize))),
            Op::Param(i) => stack.push(constant(params[*i as usize])),
            Op::Neg => {
                let a = stack.pop()?;
                stack.push(scale(a, -1.0));
            }
            Op::Add | Op::Sub => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                let sign = if matches!(op, Op::Add) { 1.0 } else { -1.0 };
                stack.push(add_scaled(a, b, sign));
            }
            Op::Mul => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                if a.terms.is_empty() {
                    stack.push(scale(b, a.offset));
                } else if b.terms.is_empty() {
                    stack.push(scale(a, b.offset));
                } else {
                    return None;
                }
            }
            Op::Div => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                if !b.terms.is_empty() || b.offset == 0.0 {
                    return None;
                }
                stack.push(scale(a, 1.0 / b.offset));
            }
            Op::Sin | Op::Cos | Op::Abs | Op::Min | Op::Max | Op::CircDist => return None,
        }
    }
    let mut form = stack.pop()?;
    form.terms.retain(|(_, w)| *w != 0.0);
    form.terms.sort_by_key(|(v, _)| *v);
    Some(form)
}

/// A predicate resolved against a network's declarations.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPred {
    ast: Pred,
    node: PredNode,
    deps: Deps,
}

#[derive(Debug, Clone, PartialEq)]
enum PredNode {
    Lit(bool),
    Atom(BoundAtom),
    Not(Box<PredNode>),
    And(Box<PredNode>, Box<PredNode>),
    Or(Box<PredNode>, Box<PredNode>),
}

/// A comparison normalized to `g ⋈ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAtom {
    pub g: BoundExpr,
    pub op: CmpOp,
    /// The comparison as written, for display.
    pub source: Pred,
}

impl BoundAtom {
    /// Truth at a state, under equality tolerance `eps`.
    pub fn holds(&self, ctx: &EvalCtx, eps: f64) -> Result<bool, EvalError> {
        Ok(self.op.holds(self.g.eval(ctx)?, eps))
    }
}

impl BoundPred {
    fn new(ast: Pred, decls: &Declarations) -> Result<BoundPred, BindError> {
        fn build(p: &Pred, decls: &Declarations, deps: &mut Deps) -> Result<PredNode, BindError> {
            Ok(match p {
                Pred::Lit(b) => PredNode::Lit(*b),
                Pred::Cmp(op, lhs, rhs) => {
                    let g_ast = if matches!(rhs, Expr::Number(v) if *v == 0.0) {
                        lhs.clone()
                    } else {
                        lhs.clone().sub(rhs.clone())
                    };
                    let g = g_ast.bind(decls)?;
                    deps.union_with(g.deps());
                    PredNode::Atom(BoundAtom {
                        g,
                        op: *op,
                        source: Pred::Cmp(*op, lhs.clone(), rhs.clone()),
                    })
                }
                Pred::Not(inner) => PredNode::Not(Box::new(build(inner, decls, deps)?)),
                Pred::And(a, b) => PredNode::And(
                    Box::new(build(a, decls, deps)?),
                    Box::new(build(b, decls, deps)?),
                ),
                Pred::Or(a, b) => PredNode::Or(
                    Box::new(build(a, decls, deps)?),
                    Box::new(build(b, decls, deps)?),
                ),
            })
        }
        let mut deps = Deps::default();
        let node = build(&ast, decls, &mut deps)?;
        Ok(BoundPred { ast, node, deps })
    }

    pub fn ast(&self) -> &Pred {
        &self.ast
    }

    pub fn deps(&self) -> &Deps {
        &self.deps
    }

    /// Evaluate with short-circuiting, left to right.
    pub fn holds(&self, ctx: &EvalCtx, eps: f64) -> Result<bool, EvalError> {
        fn go(n: &PredNode, ctx: &EvalCtx, eps: f64) -> Result<bool, EvalError> {
            Ok(match n {
                PredNode::Lit(b) => *b,
                PredNode::Atom(a) => a.holds(ctx, eps)?,
                PredNode::Not(p) => !go(p, ctx, eps)?,
                PredNode::And(a, b) => go(a, ctx, eps)? && go(b, ctx, eps)?,
                PredNode::Or(a, b) => go(a, ctx, eps)? || go(b, ctx, eps)?,
            })
        }
        go(&self.node, ctx, eps)
    }

    /// Visit every bound atom, in evaluation order.
    pub fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a BoundAtom)) {
        fn go<'a>(n: &'a PredNode, f: &mut impl FnMut(&'a BoundAtom)) {
            match n {
                PredNode::Lit(_) => {}
                PredNode::Atom(a) => f(a),
                PredNode::Not(p) => go(p, f),
                PredNode::And(a, b) | PredNode::Or(a, b) => {
                    go(a, f);
                    go(b, f);
                }
            }
        }
        go(&self.node, f)
    }

    /// Rebuild the boolean skeleton with each atom replaced by an interned
    /// id. Used by event maps, which evaluate atoms through a shared,
    /// possibly sticky-latched table.
    pub fn shape(&self, intern: &mut impl FnMut(&BoundAtom) -> usize) -> PredShape {
        fn go(n: &PredNode, intern: &mut impl FnMut(&BoundAtom) -> usize) -> PredShape {
            match n {
                PredNode::Lit(b) => PredShape::Lit(*b),
                PredNode::Atom(a) => PredShape::Atom(intern(a)),
                PredNode::Not(p) => PredShape::Not(Box::new(go(p, intern))),
                PredNode::And(a, b) => {
                    PredShape::And(Box::new(go(a, intern)), Box::new(go(b, intern)))
                }
                PredNode::Or(a, b) => {
                    PredShape::Or(Box::new(go(a, intern)), Box::new(go(b, intern)))
                }
            }
        }
        go(&self.node, intern)
    }
}

/// A predicate's boolean skeleton over interned atom ids.
#[derive(Debug, Clone, PartialEq)]
pub enum PredShape {
    Lit(bool),
    Atom(usize),
    Not(Box<PredShape>),
    And(Box<PredShape>, Box<PredShape>),
    Or(Box<PredShape>, Box<PredShape>),
}

impl PredShape {
    /// Evaluate with atom truths supplied by `truth` (memoization is the
    /// caller's concern). Short-circuits left to right.
    pub fn eval(
        &self,
        truth: &mut impl FnMut(usize) -> Result<bool, EvalError>,
    ) -> Result<bool, EvalError> {
        Ok(match self {
            PredShape::Lit(b) => *b,
            PredShape::Atom(i) => truth(*i)?,
            PredShape::Not(p) => !p.eval(truth)?,
            PredShape::And(a, b) => a.eval(truth)? && b.eval(truth)?,
            PredShape::Or(a, b) => a.eval(truth)? || b.eval(truth)?,
        })
    }

    /// Atom ids referenced, in evaluation order (with duplicates).
    pub fn atom_ids(&self) -> Vec<usize> {
        fn go(p: &PredShape, out: &mut Vec<usize>) {
            match p {
                PredShape::Lit(_) => {}
                PredShape::Atom(i) => out.push(*i),
                PredShape::Not(inner) => go(inner, out),
                PredShape::And(a, b) | PredShape::Or(a, b) => {
                    go(a, out);
                    go(b, out);
                }
            }
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }
}
