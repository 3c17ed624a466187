//! Declared node degeneracies.
//!
//! A constraint `(node i, index ℓ)` names an open region `W` of node `i`'s
//! phase space together with a set of coordinates that are *frozen* there:
//! while a structure with column-0 entry `ℓ` at node `i` is active, those
//! components of the node's field must vanish identically on `W` (the field
//! is tangent to the leaves on which the frozen coordinates are constant).

use crate::expr::{BoundPred, Declarations, Pred};

/// Errors in a constraint declaration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConstraintError {
    #[error("constraint indices are 1-based and dense; got index {0}")]
    BadIndex(u32),
    #[error("constraint on node {node} freezes no coordinates")]
    NoFrozen { node: usize },
    #[error("constraint on node {node} freezes coordinate {coord}, which it does not have")]
    FrozenOutOfRange { node: usize, coord: usize },
    #[error(
        "constraint region on node {node} must use only strict comparisons (`<`, `>`), found `{atom}`"
    )]
    NonOpenRegion { node: usize, atom: String },
    #[error("constraint region on node {node} references {what}, but may only read that node's own coordinates")]
    ForeignReference { node: usize, what: String },
    #[error("constraint region on node {node}: {0}", node = .1)]
    Bind(crate::expr::BindError, usize),
}

/// One declared degeneracy of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    /// 0-based node index.
    pub node: usize,
    /// 1-based index among the node's constraints (column-0 values select it).
    pub index: u32,
    /// Open region `W` of the node's space where the constraint is defined;
    /// `true` means the whole node space. Strict comparisons only.
    pub region: Pred,
    /// Node-local coordinate indices (0-based) frozen on `W`.
    pub frozen: Vec<usize>,
    bound_region: BoundPred,
}

impl ConstraintSpec {
    pub fn new(
        node: usize,
        index: u32,
        region: Pred,
        mut frozen: Vec<usize>,
        decls: &Declarations,
    ) -> Result<ConstraintSpec, ConstraintError> {
        if index == 0 {
            return Err(ConstraintError::BadIndex(index));
        }
        frozen.sort_unstable();
        frozen.dedup();
        if frozen.is_empty() {
            return Err(ConstraintError::NoFrozen { node: node + 1 });
        }
        let node_dim = decls.node_dim(node);
        if let Some(&c) = frozen.iter().find(|&&c| c >= node_dim) {
            return Err(ConstraintError::FrozenOutOfRange {
                node: node + 1,
                coord: c + 1,
            });
        }

        // The region must be open (strict atoms only) and node-local.
        let mut bad_atom: Option<String> = None;
        let mut foreign: Option<String> = None;
        region.visit_atoms(&mut |op, lhs, rhs| {
            use crate::expr::CmpOp;
            if !matches!(op, CmpOp::Lt | CmpOp::Gt) && bad_atom.is_none() {
                bad_atom = Some(format!("{lhs} {} {rhs}", op.symbol()));
            }
            for e in [lhs, rhs] {
                check_local(e, node, &mut foreign);
            }
        });
        if let Some(atom) = bad_atom {
            return Err(ConstraintError::NonOpenRegion {
                node: node + 1,
                atom,
            });
        }
        if let Some(what) = foreign {
            return Err(ConstraintError::ForeignReference {
                node: node + 1,
                what,
            });
        }
        let bound_region = region
            .bind(decls)
            .map_err(|e| ConstraintError::Bind(e, node + 1))?;
        Ok(ConstraintSpec {
            node,
            index,
            region,
            frozen,
            bound_region,
        })
    }

    pub fn bound_region(&self) -> &BoundPred {
        &self.bound_region
    }

    /// Whether the node-`i` projection of `x` lies in `W`. Strict-only atoms
    /// make the tolerance irrelevant, so a tiny default is used.
    pub fn region_contains(&self, ctx: &crate::expr::EvalCtx) -> Result<bool, crate::expr::EvalError> {
        self.bound_region.holds(ctx, 0.0)
    }
}

fn check_local(e: &crate::expr::Expr, node: usize, foreign: &mut Option<String>) {
    use crate::expr::Expr;
    match e {
        Expr::Number(_) | Expr::Param(_) => {}
        Expr::Clock(name) => {
            if foreign.is_none() {
                *foreign = Some(format!("clock `{name}`"));
            }
        }
        Expr::State { node: n, .. } => {
            if *n != node + 1 && foreign.is_none() {
                *foreign = Some(format!("node {n}"));
            }
        }
        Expr::Neg(inner) => check_local(inner, node, foreign),
        Expr::Bin(_, a, b) => {
            check_local(a, node, foreign);
            check_local(b, node, foreign);
        }
        Expr::Call(_, args) => {
            for a in args {
                check_local(a, node, foreign);
            }
        }
    }
}
