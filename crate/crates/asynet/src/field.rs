//! Per-structure vector fields.
//!
//! Each connection structure carries one field: an expression per state
//! coordinate plus a rate (exactly 0 or 1) per declared clock, so clocks are
//! piecewise linear with unit slope wherever they run.

use crate::expr::{BindError, BoundExpr, Declarations, EvalCtx, EvalError, Expr};

/// Clock slope under a structure: stopped or running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ClockRate {
    Stopped,
    Running,
}

impl ClockRate {
    pub fn value(self) -> f64 {
        match self {
            ClockRate::Stopped => 0.0,
            ClockRate::Running => 1.0,
        }
    }

    pub fn from_bit(bit: u8) -> Option<ClockRate> {
        match bit {
            0 => Some(ClockRate::Stopped),
            1 => Some(ClockRate::Running),
            _ => None,
        }
    }
}

/// Errors in a field declaration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("field has {got} components but the state has {want} coordinates")]
    ComponentCount { got: usize, want: usize },
    #[error("field declares {got} clock rates but the network has {want} clocks")]
    ClockCount { got: usize, want: usize },
    #[error("component {coord}: {0}", coord = .1 + 1)]
    Bind(BindError, usize),
}

/// One structure's vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    components: Vec<BoundExpr>,
    clock_rates: Vec<ClockRate>,
}

impl VectorFieldSpec {
    pub fn new(
        components: Vec<Expr>,
        clock_rates: Vec<ClockRate>,
        decls: &Declarations,
    ) -> Result<VectorFieldSpec, FieldError> {
        if components.len() != decls.dim() {
            return Err(FieldError::ComponentCount {
                got: components.len(),
                want: decls.dim(),
            });
        }
        if clock_rates.len() != decls.clock_count() {
            return Err(FieldError::ClockCount {
                got: clock_rates.len(),
                want: decls.clock_count(),
            });
        }
        let components = components
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.bind(decls).map_err(|err| FieldError::Bind(err, i)))
            .collect::<Result<_, _>>()?;
        Ok(VectorFieldSpec {
            components,
            clock_rates,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, flat: usize) -> &BoundExpr {
        &self.components[flat]
    }

    pub fn components(&self) -> &[BoundExpr] {
        &self.components
    }

    pub fn clock_rates(&self) -> &[ClockRate] {
        &self.clock_rates
    }

    pub fn clock_rate(&self, clock: usize) -> ClockRate {
        self.clock_rates[clock]
    }

    /// Evaluate all state components into `out` (length = state dimension).
    pub fn eval_into(&self, ctx: &EvalCtx, out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(out.len(), self.components.len());
        for (slot, comp) in out.iter_mut().zip(&self.components) {
            *slot = comp.eval(ctx)?;
        }
        Ok(())
    }
}
