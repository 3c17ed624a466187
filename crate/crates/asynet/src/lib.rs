//! Simulation and analysis of asynchronous networks — coupled dynamical
//! systems whose interaction topology, constraints, and local clocks switch
//! as a function of state.
//!
//! A network couples a set of nodes, each with its own phase space built
//! from interval, line, and circle factors. At any moment exactly one
//! *connection structure* is active: a matrix recording which nodes
//! currently influence which, plus a per-node constraint index selecting a
//! declared degeneracy (e.g. "this node is frozen"). Each structure carries
//! its own vector field, and an *event map* — a first-match rule list over
//! guard predicates — selects the active structure from the current state
//! and clock values. Trajectories are therefore piecewise smooth: the
//! integrator follows one structure's field until a guard crossing, locates
//! the event, switches structures, and continues.
//!
//! Crate layout:
//!
//! * [`expr`] — the expression/predicate language guards and fields are
//!   written in;
//! * [`network`] (with [`phase`], [`connection`], [`constraint`],
//!   [`field`], [`event_map`], [`state`]) — network declarations, pointwise
//!   evaluation, and structural validation;
//! * [`checks`] — sampling-based admissibility and constraint-regularity
//!   verification;
//! * [`integrator`] — fixed-step integration with event localization,
//!   equality latching, degeneracy guards, and a stochastic switching mode;
//! * [`algebra`] — joins, embeddings, products, decomposability checks, and
//!   factorization of networks;
//! * [`models`] — built-in model families (trains, power grids, microgrid
//!   supervision, and small pathology fixtures);
//! * [`scenario`] — JSON scenario files and simulation output formats.

pub mod algebra;
pub mod checks;
pub mod connection;
pub mod constraint;
pub mod event_map;
pub mod expr;
pub mod field;
pub mod integrator;
pub mod models;
pub mod network;
pub mod phase;
pub mod scenario;
pub mod state;

pub use connection::{AlphaId, ConnectionStructure};
pub use event_map::{EventMapSpec, EventRule};
pub use expr::{Declarations, EvalCtx, Expr, Pred};
pub use field::{ClockRate, VectorFieldSpec};
pub use integrator::{integrate, IntegratorConfig, Trajectory};
pub use network::{Network, NetworkBuilder};
pub use phase::{Factor, PhaseSpace};
pub use state::NetworkState;
