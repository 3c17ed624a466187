//! Combining two trains into one (and splitting one into two) as a handover
//! between two networks sharing a clock.
//!
//! The approach network runs two trains toward the junction at `x = 0`;
//! whichever arrives first waits, and once both sit at the junction the
//! shared clock starts (structure `beta`). When it reaches `s1` — the time
//! the coupling takes — the approach network terminates and the switch rule
//! maps its terminal state `(0, 0, tau)` to the departure network's initial
//! state `(x12 = 0, tau)`. There the combined train holds (`gamma`) until
//! the same clock reaches `s1 + s2`, the station dwell, and departs.
//! Splitting is the inverse: a single train arrives and is held while its
//! clock runs to `s1`; the switch rule then duplicates the clock into the
//! two-train network, which holds both until `s1 + s2`.

use crate::connection::ConnectionStructure;
use crate::expr::{parse_pred, Expr};
use crate::field::ClockRate;
use crate::integrator::{integrate, IntegratorConfig, RunStatus, Trajectory};
use crate::network::{Network, NetworkBuilder};
use crate::phase::Factor;
use crate::state::NetworkState;

/// Parameters of the combine/split pair: speeds of the separate trains, of
/// the combined train, the coupling time `s1`, and the station dwell `s2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineParams {
    pub v1: f64,
    pub v2: f64,
    pub v12: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for CombineParams {
    fn default() -> Self {
        CombineParams { v1: 1.0, v2: 1.0, v12: 1.0, s1: 0.5, s2: 0.5 }
    }
}

impl CombineParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("v1", self.v1),
            ("v2", self.v2),
            ("v12", self.v12),
            ("s1", self.s1),
            ("s2", self.s2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Maps the terminal state of one network of the pair to the initial state
/// of the other when the shared clock reaches `s1`.
#[derive(Debug, Clone, Copy)]
pub struct SwitchRule {
    pub s1: f64,
}

impl SwitchRule {
    /// Two trains coupled at the junction become one: `(0, 0, tau)` to
    /// `(x12 = 0, tau)`, time carried over.
    pub fn combine(&self, terminal: &NetworkState) -> NetworkState {
        debug_assert!(terminal.x.iter().all(|v| v.abs() < 1e-6));
        NetworkState::new(terminal.t, vec![0.0], vec![terminal.tau[0]])
    }

    /// One train splits into two; the clock is duplicated.
    pub fn split(&self, terminal: &NetworkState) -> NetworkState {
        debug_assert!(terminal.x[0].abs() < 1e-6);
        NetworkState::new(terminal.t, vec![0.0, 0.0], vec![terminal.tau[0]; 2])
    }
}

fn pred(s: &str) -> crate::expr::Pred {
    parse_pred(s).expect("model predicate must parse")
}

/// The two-train approach network. Terminates when the shared clock — which
/// only runs once both trains are coupled at the junction — reaches `s1`.
pub fn build_approach(p: &CombineParams) -> Network {
    p.validate().expect("invalid combine parameters");
    let mut b = NetworkBuilder::new("combine_approach");
    b.node("train1", vec![Factor::RealLine]);
    b.node("train2", vec![Factor::RealLine]);
    b.param("v1", p.v1).param("v2", p.v2).param("s1", p.s1);
    b.clock("tau12");
    for node in 0..2 {
        b.constraint(node, 1, crate::expr::Pred::Lit(true), vec![0]);
    }
    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let a1 = b.structure("alpha1", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
    let a2 = b.structure("alpha2", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    // Coupling in progress: both held, mutually connected, clock running.
    let beta = b.structure(
        "beta",
        ConnectionStructure::new(2, vec![1, 1], &[(0, 1), (1, 0)]).unwrap(),
    );
    let run = ClockRate::Running;
    let stop = ClockRate::Stopped;
    b.field(empty, vec![Expr::param("v1"), Expr::param("v2")], vec![stop]);
    b.field(a1, vec![Expr::num(0.0), Expr::param("v2")], vec![stop]);
    b.field(a2, vec![Expr::param("v1"), Expr::num(0.0)], vec![stop]);
    b.field(beta, vec![Expr::num(0.0), Expr::num(0.0)], vec![run]);
    b.rule(pred("x[1][1] == 0 && x[2][1] == 0 && tau[tau12] < s1"), beta);
    b.rule(pred("x[1][1] == 0 && x[2][1] < 0"), a1);
    b.rule(pred("x[1][1] < 0 && x[2][1] == 0"), a2);
    b.default_structure(empty);
    b.termination(pred("tau[tau12] >= s1"));
    b.build().expect("approach network must build")
}

/// The combined-train departure network: held at the junction until the
/// carried clock reaches `s1 + s2`, then moving at `v12`.
pub fn build_departure(p: &CombineParams) -> Network {
    p.validate().expect("invalid combine parameters");
    let mut b = NetworkBuilder::new("combine_departure");
    b.node("train12", vec![Factor::RealLine]);
    b.param("v12", p.v12).param("s1", p.s1).param("s2", p.s2);
    b.clock("tau12");
    b.constraint(0, 1, crate::expr::Pred::Lit(true), vec![0]);
    let empty = b.structure("empty", ConnectionStructure::empty(1));
    let gamma = b.structure("gamma", ConnectionStructure::new(1, vec![1], &[]).unwrap());
    b.field(empty, vec![Expr::param("v12")], vec![ClockRate::Stopped]);
    b.field(gamma, vec![Expr::num(0.0)], vec![ClockRate::Running]);
    b.rule(pred("x[1][1] == 0 && tau[tau12] < s1 + s2"), gamma);
    b.default_structure(empty);
    b.build().expect("departure network must build")
}

/// The combine pair plus its switch rule.
pub fn build_combine_split(p: &CombineParams) -> (Network, Network, SwitchRule) {
    (build_approach(p), build_departure(p), SwitchRule { s1: p.s1 })
}

/// The split pair: the same two networks with their roles reversed. The
/// single train approaches the junction and is held while the clock runs to
/// `s1` (the uncoupling time); the two-train network then holds both trains
/// until `s1 + s2` with the duplicated clock.
pub fn build_split(p: &CombineParams) -> (Network, Network, SwitchRule) {
    p.validate().expect("invalid combine parameters");
    // Approach leg: one train, held at the junction until tau = s1.
    let mut b = NetworkBuilder::new("split_approach");
    b.node("train12", vec![Factor::RealLine]);
    b.param("v12", p.v12).param("s1", p.s1);
    b.clock("tau12");
    b.constraint(0, 1, crate::expr::Pred::Lit(true), vec![0]);
    let empty = b.structure("empty", ConnectionStructure::empty(1));
    let gamma = b.structure("gamma", ConnectionStructure::new(1, vec![1], &[]).unwrap());
    b.field(empty, vec![Expr::param("v12")], vec![ClockRate::Stopped]);
    b.field(gamma, vec![Expr::num(0.0)], vec![ClockRate::Running]);
    b.rule(pred("x[1][1] == 0 && tau[tau12] < s1"), gamma);
    b.default_structure(empty);
    b.termination(pred("tau[tau12] >= s1"));
    let approach = b.build().expect("split approach network must build");

    // Departure leg: two trains, each with a duplicated clock, held until
    // tau = s1 + s2, then released.
    let mut b = NetworkBuilder::new("split_departure");
    b.node("train1", vec![Factor::RealLine]);
    b.node("train2", vec![Factor::RealLine]);
    b.param("v1", p.v1).param("v2", p.v2).param("s1", p.s1).param("s2", p.s2);
    b.clock("tau1");
    b.clock("tau2");
    for node in 0..2 {
        b.constraint(node, 1, crate::expr::Pred::Lit(true), vec![0]);
    }
    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let delta = b.structure(
        "delta",
        ConnectionStructure::new(2, vec![1, 1], &[(0, 1), (1, 0)]).unwrap(),
    );
    b.field(
        empty,
        vec![Expr::param("v1"), Expr::param("v2")],
        vec![ClockRate::Stopped, ClockRate::Stopped],
    );
    b.field(
        delta,
        vec![Expr::num(0.0), Expr::num(0.0)],
        vec![ClockRate::Running, ClockRate::Running],
    );
    b.rule(
        pred("x[1][1] == 0 && x[2][1] == 0 && (tau[tau1] < s1 + s2 || tau[tau2] < s1 + s2)"),
        delta,
    );
    b.default_structure(empty);
    let departure = b.build().expect("split departure network must build");
    (approach, departure, SwitchRule { s1: p.s1 })
}

/// Errors from the handover drivers.
#[derive(Debug, thiserror::Error)]
pub enum CombineError {
    #[error("handover precondition not met by t_max = {t_max}: {status:?}")]
    HandoverNotReached { t_max: f64, status: RunStatus },
    #[error("approach run ended abnormally: {0:?}")]
    Approach(RunStatus),
    #[error("departure run ended abnormally: {0:?}")]
    Departure(RunStatus),
}

/// Both legs of a handover run.
#[derive(Debug)]
pub struct CombineOutcome {
    pub approach: Trajectory,
    pub departure: Trajectory,
    /// When the switch fired (the shared clock reached `s1`).
    pub handover_t: f64,
    /// When the combined train left the junction, if it did.
    pub departure_t: Option<f64>,
}

/// Run the full combine process from trains at `x0` (both negative):
/// approach until the switch rule fires, hand the state over, then run the
/// departure leg for the remaining time budget.
pub fn run_combine(
    p: &CombineParams,
    x0: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<CombineOutcome, CombineError> {
    assert!(x0.0 < 0.0 && x0.1 < 0.0, "trains must start before the junction");
    let (net_a, net_b, rule) = build_combine_split(p);
    let start = net_a
        .initial_state(0.0, vec![x0.0, x0.1])
        .expect("start lies in the phase space");
    let approach = integrate(&net_a, start, cfg);
    let handover_t = match approach.status {
        RunStatus::Terminated { t } => t,
        ref status if status.is_error() => return Err(CombineError::Approach(status.clone())),
        ref status => {
            return Err(CombineError::HandoverNotReached {
                t_max: cfg.t_max,
                status: status.clone(),
            })
        }
    };

    let remaining = cfg.t_max - handover_t;
    if remaining <= 0.0 {
        return Err(CombineError::HandoverNotReached {
            t_max: cfg.t_max,
            status: approach.status.clone(),
        });
    }
    let carried = rule.combine(&approach.final_state);
    let mut cfg_b = cfg.clone();
    cfg_b.t_max = remaining;
    let departure = integrate(&net_b, carried, &cfg_b);
    if departure.status.is_error() {
        return Err(CombineError::Departure(departure.status.clone()));
    }
    let gamma = net_b.structure_by_name("gamma").unwrap();
    let departure_t = departure
        .events
        .iter()
        .find(|e| e.from == gamma && e.to != gamma)
        .map(|e| e.t);
    Ok(CombineOutcome { approach, departure, handover_t, departure_t })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-derived schedule: arrivals at t = 1 and 2, coupling done at
    /// t = 2 + s1, departure at t = 2 + s1 + s2.
    #[test]
    fn combined_train_departs_on_schedule() {
        let p = CombineParams::default();
        let cfg = IntegratorConfig::default().with_t_max(5.0);
        let out = run_combine(&p, (-1.0, -2.0), &cfg).unwrap();
        assert!((out.handover_t - 2.5).abs() < 1e-6, "handover at {}", out.handover_t);
        let dep = out.departure_t.expect("the combined train must depart");
        assert!((dep - 3.0).abs() < 1e-6, "departure at {dep}");
        // Clock carried across the handover, not reset.
        assert!((out.approach.final_state.tau[0] - p.s1).abs() < 1e-9);
        assert!((out.departure.final_state.tau[0] - (p.s1 + p.s2)).abs() < 1e-9);
        // Combined train is moving at v12 after departure.
        let x_end = out.departure.final_state.x[0];
        assert!((x_end - p.v12 * (5.0 - 3.0)).abs() < 1e-6);
    }

    #[test]
    fn short_budget_reports_missed_handover() {
        let p = CombineParams::default();
        let cfg = IntegratorConfig::default().with_t_max(2.0);
        match run_combine(&p, (-1.0, -2.0), &cfg) {
            Err(CombineError::HandoverNotReached { t_max, .. }) => assert_eq!(t_max, 2.0),
            other => panic!("expected missed handover, got {other:?}"),
        }
    }

    #[test]
    fn departure_network_validates_clean() {
        let p = CombineParams::default();
        let (net_a, net_b, _) = build_combine_split(&p);
        assert!(crate::checks::validate_network(&net_a).is_empty());
        assert!(crate::checks::validate_network(&net_b).is_empty());
    }

    /// Split then combine restores the two-train shape: the split departure
    /// leg has the dimensions and clock count the combine approach starts
    /// with, and the handover state maps round-trip.
    #[test]
    fn split_then_combine_restores_two_train_shape() {
        let p = CombineParams::default();
        let (combine_a, combine_b, rule) = build_combine_split(&p);
        let (split_a, split_b, _) = build_split(&p);
        assert_eq!(split_b.dim(), combine_a.dim());
        assert_eq!(split_b.node_count(), 2);
        assert_eq!(split_a.dim(), combine_b.dim());
        assert_eq!(split_a.clock_count(), 1);
        assert_eq!(split_b.clock_count(), 2);

        let terminal = NetworkState::new(1.5, vec![0.0, 0.0], vec![p.s1]);
        let single = rule.combine(&terminal);
        assert_eq!(single.x.len(), 1);
        let double = rule.split(&single);
        assert_eq!(double.x.len(), 2);
        assert_eq!(double.tau, vec![p.s1, p.s1]);
    }

    /// Drive the split: one train arrives at t = 1, is held until tau = s1
    /// (t = 1.5), splits, and both trains are released at tau = s1 + s2
    /// (t = 2).
    #[test]
    fn split_releases_both_trains_after_the_dwell() {
        let p = CombineParams::default();
        let (net_a, net_b, rule) = build_split(&p);
        let cfg = IntegratorConfig::default().with_t_max(5.0);
        let start = net_a.initial_state(0.0, vec![-1.0]).unwrap();
        let leg1 = integrate(&net_a, start, &cfg);
        let RunStatus::Terminated { t } = leg1.status else {
            panic!("split approach should terminate, got {:?}", leg1.status);
        };
        assert!((t - 1.5).abs() < 1e-6);

        let carried = rule.split(&leg1.final_state);
        let mut cfg_b = cfg.clone();
        cfg_b.t_max = 5.0 - t;
        let leg2 = integrate(&net_b, carried, &cfg_b);
        assert!(!leg2.status.is_error());
        let delta = net_b.structure_by_name("delta").unwrap();
        let release = leg2
            .events
            .iter()
            .find(|e| e.from == delta && e.to != delta)
            .map(|e| e.t)
            .expect("trains must be released");
        assert!((release - 2.0).abs() < 1e-6, "release at {release}");
        // Both trains moving after the release.
        assert!(leg2.final_state.x.iter().all(|&v| v > 0.0));
    }
}
