//! Small networks exercising the integrator's edge cases: constrained
//! oscillators that couple on a torus and release on phase agreement, a
//! collision that freezes forever, an event set with no continuation (and
//! its sliding repair), half-open event sets with a discontinuous semiflow,
//! and an event accumulation that must trip the Zeno guard.

use crate::connection::ConnectionStructure;
use crate::expr::{parse_expr, parse_pred, Expr, Pred};
use crate::network::{Network, NetworkBuilder};
use crate::phase::Factor;

fn pred(s: &str) -> Pred {
    parse_pred(s).expect("fixture predicate must parse")
}

fn expr(s: &str) -> Expr {
    parse_expr(s).expect("fixture expression must parse")
}

/// Parameters for the torus-coupling fixture: two nodes on `R x T` drift at
/// speed `v_i` until each is stopped at `x = 0`; once both are stopped
/// their phases couple, and they release together when the phase distance
/// drops to `eps` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusCouplingParams {
    pub v1: f64,
    pub v2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub kc: f64,
    pub eps: f64,
}

impl Default for TorusCouplingParams {
    fn default() -> Self {
        TorusCouplingParams { v1: 1.0, v2: 1.0, omega1: 1.0, omega2: 1.0, kc: 0.5, eps: 0.1 }
    }
}

impl TorusCouplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.v1 == 0.0 || self.v2 == 0.0 {
            // Release depends on the drift moving each node off x = 0.
            return Err("drift speeds must be nonzero".into());
        }
        if !(self.kc > 0.0) || !(self.eps > 0.0) {
            return Err("coupling gain and release tolerance must be positive".into());
        }
        Ok(())
    }
}

/// Two nodes on `R x T`: drift `(v_i, omega_i)` when free, the line
/// coordinate held on `{0} x T` when stopped, and phases pulled together by
/// `kc * sin` coupling when both are stopped. Released (back to the free
/// structure) when the phase distance is at most `eps`.
pub fn build_torus_coupling(p: &TorusCouplingParams) -> Network {
    p.validate().expect("invalid torus-coupling parameters");
    let mut b = NetworkBuilder::new("torus_coupling");
    b.node_named("n1", vec![Factor::RealLine, Factor::Circle], vec!["x1", "theta1"]);
    b.node_named("n2", vec![Factor::RealLine, Factor::Circle], vec!["x2", "theta2"]);
    b.param("v1", p.v1)
        .param("v2", p.v2)
        .param("om1", p.omega1)
        .param("om2", p.omega2)
        .param("kc", p.kc)
        .param("eps", p.eps);
    // The invariant circle {0} x T: line coordinate frozen, phase free.
    b.constraint(0, 1, Pred::Lit(true), vec![0]);
    b.constraint(1, 1, Pred::Lit(true), vec![0]);

    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let a1 = b.structure("alpha1", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
    let a2 = b.structure("alpha2", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    let beta = b.structure(
        "beta",
        ConnectionStructure::new(2, vec![1, 1], &[(0, 1), (1, 0)]).unwrap(),
    );

    let free = |i: usize| (expr(&format!("v{i}")), expr(&format!("om{i}")));
    let (f1, t1) = free(1);
    let (f2, t2) = free(2);
    b.field(empty, vec![f1.clone(), t1.clone(), f2.clone(), t2.clone()], vec![]);
    b.field(a1, vec![Expr::num(0.0), t1.clone(), f2.clone(), t2.clone()], vec![]);
    b.field(a2, vec![f1, t1, Expr::num(0.0), t2], vec![]);
    b.field(
        beta,
        vec![
            Expr::num(0.0),
            expr("om1 + kc * sin(x[2][2] - x[1][2])"),
            Expr::num(0.0),
            expr("om2 + kc * sin(x[1][2] - x[2][2])"),
        ],
        vec![],
    );

    b.rule(pred("x[1][1] == 0 && x[2][1] == 0 && circ_dist(x[1][2], x[2][2]) > eps"), beta);
    b.rule(pred("x[1][1] == 0 && !(x[2][1] == 0)"), a1);
    b.rule(pred("x[2][1] == 0 && !(x[1][1] == 0)"), a2);
    b.default_structure(empty);
    b.build().expect("torus-coupling network must build")
}

/// Two agents approaching on a line: both move (at +1 and -1) until their
/// positions coincide, after which everything is frozen forever. The
/// semiflow is discontinuous across the diagonal: a point on it never
/// moves, while arbitrarily close points with the first agent ahead run
/// away forever.
pub fn build_collision() -> Network {
    let mut b = NetworkBuilder::new("collision");
    b.node("p1", vec![Factor::RealLine]);
    b.node("p2", vec![Factor::RealLine]);
    b.constraint(0, 1, Pred::Lit(true), vec![0]);
    b.constraint(1, 1, Pred::Lit(true), vec![0]);
    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let collided = b.structure(
        "collided",
        ConnectionStructure::new(2, vec![1, 1], &[(0, 1), (1, 0)]).unwrap(),
    );
    b.field(empty, vec![Expr::num(1.0), Expr::num(-1.0)], vec![]);
    b.field(collided, vec![Expr::num(0.0), Expr::num(0.0)], vec![]);
    b.rule(pred("x[1][1] - x[2][1] == 0"), collided);
    b.default_structure(empty);
    b.build().expect("collision network must build")
}

/// A field pair with no continuation on the switching line `x = 0`: the
/// left field `(1, -2)` pushes out of its own region, the right field
/// `(-1, 0)` pushes straight back. With `with_sliding` a third structure is
/// added on the line itself carrying the tangent sum field `(0, -2)`, which
/// repairs the flow.
pub fn build_chatter(with_sliding: bool) -> Network {
    let mut b = NetworkBuilder::new(if with_sliding { "chatter_sliding" } else { "chatter" });
    b.node("h", vec![Factor::RealLine]);
    b.node("v", vec![Factor::RealLine]);
    b.constraint(0, 1, Pred::Lit(true), vec![0]);
    b.constraint(1, 1, Pred::Lit(true), vec![0]);
    let left = b.structure("left", ConnectionStructure::empty(2));
    // The right field holds the second coordinate still.
    let right = b.structure("right", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    b.field(left, vec![Expr::num(1.0), Expr::num(-2.0)], vec![]);
    b.field(right, vec![Expr::num(-1.0), Expr::num(0.0)], vec![]);
    if with_sliding {
        // On the line the first coordinate is held and the sum field slides.
        let slide = b.structure("slide", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
        b.field(slide, vec![Expr::num(0.0), Expr::num(-2.0)], vec![]);
        b.rule(pred("x[1][1] == 0"), slide);
        b.rule(pred("x[1][1] < 0"), left);
    } else {
        b.rule(pred("x[1][1] <= 0"), left);
    }
    b.default_structure(right);
    b.build().expect("chatter network must build")
}

/// Half-open event sets on the axes: on the negative first axis the flow
/// runs right along it, on the positive second axis it runs down, and
/// everywhere else it moves diagonally with the sum field `(1, -1)`. The
/// semiflow is discontinuous across both axis segments and continuous at
/// the origin.
pub fn build_axis_slide() -> Network {
    let mut b = NetworkBuilder::new("axis_slide");
    b.node("h", vec![Factor::RealLine]);
    b.node("v", vec![Factor::RealLine]);
    b.constraint(0, 1, Pred::Lit(true), vec![0]);
    b.constraint(1, 1, Pred::Lit(true), vec![0]);
    let both = b.structure("free", ConnectionStructure::empty(2));
    let axis1 = b.structure("axis1", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    let axis2 = b.structure("axis2", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
    b.field(both, vec![Expr::num(1.0), Expr::num(-1.0)], vec![]);
    b.field(axis1, vec![Expr::num(1.0), Expr::num(0.0)], vec![]);
    b.field(axis2, vec![Expr::num(0.0), Expr::num(-1.0)], vec![]);
    // Strict inequalities keep the sets half-open: the origin belongs to
    // neither axis set and carries the sum field.
    b.rule(pred("x[1][1] < 0 && x[2][1] == 0"), axis1);
    b.rule(pred("x[1][1] == 0 && x[2][1] > 0"), axis2);
    b.default_structure(both);
    b.build().expect("axis-slide network must build")
}

/// A contracting piecewise-constant rotation: each quadrant's field carries
/// the state into the next quadrant while shrinking the amplitude to 9/10
/// per quarter-turn, so switching times accumulate geometrically toward a
/// finite instant (t = dwell/(1 - 9/10), independent of step size). Runs
/// long enough must trip the Zeno guard. The four structures differ only as
/// labels for the four regimes; the connection content is immaterial here.
pub fn build_zeno_spiral() -> Network {
    let mut b = NetworkBuilder::new("zeno_spiral");
    b.node("h", vec![Factor::RealLine]);
    b.node("v", vec![Factor::RealLine]);
    let mm = b.structure("mm", ConnectionStructure::empty(2));
    let mp = b.structure("mp", ConnectionStructure::new(2, vec![0, 0], &[(0, 1)]).unwrap());
    let pp = b.structure("pp", ConnectionStructure::new(2, vec![0, 0], &[(1, 0)]).unwrap());
    let pm = b.structure(
        "pm",
        ConnectionStructure::new(2, vec![0, 0], &[(0, 1), (1, 0)]).unwrap(),
    );
    let f = |a: f64, c: f64| vec![Expr::num(a), Expr::num(c)];
    b.field(mm, f(-9.0, 10.0), vec![]);
    b.field(mp, f(10.0, 9.0), vec![]);
    b.field(pp, f(9.0, -10.0), vec![]);
    b.field(pm, f(-10.0, -9.0), vec![]);
    // Closed lower-left and upper-right quadrants, open elsewhere: each
    // boundary belongs to the regime whose field points across it.
    b.rule(pred("x[1][1] <= 0 && x[2][1] <= 0"), mm);
    b.rule(pred("x[1][1] < 0 && x[2][1] > 0"), mp);
    b.rule(pred("x[1][1] >= 0 && x[2][1] >= 0"), pp);
    b.rule(pred("x[1][1] > 0 && x[2][1] < 0"), pm);
    b.default_structure(mm);
    b.build().expect("zeno spiral network must build")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, EventCause, IntegratorConfig, RunStatus};

    fn cfg(t_max: f64) -> IntegratorConfig {
        IntegratorConfig::default().with_t_max(t_max)
    }

    /// Hand-derived schedule: stops at t = 1 and 2; under coupling the
    /// phase gap psi obeys psi' = -2 kc sin(psi), giving the release time
    /// by quadrature; afterwards both line coordinates move off zero.
    #[test]
    fn torus_coupling_stops_couples_and_releases() {
        let p = TorusCouplingParams::default();
        let net = build_torus_coupling(&p);
        let x0 = vec![-1.0, 0.0, -2.0, 2.0];
        let tr = integrate(&net, net.initial_state(0.0, x0).unwrap(), &cfg(8.0));
        assert!(!tr.status.is_error(), "{:?}", tr.status);

        let beta = net.structure_by_name("beta").unwrap();
        let t_couple = tr
            .events
            .iter()
            .find(|e| e.to == beta)
            .map(|e| e.t)
            .expect("coupling must engage");
        assert!((t_couple - 2.0).abs() < 1e-6);

        // psi(2) = dist(2, 4) = 2 rad; psi' = -sin(psi) for kc = 1/2, so
        // the time to reach eps is ln tan(1) - ln tan(eps/2).
        let quadrature = ((1.0f64).tan() / (p.eps / 2.0).tan()).ln();
        let release = tr
            .events
            .iter()
            .find(|e| e.from == beta && e.to != beta)
            .expect("phases must synchronize and release");
        assert!(
            (release.t - (2.0 + quadrature)).abs() < 1e-4,
            "release at {}, expected {}",
            release.t,
            2.0 + quadrature
        );
        // Released at phase distance eps, and both drift off x = 0 after.
        let gap = crate::phase::Factor::Circle
            .normalize(release.x[1] - release.x[3])
            .min(crate::phase::Factor::Circle.normalize(release.x[3] - release.x[1]));
        assert!((gap - p.eps).abs() < 1e-6, "gap at release {gap}");
        let end = &tr.final_state;
        assert!(end.x[0] > 0.0 && end.x[2] > 0.0, "both must move on: {:?}", end.x);
    }

    #[test]
    fn collision_freezes_on_the_diagonal_and_passes_nearby() {
        let net = build_collision();
        // Exactly on the diagonal: frozen forever, no events.
        let tr = integrate(&net, net.initial_state(0.0, vec![0.5, 0.5]).unwrap(), &cfg(2.0));
        assert_eq!(tr.final_state.x, vec![0.5, 0.5]);
        assert!(tr.events.is_empty());
        assert_eq!(tr.status, RunStatus::Completed);

        // First agent slightly ahead: the gap only grows; never collides.
        let tr = integrate(
            &net,
            net.initial_state(0.0, vec![0.5 + 1e-3, 0.5]).unwrap(),
            &cfg(2.0),
        );
        assert!(tr.events.is_empty());
        assert!((tr.final_state.x[0] - (0.5 + 1e-3 + 2.0)).abs() < 1e-9);

        // Approaching from behind: collides at t = 0.1 and freezes.
        let tr = integrate(&net, net.initial_state(0.0, vec![0.4, 0.6]).unwrap(), &cfg(2.0));
        assert_eq!(tr.events.len(), 1);
        assert!((tr.events[0].t - 0.1).abs() < 1e-6);
        assert!((tr.final_state.x[0] - 0.5).abs() < 1e-9);
        assert!((tr.final_state.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn chatter_without_sliding_has_no_continuation() {
        let net = build_chatter(false);
        let tr = integrate(&net, net.initial_state(0.0, vec![-1.0, 0.0]).unwrap(), &cfg(3.0));
        let RunStatus::NoContinuation { t } = tr.status else {
            panic!("expected no continuation, got {:?}", tr.status);
        };
        assert!((t - 1.0).abs() < 1e-6, "stuck at t = {t}");
    }

    #[test]
    fn chatter_with_sliding_flows_down_the_line() {
        let net = build_chatter(true);
        let tr = integrate(&net, net.initial_state(0.0, vec![-1.0, 0.0]).unwrap(), &cfg(3.0));
        assert!(!tr.status.is_error(), "{:?}", tr.status);
        let (x, _) = tr.state_at(3.0).unwrap();
        assert!((x[0] - 0.0).abs() < 1e-9, "must stay on the line, got {}", x[0]);
        assert!((x[1] - (-2.0 - 2.0 * 2.0)).abs() < 1e-6, "slides at rate -2: {}", x[1]);
    }

    /// Entering the negative first axis from above: the flow turns and runs
    /// right along the axis, exactly holding the second coordinate, then
    /// releases diagonally at the origin. Starting just below the axis
    /// skips the slide entirely — the semiflow is discontinuous there.
    #[test]
    fn axis_slide_is_discontinuous_across_the_axis() {
        let net = build_axis_slide();
        let tr = integrate(&net, net.initial_state(0.0, vec![-2.0, 1.0]).unwrap(), &cfg(3.0));
        assert!(!tr.status.is_error());
        let entry = tr.events.first().expect("must enter the axis set");
        assert!((entry.t - 1.0).abs() < 1e-6);
        assert!(matches!(entry.cause, EventCause::Guard { .. }));
        let (x, _) = tr.state_at(1.5).unwrap();
        assert_eq!(x[1], 0.0, "second coordinate is held on the axis");
        let (x, _) = tr.state_at(3.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - (-1.0)).abs() < 1e-6);

        // Just below the axis: no event, pure diagonal flight.
        let tr2 = integrate(
            &net,
            net.initial_state(0.0, vec![-2.0, -1e-6]).unwrap(),
            &cfg(3.0),
        );
        assert!(tr2.events.is_empty());
        let (x2, _) = tr2.state_at(3.0).unwrap();
        assert!((x2[1] - x[1]).abs() > 0.9, "semiflow must jump across the axis");
    }

    #[test]
    fn zeno_spiral_trips_the_guard() {
        let net = build_zeno_spiral();
        let mut cfg = IntegratorConfig::default().with_t_max(0.5).with_h(1e-4);
        cfg.eps_loc = 1e-12;
        let tr = integrate(&net, net.initial_state(0.0, vec![0.0, -0.1]).unwrap(), &cfg);
        let RunStatus::ZenoDetected { t, count, .. } = tr.status else {
            panic!("expected Zeno detection, got {:?}", tr.status);
        };
        // Quarter-turn times halve; accumulation is at t = 0.1.
        assert!(t < 0.11, "accumulation predicted near 0.1, detected at {t}");
        assert!(count >= 50);
    }

    #[test]
    fn fixtures_validate_clean() {
        let nets = [
            build_torus_coupling(&TorusCouplingParams::default()),
            build_collision(),
            build_chatter(false),
            build_chatter(true),
            build_axis_slide(),
            build_zeno_spiral(),
        ];
        for net in &nets {
            assert!(
                crate::checks::validate_network(net).is_empty(),
                "{} has validation findings",
                net.name()
            );
        }
    }
}
