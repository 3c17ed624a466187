//! Two trains crossing on a single-track line with a passing loop.
//!
//! Both trains live on the interval `[-a, b]`: train 1 departs station A at
//! `-a` heading right (speed `v1 > 0`), train 2 departs station B at `b`
//! heading left (`v2 < 0`), and the single passing loop P sits at `0`. To
//! pass each other both trains must stop at P, stay together for the joint
//! threshold `s` and individually for `s1`/`s2` (each driver keeps a local
//! stopwatch; a third stopwatch runs while both are stopped), and the run
//! terminates when train 1 reaches `b` and train 2 reaches `-a`.
//!
//! Optional start delays `t1`/`t2` hold each train at its origin station
//! until a dedicated hold clock expires, which adds partially-held
//! connection structures (including mixed ones: one train already waiting
//! at P while the other is still held at its origin).
//!
//! The oscillator variant gives each driver a phase oscillator; the phases
//! couple diffusively only while both trains are stopped at P, and the
//! trains are released only once the phases agree to within a tolerance.

use crate::connection::ConnectionStructure;
use crate::expr::{parse_pred, Expr, Func, Pred};
use crate::field::ClockRate;
use crate::network::{Network, NetworkBuilder};
use crate::phase::Factor;

/// Parameters of the trains line. See the module docs for the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainsParams {
    /// Station A sits at `-a` (a > 0).
    pub a: f64,
    /// Station B sits at `b` (b > 0).
    pub b: f64,
    /// Train 1 speed, rightward (> 0).
    pub v1: f64,
    /// Train 2 speed, leftward (< 0).
    pub v2: f64,
    /// Joint stop threshold: both trains together at P for at least `s`.
    pub s: f64,
    /// Individual stop threshold of train 1 at P.
    pub s1: f64,
    /// Individual stop threshold of train 2 at P.
    pub s2: f64,
    /// Start delay of train 1 at station A (0 = departs immediately).
    pub t1: f64,
    /// Start delay of train 2 at station B.
    pub t2: f64,
}

impl Default for TrainsParams {
    fn default() -> Self {
        TrainsParams {
            a: 1.0,
            b: 1.0,
            v1: 1.0,
            v2: -1.0,
            s: 1.0,
            s1: 0.0,
            s2: 0.0,
            t1: 0.0,
            t2: 0.0,
        }
    }
}

impl TrainsParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(format!("track extents must be positive: a={}, b={}", self.a, self.b));
        }
        if !(self.v1 > 0.0) {
            return Err(format!("train 1 must move right: v1={}", self.v1));
        }
        if !(self.v2 < 0.0) {
            return Err(format!("train 2 must move left: v2={}", self.v2));
        }
        for (name, v) in [
            ("s", self.s),
            ("s1", self.s1),
            ("s2", self.s2),
            ("t1", self.t1),
            ("t2", self.t2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("threshold {name} must be nonnegative and finite, got {v}"));
            }
        }
        Ok(())
    }

    fn has_holds(&self) -> bool {
        self.t1 > 0.0 || self.t2 > 0.0
    }

    /// Closed-form schedule (used as the test oracle): time each train
    /// reaches P, departs P, and arrives at the far station, assuming the
    /// standard initialization `(x1, x2) = (-a, b)`.
    pub fn schedule(&self) -> TrainsSchedule {
        let p1 = self.t1 + self.a / self.v1;
        let p2 = self.t2 + self.b / (-self.v2);
        let together = p1.max(p2);
        let depart1 = (together + self.s).max(p1 + self.s1);
        let depart2 = (together + self.s).max(p2 + self.s2);
        TrainsSchedule {
            reach_p1: p1,
            reach_p2: p2,
            depart1,
            depart2,
            arrive1: depart1 + self.b / self.v1,
            arrive2: depart2 + self.a / (-self.v2),
        }
    }
}

/// Closed-form timetable of one crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainsSchedule {
    pub reach_p1: f64,
    pub reach_p2: f64,
    pub depart1: f64,
    pub depart2: f64,
    pub arrive1: f64,
    pub arrive2: f64,
}

impl TrainsSchedule {
    pub fn completion(&self) -> f64 {
        self.arrive1.max(self.arrive2)
    }
}

/// Parameters of the driver-phase oscillators.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorParams {
    /// Natural frequencies (radians / time unit).
    pub omega1: f64,
    pub omega2: f64,
    /// Coupling gain (> 0), active only while both trains are at P.
    pub kc: f64,
    /// Release tolerance on the phase difference, in turns (0, 0.5).
    pub eps_turns: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams { omega1: 1.0, omega2: 1.0, kc: 0.5, eps_turns: 0.1 }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kc > 0.0) {
            return Err(format!("coupling gain must be positive, got {}", self.kc));
        }
        if !(self.eps_turns > 0.0 && self.eps_turns < 0.5) {
            return Err(format!("sync tolerance must lie in (0, 0.5) turns, got {}", self.eps_turns));
        }
        Ok(())
    }

    /// Whether the release gate can open for phase differences near the
    /// unstable equilibrium: the locked phase offset `arcsin(Δω / 2k)` must
    /// be smaller than the tolerance.
    pub fn gate_feasible(&self, p: &TrainsParams) -> bool {
        let _ = p;
        let ratio = (self.omega1 - self.omega2).abs() / (2.0 * self.kc);
        ratio < 1.0 && ratio.asin() < std::f64::consts::TAU * self.eps_turns
    }
}

fn pred(s: &str) -> Pred {
    parse_pred(s).expect("builder predicate must parse")
}

struct StructureSet {
    empty: crate::connection::AlphaId,
    a1: crate::connection::AlphaId,
    a2: crate::connection::AlphaId,
    beta: crate::connection::AlphaId,
    holds: Option<HoldSet>,
}

struct HoldSet {
    both: crate::connection::AlphaId,
    /// Train 1 waiting at P, train 2 still held at B.
    a1_hold2: crate::connection::AlphaId,
    /// Train 2 waiting at P, train 1 still held at A.
    a2_hold1: crate::connection::AlphaId,
    hold1: crate::connection::AlphaId,
    hold2: crate::connection::AlphaId,
}

fn declare_structures(b: &mut NetworkBuilder, with_holds: bool) -> StructureSet {
    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let a1 = b.structure("alpha1", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
    let a2 = b.structure("alpha2", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    let beta = b.structure(
        "beta",
        ConnectionStructure::new(2, vec![1, 1], &[(0, 1), (1, 0)]).unwrap(),
    );
    let holds = with_holds.then(|| HoldSet {
        both: b.structure("hold_both", ConnectionStructure::new(2, vec![2, 2], &[]).unwrap()),
        a1_hold2: b.structure("alpha1_hold2", ConnectionStructure::new(2, vec![1, 2], &[]).unwrap()),
        a2_hold1: b.structure("alpha2_hold1", ConnectionStructure::new(2, vec![2, 1], &[]).unwrap()),
        hold1: b.structure("hold1", ConnectionStructure::new(2, vec![2, 0], &[]).unwrap()),
        hold2: b.structure("hold2", ConnectionStructure::new(2, vec![0, 2], &[]).unwrap()),
    });
    StructureSet { empty, a1, a2, beta, holds }
}

/// Build the trains network: 2 position coordinates and 3 clocks (plus two
/// hold clocks when start delays are present). Panics on invalid params;
/// call [`TrainsParams::validate`] first for a friendly error.
pub fn build_trains(p: &TrainsParams) -> Network {
    build(p, None)
}

/// The oscillator variant: each node gains a circle coordinate, coupled
/// only under `beta`, and `beta` additionally holds until the phases agree
/// to within `q.eps_turns`. Logs a warning when the release gate is
/// infeasible for some initial phase differences.
pub fn build_trains_oscillators(p: &TrainsParams, q: &OscillatorParams) -> Network {
    if !q.gate_feasible(p) {
        log::warn!(
            "oscillator release gate infeasible: arcsin(|omega1-omega2| / 2 kc) >= 2 pi eps; \
             trains may never be released"
        );
    }
    build(p, Some(q))
}

fn build(p: &TrainsParams, q: Option<&OscillatorParams>) -> Network {
    p.validate().expect("invalid trains parameters");
    if let Some(q) = q {
        q.validate().expect("invalid oscillator parameters");
    }
    let mut b = NetworkBuilder::new(if q.is_some() { "trains_oscillators" } else { "trains" });

    let line = Factor::Interval { lo: -p.a, hi: p.b };
    match q {
        None => {
            b.node("train1", vec![line]);
            b.node("train2", vec![line]);
        }
        Some(_) => {
            b.node_named("train1", vec![line, Factor::Circle], vec!["x1", "theta1"]);
            b.node_named("train2", vec![line, Factor::Circle], vec!["x2", "theta2"]);
        }
    }

    b.param("a", p.a)
        .param("b", p.b)
        .param("v1", p.v1)
        .param("v2", p.v2)
        .param("s", p.s)
        .param("s1", p.s1)
        .param("s2", p.s2);
    if let Some(q) = q {
        b.param("om1", q.omega1)
            .param("om2", q.omega2)
            .param("kc", q.kc)
            .param("eps_sync", std::f64::consts::TAU * q.eps_turns);
    }

    b.clock("tau1");
    b.clock("tau2");
    b.clock("tau12");
    let with_holds = p.has_holds();
    if with_holds {
        b.param("t1", p.t1).param("t2", p.t2);
        b.clock("d1");
        b.clock("d2");
    }

    // Full stop: every point of the line is a leaf; the position coordinate
    // is frozen wherever the constraint is active. Label 1 is the stop at
    // the passing loop, label 2 the initial hold at the origin station —
    // the same degeneracy, but distinct labels keep "stopped at P" and
    // "still held at the origin" distinguishable connection structures.
    for node in 0..2 {
        b.constraint(node, 1, Pred::Lit(true), vec![0]);
        if with_holds {
            b.constraint(node, 2, Pred::Lit(true), vec![0]);
        }
    }

    let s = declare_structures(&mut b, with_holds);

    // Vector fields. Rate layout: (tau1, tau2, tau12[, d1, d2]).
    let rates = |r: [u8; 5]| -> Vec<ClockRate> {
        let n = if with_holds { 5 } else { 3 };
        r[..n]
            .iter()
            .map(|&bit| ClockRate::from_bit(bit).unwrap())
            .collect()
    };
    // Position components for (train1 moving?, train2 moving?).
    let xdot = |m1: bool, m2: bool| -> (Expr, Expr) {
        (
            if m1 { Expr::param("v1") } else { Expr::num(0.0) },
            if m2 { Expr::param("v2") } else { Expr::num(0.0) },
        )
    };
    // Assemble the flat component list, interleaving oscillator phases when
    // present. `coupled` selects the cross-coupled phase field of `beta`.
    let components = |m1: bool, m2: bool, coupled: bool| -> Vec<Expr> {
        let (f1, f2) = xdot(m1, m2);
        match q {
            None => vec![f1, f2],
            Some(_) => {
                let (th1, th2) = if coupled {
                    // omega_i + kc * sin(theta_j - theta_i)
                    let diff12 = Expr::state(2, 2).sub(Expr::state(1, 2));
                    let diff21 = Expr::state(1, 2).sub(Expr::state(2, 2));
                    (
                        Expr::param("om1").add(
                            Expr::param("kc").mul(Expr::call(Func::Sin, vec![diff12])),
                        ),
                        Expr::param("om2").add(
                            Expr::param("kc").mul(Expr::call(Func::Sin, vec![diff21])),
                        ),
                    )
                } else {
                    (Expr::param("om1"), Expr::param("om2"))
                };
                vec![f1, th1, f2, th2]
            }
        }
    };

    b.field(s.empty, components(true, true, false), rates([0, 0, 0, 0, 0]));
    b.field(s.a1, components(false, true, false), rates([1, 0, 0, 0, 0]));
    b.field(s.a2, components(true, false, false), rates([0, 1, 0, 0, 0]));
    b.field(s.beta, components(false, false, true), rates([1, 1, 1, 0, 0]));
    if let Some(h) = &s.holds {
        b.field(h.both, components(false, false, false), rates([0, 0, 0, 1, 1]));
        b.field(h.a1_hold2, components(false, false, false), rates([1, 0, 0, 0, 1]));
        b.field(h.a2_hold1, components(false, false, false), rates([0, 1, 0, 1, 0]));
        b.field(h.hold1, components(false, true, false), rates([0, 0, 0, 1, 0]));
        b.field(h.hold2, components(true, false, false), rates([0, 0, 0, 0, 1]));
    }

    // Event rules, first match wins. The hold rules come first (origin
    // holds override everything), then `beta` (its clauses overlap the
    // waiting clauses of `alpha1`/`alpha2` exactly at x1 = x2 = 0).
    let (pos1, pos2) = ("x[1][1]", "x[2][1]");
    if let Some(h) = &s.holds {
        b.rule(
            pred(&format!(
                "{pos1} == -a && tau[d1] < t1 && {pos2} == b && tau[d2] < t2"
            )),
            h.both,
        );
        b.rule(
            pred(&format!("{pos1} == 0 && {pos2} == b && tau[d2] < t2")),
            h.a1_hold2,
        );
        b.rule(
            pred(&format!("{pos2} == 0 && {pos1} == -a && tau[d1] < t1")),
            h.a2_hold1,
        );
        b.rule(pred(&format!("{pos1} == -a && tau[d1] < t1")), h.hold1);
        b.rule(pred(&format!("{pos2} == b && tau[d2] < t2")), h.hold2);
    }
    let beta_when = match q {
        None => format!(
            "{pos1} == 0 && {pos2} == 0 && (tau[tau12] < s || (tau[tau1] < s1 && tau[tau2] < s2))"
        ),
        Some(_) => format!(
            "{pos1} == 0 && {pos2} == 0 && (tau[tau12] < s \
             || circ_dist(x[1][2], x[2][2]) > eps_sync \
             || (tau[tau1] < s1 && tau[tau2] < s2))"
        ),
    };
    b.rule(pred(&beta_when), s.beta);
    b.rule(
        pred(&format!(
            "({pos1} == 0 && {pos2} > 0) || ({pos1} == 0 && {pos2} <= 0 && tau[tau1] < s1)"
        )),
        s.a1,
    );
    b.rule(
        pred(&format!(
            "({pos2} == 0 && {pos1} < 0) || ({pos2} == 0 && {pos1} >= 0 && tau[tau2] < s2)"
        )),
        s.a2,
    );
    b.default_structure(s.empty);

    b.termination(pred(&format!("{pos1} == b && {pos2} == -a")));
    b.build().expect("trains network must build")
}

/// The zero-threshold variant: no clocks at all, structure set
/// `{alpha1, alpha2, empty}`, and the event map reduced to the two
/// waiting clauses. Requires all thresholds and delays zero.
pub fn build_trains_zero_threshold(p: &TrainsParams) -> Network {
    p.validate().expect("invalid trains parameters");
    assert!(
        p.s == 0.0 && p.s1 == 0.0 && p.s2 == 0.0 && p.t1 == 0.0 && p.t2 == 0.0,
        "zero-threshold variant requires all thresholds and delays zero"
    );
    let mut b = NetworkBuilder::new("trains_zero_threshold");
    let line = Factor::Interval { lo: -p.a, hi: p.b };
    b.node("train1", vec![line]);
    b.node("train2", vec![line]);
    b.param("a", p.a)
        .param("b", p.b)
        .param("v1", p.v1)
        .param("v2", p.v2);
    for node in 0..2 {
        b.constraint(node, 1, Pred::Lit(true), vec![0]);
    }
    let empty = b.structure("empty", ConnectionStructure::empty(2));
    let a1 = b.structure("alpha1", ConnectionStructure::new(2, vec![1, 0], &[]).unwrap());
    let a2 = b.structure("alpha2", ConnectionStructure::new(2, vec![0, 1], &[]).unwrap());
    b.field(empty, vec![Expr::param("v1"), Expr::param("v2")], vec![]);
    b.field(a1, vec![Expr::num(0.0), Expr::param("v2")], vec![]);
    b.field(a2, vec![Expr::param("v1"), Expr::num(0.0)], vec![]);
    b.rule(pred("x[1][1] == 0 && x[2][1] > 0"), a1);
    b.rule(pred("x[2][1] == 0 && x[1][1] < 0"), a2);
    b.default_structure(empty);
    b.termination(pred("x[1][1] == b && x[2][1] == -a"));
    b.build().expect("zero-threshold trains network must build")
}

/// Standard initialization: trains at their origin stations, clocks zero.
/// Oscillator phases (radians) must be supplied for the oscillator variant.
pub fn initial_state(net: &Network, p: &TrainsParams, phases: Option<(f64, f64)>) -> crate::state::NetworkState {
    let x = match phases {
        None => vec![-p.a, p.b],
        Some((th1, th2)) => vec![-p.a, th1, p.b, th2],
    };
    net.initial_state(0.0, x).expect("initial state must lie in phase space")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, EventCause, IntegratorConfig, RunStatus};

    fn cfg(t_max: f64) -> IntegratorConfig {
        IntegratorConfig { t_max, ..IntegratorConfig::default() }
    }

    /// Event times where the active structure changed to `name`.
    fn times_entering<'a>(
        tr: &'a crate::integrator::Trajectory,
        net: &'a Network,
        name: &'a str,
    ) -> impl Iterator<Item = f64> + 'a {
        tr.events
            .iter()
            .filter(move |e| e.from != e.to && net.structure_name(e.to) == name)
            .map(|e| e.t)
    }

    #[test]
    fn symmetric_stop_schedule() {
        let p = TrainsParams::default(); // a=b=1, |v|=1, s=1
        let net = build_trains(&p);
        let tr = integrate(&net, initial_state(&net, &p, None), &cfg(10.0));
        let sched = p.schedule();
        assert_eq!(sched.depart1, 2.0);

        let t_beta: Vec<f64> = times_entering(&tr, &net, "beta").collect();
        assert_eq!(t_beta.len(), 1, "events: {:?}", tr.events);
        assert!((t_beta[0] - 1.0).abs() < 1e-6, "stop at {}", t_beta[0]);

        let t_empty: Vec<f64> = times_entering(&tr, &net, "empty").collect();
        assert_eq!(t_empty.len(), 1);
        assert!((t_empty[0] - 2.0).abs() < 1e-6, "departure at {}", t_empty[0]);

        match tr.status {
            RunStatus::Terminated { t } => assert!((t - sched.completion()).abs() < 1e-6),
            ref s => panic!("expected termination, got {s:?}"),
        }
    }

    #[test]
    fn asymmetric_first_arrival_waits() {
        let p = TrainsParams { b: 2.0, s: 0.0, ..TrainsParams::default() };
        let net = build_trains(&p);
        let tr = integrate(&net, initial_state(&net, &p, None), &cfg(10.0));

        // Train 1 reaches P at t=1 and waits for train 2 (alpha1); both
        // released the moment train 2 arrives (t=2, all thresholds zero).
        let t_a1: Vec<f64> = times_entering(&tr, &net, "alpha1").collect();
        assert_eq!(t_a1.len(), 1);
        assert!((t_a1[0] - 1.0).abs() < 1e-6);
        let t_empty: Vec<f64> = times_entering(&tr, &net, "empty").collect();
        assert_eq!(t_empty.len(), 1);
        assert!((t_empty[0] - 2.0).abs() < 1e-6);

        let sched = p.schedule();
        assert!((sched.arrive1 - 4.0).abs() < 1e-12);
        assert!((sched.arrive2 - 3.0).abs() < 1e-12);
        match tr.status {
            RunStatus::Terminated { t } => assert!((t - 4.0).abs() < 1e-6),
            ref s => panic!("expected termination, got {s:?}"),
        }
        // Train 2's arrival is a boundary stop, recorded before termination.
        assert!(tr
            .events
            .iter()
            .any(|e| matches!(e.cause, EventCause::BoundaryStop { .. }) && (e.t - 3.0).abs() < 1e-6));
    }

    #[test]
    fn zero_thresholds_pass_through() {
        let p = TrainsParams { s: 0.0, ..TrainsParams::default() };
        let net = build_trains(&p);
        let tr = integrate(&net, initial_state(&net, &p, None), &cfg(10.0));
        // Simultaneous arrival with all thresholds zero: nobody stops and no
        // structure change is ever recorded (boundary arrivals aside).
        assert!(
            tr.events.iter().all(|e| e.from == e.to),
            "unexpected transitions: {:?}",
            tr.events
        );
        match tr.status {
            RunStatus::Terminated { t } => assert!((t - 2.0).abs() < 1e-6),
            ref s => panic!("expected termination, got {s:?}"),
        }
    }

    #[test]
    fn start_delays_hold_trains() {
        let p = TrainsParams { t1: 2.0, t2: 5.0, s: 1.0, ..TrainsParams::default() };
        let net = build_trains(&p);
        let tr = integrate(&net, initial_state(&net, &p, None), &cfg(20.0));

        for (name, expect) in [
            ("hold2", 2.0),        // train 1 released, train 2 still held
            ("alpha1_hold2", 3.0), // train 1 reaches P, waits; train 2 held
            ("alpha1", 5.0),       // train 2 released
            ("beta", 6.0),         // train 2 reaches P
            ("empty", 7.0),        // joint threshold met
        ] {
            let ts: Vec<f64> = times_entering(&tr, &net, name).collect();
            assert_eq!(ts.len(), 1, "{name}: {:?}", tr.events);
            assert!((ts[0] - expect).abs() < 1e-6, "{name} at {} != {expect}", ts[0]);
        }
        let sched = p.schedule();
        assert!((sched.completion() - 8.0).abs() < 1e-12);
        match tr.status {
            RunStatus::Terminated { t } => assert!((t - 8.0).abs() < 1e-6),
            ref s => panic!("expected termination, got {s:?}"),
        }
    }

    #[test]
    fn trip_time_monotone_in_thresholds() {
        // The closed-form schedule against brute-force integration over a
        // 27-point threshold grid; monotonicity in each threshold.
        let grid = [0.0, 0.7, 1.5];
        let mut trip = [[[0.0f64; 3]; 3]; 3];
        for (i, &s) in grid.iter().enumerate() {
            for (j, &s1) in grid.iter().enumerate() {
                for (k, &s2) in grid.iter().enumerate() {
                    let p = TrainsParams { b: 2.0, s, s1, s2, ..TrainsParams::default() };
                    let net = build_trains(&p);
                    let tr = integrate(&net, initial_state(&net, &p, None), &cfg(30.0));
                    let t_done = match tr.status {
                        RunStatus::Terminated { t } => t,
                        ref st => panic!("({s},{s1},{s2}): expected termination, got {st:?}"),
                    };
                    let oracle = p.schedule().completion();
                    assert!(
                        (t_done - oracle).abs() < 1e-6,
                        "({s},{s1},{s2}): simulated {t_done} vs oracle {oracle}"
                    );
                    trip[i][j][k] = t_done;
                }
            }
        }
        // Equal-oracle entries may differ by a couple of localization
        // widths (eps_loc per run), so allow that much inversion.
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    if i > 0 {
                        assert!(
                            trip[i][j][k] >= trip[i - 1][j][k] - 5e-9,
                            "s: {} < {}",
                            trip[i][j][k],
                            trip[i - 1][j][k]
                        );
                    }
                    if j > 0 {
                        assert!(
                            trip[i][j][k] >= trip[i][j - 1][k] - 5e-9,
                            "s1: {} < {}",
                            trip[i][j][k],
                            trip[i][j - 1][k]
                        );
                    }
                    if k > 0 {
                        assert!(
                            trip[i][j][k] >= trip[i][j][k - 1] - 5e-9,
                            "s2: {} < {}",
                            trip[i][j][k],
                            trip[i][j][k - 1]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn oscillators_hold_until_synchronized() {
        let p = TrainsParams { s: 0.0, ..TrainsParams::default() };
        let q = OscillatorParams::default();
        let net = build_trains_oscillators(&p, &q);
        // 0.2 turns apart: must synchronize to within 0.1 turns, then leave.
        let th = (0.2 * std::f64::consts::TAU, 0.0);
        let tr = integrate(&net, initial_state(&net, &p, Some(th)), &cfg(100.0));
        let t_beta: Vec<f64> = times_entering(&tr, &net, "beta").collect();
        assert_eq!(t_beta.len(), 1);
        let t_rel: Vec<f64> = times_entering(&tr, &net, "empty").collect();
        assert_eq!(t_rel.len(), 1, "{:?}", tr.events);
        assert!(t_rel[0] > t_beta[0]);
        assert!(matches!(tr.status, RunStatus::Terminated { .. }), "{:?}", tr.status);

        // Release time oracle: psi' = -2 kc sin psi from psi0 = 0.2 turns
        // down to eps = 0.1 turns, via separation of variables:
        // t = (1/2kc) ln(tan(psi0/2)/tan(eps/2)), after the t=1 arrival.
        let psi0 = 0.2 * std::f64::consts::TAU;
        let eps = 0.1 * std::f64::consts::TAU;
        let t_oracle = 1.0
            + ((psi0 / 2.0).tan() / (eps / 2.0).tan()).ln() / (2.0 * q.kc);
        assert!(
            (t_rel[0] - t_oracle).abs() < 1e-3,
            "release at {} vs oracle {t_oracle}",
            t_rel[0]
        );
    }

    #[test]
    fn antipodal_phases_never_release() {
        let p = TrainsParams { s: 0.0, ..TrainsParams::default() };
        let q = OscillatorParams::default();
        let net = build_trains_oscillators(&p, &q);
        let th = (std::f64::consts::PI, 0.0);
        // The antipodal difference is an unstable equilibrium of the
        // coupled phase dynamics: roundoff (sin pi ~ 1e-16) seeds
        // exponential escape at rate 2*kc, so "held forever" is only
        // observable while 1e-14 * e^(2 kc t) stays far below the release
        // tolerance — t = 25 leaves orders of magnitude of margin.
        let tr = integrate(&net, initial_state(&net, &p, Some(th)), &cfg(25.0));
        assert!(matches!(tr.status, RunStatus::Completed), "{:?}", tr.status);
        assert_eq!(net.structure_name(tr.final_alpha), "beta");
        let (x, _) = tr.state_at(25.0).unwrap();
        // Drift of ~1e-13 * e^t ~ 3e-3 by t=25; release would need the
        // difference to fall by pi - eps_sync ~ 2.5 rad.
        assert!(
            (crate::expr::circ_dist(x[1], x[3]) - std::f64::consts::PI).abs() < 0.05,
            "phase difference drifted: {}",
            crate::expr::circ_dist(x[1], x[3])
        );
    }

    #[test]
    fn zero_threshold_variant_is_clock_free() {
        let p = TrainsParams { s: 0.0, ..TrainsParams::default() };
        let net = build_trains_zero_threshold(&p);
        assert_eq!(net.clock_count(), 0);
        assert_eq!(net.dim(), 2);
        assert_eq!(net.structure_count(), 3);
        let tr = integrate(&net, initial_state(&net, &p, None), &cfg(10.0));
        assert!(matches!(tr.status, RunStatus::Terminated { .. }));
    }
}
