//! Passing-loop comparison: the clock-free stopping network on the wedge
//! `x1 <= 0 <= x2` against its sliding-mode representation on the plane.
//!
//! The reference system assigns a smooth field to each closed quadrant —
//! `(-v1, v2)` on the `++` quadrant, `(v1, -v2)` on `--`, `(v1, v2)` on the
//! other two — and resolves the axes with the standard piecewise-smooth
//! conventions: where both neighboring fields point at an axis, the flow
//! slides along it with the unique convex combination tangent to the axis;
//! where both cross, the flow passes through; the origin carries `(v1, v2)`.
//! On the wedge the two systems agree; started inside the `++` quadrant the
//! reference produces reversal paths that no admissible field of the
//! network can generate. The construction is hard-coded for this example
//! (constant speeds `v1 > 0 > v2`), not a general sliding-mode engine.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::integrator::{integrate, IntegratorConfig};
use crate::models::trains::{build_trains_zero_threshold, TrainsParams};
use crate::network::Network;

/// Parameters of the comparison pair. `a`, `b` bound the network's track
/// interval `[-a, b]`; speeds are constant with `v1 > 0 > v2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilippovParams {
    pub a: f64,
    pub b: f64,
    pub v1: f64,
    pub v2: f64,
}

impl Default for FilippovParams {
    fn default() -> Self {
        // Large enough that nothing started on the wedge reaches the track
        // ends within the comparison horizon.
        FilippovParams { a: 4.0, b: 4.0, v1: 1.0, v2: -1.0 }
    }
}

impl FilippovParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return Err(format!("track bounds must be positive, got a={} b={}", self.a, self.b));
        }
        if !(self.v1 > 0.0 && self.v1.is_finite()) {
            return Err(format!("v1 must be positive, got {}", self.v1));
        }
        if !(self.v2 < 0.0 && self.v2.is_finite()) {
            return Err(format!("v2 must be negative, got {}", self.v2));
        }
        Ok(())
    }

    fn trains(&self) -> TrainsParams {
        TrainsParams {
            a: self.a,
            b: self.b,
            v1: self.v1,
            v2: self.v2,
            s: 0.0,
            s1: 0.0,
            s2: 0.0,
            t1: 0.0,
            t2: 0.0,
        }
    }
}

/// The clock-free network side of the comparison.
pub fn reference_network(p: &FilippovParams) -> Network {
    p.validate().expect("invalid comparison parameters");
    build_trains_zero_threshold(&p.trains())
}

/// Coordinates this close to an axis are snapped onto it between segments.
const SNAP: f64 = 1e-12;

/// The exact piecewise-linear semiflow of the sliding-mode system. Constant
/// speeds make every segment linear, so evaluation is event-to-event
/// arithmetic with no integration error.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceFlow {
    v1: f64,
    v2: f64,
}

impl ReferenceFlow {
    pub fn new(p: &FilippovParams) -> Self {
        p.validate().expect("invalid comparison parameters");
        ReferenceFlow { v1: p.v1, v2: p.v2 }
    }

    /// The governing field at `x` together with the time until the segment
    /// it starts there ends (`None` = unbounded).
    fn segment(&self, x: [f64; 2]) -> ([f64; 2], Option<f64>) {
        let (v1, v2) = (self.v1, self.v2);
        let [x1, x2] = x;
        if x1 == 0.0 && x2 > 0.0 {
            // Both neighbors point at the axis: slide down to the origin.
            return ([0.0, v2], Some(x2 / -v2));
        }
        if x2 == 0.0 && x1 < 0.0 {
            // Slide right along the track to the origin.
            return ([v1, 0.0], Some(-x1 / v1));
        }
        if x1 < 0.0 && x2 > 0.0 {
            // Approach quadrant: first axis hit ends the segment.
            return ([v1, v2], Some((-x1 / v1).min(x2 / -v2)));
        }
        if x1 > 0.0 && x2 > 0.0 {
            // Reversal quadrant: x1 runs backwards toward the axis.
            return ([-v1, v2], Some((x1 / v1).min(x2 / -v2)));
        }
        if x1 < 0.0 && x2 < 0.0 {
            // Mirror reversal: x2 runs backwards.
            return ([v1, -v2], Some((-x1 / v1).min(-x2 / -v2)));
        }
        // Exit quadrant (x1 >= 0, x2 <= 0, origin included): both
        // coordinates move away from the axes forever. Points on the axis
        // edges here are crossing points, already governed by this field.
        ([v1, v2], None)
    }

    /// The state `t` time units after `x0` (forward semiflow; `t >= 0`).
    pub fn at(&self, x0: [f64; 2], t: f64) -> [f64; 2] {
        assert!(t >= 0.0, "reference flow is forward-only");
        let mut x = x0;
        let mut left = t;
        loop {
            let (f, horizon) = self.segment(x);
            let dt = match horizon {
                Some(h) if h < left => h,
                _ => {
                    return [x[0] + left * f[0], x[1] + left * f[1]];
                }
            };
            x = [x[0] + dt * f[0], x[1] + dt * f[1]];
            for c in &mut x {
                if c.abs() < SNAP {
                    *c = 0.0;
                }
            }
            left -= dt;
        }
    }
}

/// Deviation of one initialization: the largest coordinatewise gap over the
/// grid and where it occurred.
#[derive(Debug, Clone, Copy)]
pub struct InitDeviation {
    pub x0: [f64; 2],
    pub sup: f64,
    pub at_t: f64,
}

/// Result of [`compare`].
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub horizon: f64,
    pub grid_points: usize,
    pub per_init: Vec<InitDeviation>,
    /// Largest deviation over all initializations.
    pub sup_deviation: f64,
}

/// Comparison horizon and grid resolution.
pub const HORIZON: f64 = 3.0;
pub const GRID_POINTS: usize = 301;

/// Simulate the network and evaluate the reference flow from `n_inits`
/// random initializations on the wedge `x1 <= 0 <= x2`, reporting the
/// sup-norm deviation over a uniform time grid on `[0, HORIZON]`.
pub fn compare(p: &FilippovParams, n_inits: usize, seed: u64) -> ComparisonReport {
    p.validate().expect("invalid comparison parameters");
    if HORIZON * p.v1 > p.b || HORIZON * -p.v2 > p.a {
        log::warn!(
            "track [-{}, {}] may clip the comparison: a trajectory can reach an \
             end within the horizon, where the network freezes but the plane \
             system keeps moving",
            p.a,
            p.b
        );
    }
    let net = reference_network(p);
    let flow = ReferenceFlow::new(p);
    let cfg = IntegratorConfig::default().with_t_max(HORIZON);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut per_init = Vec::with_capacity(n_inits);
    let mut sup_deviation = 0.0f64;
    for _ in 0..n_inits {
        let x0 = [rng.random_range(-p.a..=0.0), rng.random_range(0.0..=p.b)];
        let state = net
            .initial_state(0.0, x0.to_vec())
            .expect("wedge point lies in the track box");
        let tr = integrate(&net, state, &cfg);
        assert!(!tr.status.is_error(), "network run failed: {:?}", tr.status);

        let mut worst = InitDeviation { x0, sup: 0.0, at_t: 0.0 };
        for k in 0..GRID_POINTS {
            let t = HORIZON * k as f64 / (GRID_POINTS - 1) as f64;
            let net_x = match tr.state_at(t) {
                Some((x, _)) => x,
                None => tr.final_state.x.clone(), // frozen at the track end
            };
            let ref_x = flow.at(x0, t);
            let dev = (net_x[0] - ref_x[0]).abs().max((net_x[1] - ref_x[1]).abs());
            if dev > worst.sup {
                worst = InitDeviation { x0, sup: dev, at_t: t };
            }
        }
        sup_deviation = sup_deviation.max(worst.sup);
        per_init.push(worst);
    }
    ComparisonReport {
        horizon: HORIZON,
        grid_points: GRID_POINTS,
        per_init,
        sup_deviation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::AlphaId;
    use crate::integrator::EventCause;

    fn flow() -> ReferenceFlow {
        ReferenceFlow::new(&FilippovParams::default())
    }

    /// Hand-derived corner path from (-1, 2): approach until t=1, slide on
    /// the positive x2-axis until t=2, exit diagonally.
    #[test]
    fn reference_flow_traces_the_corner_path() {
        let f = flow();
        let cases = [
            (0.0, [-1.0, 2.0]),
            (0.5, [-0.5, 1.5]),
            (1.0, [0.0, 1.0]),
            (1.5, [0.0, 0.5]),
            (2.0, [0.0, 0.0]),
            (2.5, [0.5, -0.5]),
            (3.0, [1.0, -1.0]),
        ];
        for (t, want) in cases {
            let got = f.at([-1.0, 2.0], t);
            assert!(
                (got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12,
                "t={t}: got {got:?}, want {want:?}"
            );
        }
    }

    /// Simultaneous arrival at the loop: both systems pass straight
    /// through, and the network records no stop at all.
    #[test]
    fn simultaneous_arrival_stops_neither_train() {
        let p = FilippovParams::default();
        let net = reference_network(&p);
        let state = net.initial_state(0.0, vec![-1.0, 1.0]).unwrap();
        let tr = integrate(&net, state, &IntegratorConfig::default().with_t_max(HORIZON));
        assert!(!tr.status.is_error());
        let stops: Vec<_> = tr
            .events
            .iter()
            .filter(|e| matches!(e.cause, EventCause::Guard { .. }) && e.from != e.to)
            .collect();
        assert!(stops.is_empty(), "unexpected stops: {stops:?}");
        let f = flow();
        for k in 0..=30 {
            let t = 0.1 * k as f64;
            let (x, _) = tr.state_at(t).unwrap();
            let r = f.at([-1.0, 1.0], t);
            assert!((x[0] - r[0]).abs() < 1e-9 && (x[1] - r[1]).abs() < 1e-9);
        }
    }

    /// The acceptance comparison at reduced sample count: the two systems
    /// agree on the wedge to well under the grid tolerance.
    #[test]
    fn network_matches_reference_on_the_wedge() {
        let report = compare(&FilippovParams::default(), 5, 11);
        assert_eq!(report.grid_points, 301);
        assert!(
            report.sup_deviation < 1e-4,
            "sup deviation {} at {:?}",
            report.sup_deviation,
            report
                .per_init
                .iter()
                .max_by(|a, b| a.sup.total_cmp(&b.sup))
        );
    }

    /// Started inside the ++ quadrant the reference reverses the first
    /// train — a path no admissible field allows, since every structure
    /// gives the first coordinate a nonnegative component.
    #[test]
    fn reversal_artifact_cannot_come_from_the_network() {
        let p = FilippovParams::default();
        let f = ReferenceFlow::new(&p);
        let x0 = [1.0, 2.0];
        let half = f.at(x0, 0.5);
        let one = f.at(x0, 1.0);
        assert!(half[0] < x0[0] && one[0] < half[0], "x1 must run backwards");
        assert_eq!(one, [0.0, 1.0]);

        // Every admissible field moves train 1 forward or not at all, so x1
        // is nondecreasing along any network trajectory.
        let net = reference_network(&p);
        let mut dx = vec![0.0; 2];
        let mut dtau = vec![];
        for alpha in 0..net.structure_count() {
            for x in [[-1.0, 2.0], [0.0, 1.0], [1.0, -1.0], [0.5, 0.5]] {
                let st = net.initial_state(0.0, x.to_vec()).unwrap();
                net.eval_field(AlphaId(alpha), &st, &mut dx, &mut dtau).unwrap();
                assert!(dx[0] >= 0.0, "structure {alpha} reverses train 1 at {x:?}");
            }
        }

        // And the network started at the same point diverges immediately.
        let st = net.initial_state(0.0, x0.to_vec()).unwrap();
        let tr = integrate(&net, st, &IntegratorConfig::default().with_t_max(1.0));
        let (x, _) = tr.state_at(1.0).unwrap();
        assert!((x[0] - one[0]).abs() > 1.0);
    }
}
